//! Answer normalization, exact-match scoring, aggregate metrics and run reports.

mod normalize;
mod report;
mod summary;

pub use normalize::{
    answer_correct, exact_match, format_number, normalize, normalize_label, NormalizedAnswer,
    NUMERIC_TOLERANCE,
};
pub use report::{report, Report, ReportError, RUN_ID_COLUMN};
pub use summary::{summarize, MetricsError, MetricsSummary, ToolCounts};
