//! Desk-scale training lab: synthetic tasks, a toy policy and the RAPO/GRPO loop.

pub mod policy;
pub mod rollout;
pub mod task;
pub mod train;

pub use policy::{decode_tokens, PolicyView, ToyAction, ToyOp, ToyPolicy};
pub use rollout::{decode, rollout, score_group};
pub use task::{default_suite, generate, generate_task, QuestionFamily, SpecError, SuiteConfig, SyntheticTask, SyntheticTaskSpec};
pub use train::{
    compare_modes, greedy_accuracy, reward_auc, tail_tool_calls_ratio, train, train_on, write_metrics_csv,
    ComparisonReport, SeedComparison, StepMetrics, TrainError, TrainOutput, TrainRunConfig, METRICS_COLUMNS,
};
