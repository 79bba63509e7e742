//! Deterministic synthetic table tasks with brute-force gold answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::format_number;
use crate::model::{ModelError, Table, TableTask, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionFamily {
    ColumnSum,
    ColumnMax,
    CountWhere,
    CellLookup,
}

impl QuestionFamily {
    pub const ALL: [QuestionFamily; 4] =
        [QuestionFamily::ColumnSum, QuestionFamily::ColumnMax, QuestionFamily::CountWhere, QuestionFamily::CellLookup];

    pub fn index(self) -> usize {
        match self {
            Self::ColumnSum => 0,
            Self::ColumnMax => 1,
            Self::CountWhere => 2,
            Self::CellLookup => 3,
        }
    }

    /// Whether questions of this family carry a numeric parameter
    /// (threshold or row index).
    pub fn has_param(self) -> bool {
        matches!(self, Self::CountWhere | Self::CellLookup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Inclusive value interval.
    pub value_range: (i64, i64),
    pub question_family: QuestionFamily,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("invalid synthetic task spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(SpecError::Invalid("tables need at least one row and one column".into()));
        }
        if self.value_range.0 > self.value_range.1 {
            return Err(SpecError::Invalid(format!("empty value range {:?}", self.value_range)));
        }
        Ok(())
    }
}

/// Header name of column `j`.
pub fn column_name(j: usize) -> String {
    format!("c{j}")
}

/// A generated task plus the structure the toy policy conditions on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub task: TableTask,
    pub family: QuestionFamily,
    pub target_col: usize,
    /// Threshold for `CountWhere`, zero-based row for `CellLookup`.
    pub param: Option<i64>,
    pub values: Vec<Vec<i64>>,
}

impl SyntheticTask {
    /// Builds a task over an explicit integer table; the gold answer is
    /// computed by brute force.
    pub fn from_values(
        id: impl Into<String>,
        values: Vec<Vec<i64>>,
        family: QuestionFamily,
        target_col: usize,
        param: Option<i64>,
    ) -> Result<Self, SpecError> {
        let n_cols = values.first().map_or(0, Vec::len);
        if values.is_empty() || n_cols == 0 {
            return Err(SpecError::Invalid("table is empty".into()));
        }
        if target_col >= n_cols {
            return Err(SpecError::Invalid(format!("target column {target_col} out of range")));
        }
        if family.has_param() != param.is_some() {
            return Err(SpecError::Invalid(format!("{family:?} parameter mismatch: {param:?}")));
        }
        if family == QuestionFamily::CellLookup {
            let row = param.unwrap_or(0);
            if row < 0 || row as usize >= values.len() {
                return Err(SpecError::Invalid(format!("lookup row {row} out of range")));
            }
        }
        let header: Vec<String> = (0..n_cols).map(column_name).collect();
        let rows: Vec<Vec<String>> = values.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect();
        let table = Table::new(header, rows, None)?;
        let col = column_name(target_col);
        let question = match (family, param) {
            (QuestionFamily::ColumnSum, _) => format!("What is the sum of {col}?"),
            (QuestionFamily::ColumnMax, _) => format!("What is the largest value in {col}?"),
            (QuestionFamily::CountWhere, Some(t)) => format!("How many rows have {col} greater than {t}?"),
            (QuestionFamily::CellLookup, Some(r)) => format!("What is {col} at row index {r}?"),
            _ => unreachable!("parameter presence checked above"),
        };
        let gold = oracle_answer(&values, family, target_col, param);
        let task = TableTask::new(id, table, question, vec![gold], TaskKind::QuestionAnswering)?;
        Ok(Self { task, family, target_col, param, values })
    }

    /// The program in the executor language that answers this task.
    pub fn gold_program(&self) -> String {
        let col = column_name(self.target_col);
        match (self.family, self.param) {
            (QuestionFamily::ColumnSum, _) => format!("sum({col})"),
            (QuestionFamily::ColumnMax, _) => format!("max({col})"),
            (QuestionFamily::CountWhere, Some(t)) => format!("count_gt({col}, {t})"),
            (QuestionFamily::CellLookup, Some(r)) => format!("lookup({col}, {r})"),
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn gold(&self) -> &str {
        &self.task.gold[0]
    }
}

/// Brute-force answer over the raw integer table.
pub fn oracle_answer(values: &[Vec<i64>], family: QuestionFamily, col: usize, param: Option<i64>) -> String {
    let column = values.iter().map(|r| r[col]);
    match family {
        QuestionFamily::ColumnSum => format_number(column.sum::<i64>() as f64),
        QuestionFamily::ColumnMax => column.max().map(|v| v.to_string()).unwrap_or_default(),
        QuestionFamily::CountWhere => {
            let t = param.unwrap_or(0);
            column.filter(|v| *v > t).count().to_string()
        }
        QuestionFamily::CellLookup => values[param.unwrap_or(0) as usize][col].to_string(),
    }
}

/// A pure function of the spec: same spec, same task.
pub fn generate(spec: &SyntheticTaskSpec, id: impl Into<String>) -> Result<SyntheticTask, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.value_range;
    let values: Vec<Vec<i64>> =
        (0..spec.n_rows).map(|_| (0..spec.n_cols).map(|_| rng.gen_range(lo..=hi)).collect()).collect();
    let target_col = rng.gen_range(0..spec.n_cols);
    let param = match spec.question_family {
        QuestionFamily::CountWhere => Some(rng.gen_range(lo..=hi)),
        QuestionFamily::CellLookup => Some(rng.gen_range(0..spec.n_rows) as i64),
        _ => None,
    };
    SyntheticTask::from_values(id, values, spec.question_family, target_col, param)
}

pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<TableTask, SpecError> {
    generate(spec, format!("syn-{}", spec.seed)).map(|t| t.task)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub n_tasks: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub value_range: (i64, i64),
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { n_tasks: 50, n_rows: 5, n_cols: 3, value_range: (0, 20), seed: 0 }
    }
}

/// The benchmark suite: families assigned round-robin, one derived seed per task.
pub fn default_suite(cfg: &SuiteConfig) -> Result<Vec<SyntheticTask>, SpecError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_tasks)
        .map(|k| {
            let spec = SyntheticTaskSpec {
                n_rows: cfg.n_rows,
                n_cols: cfg.n_cols,
                value_range: cfg.value_range,
                question_family: QuestionFamily::ALL[k % QuestionFamily::ALL.len()],
                seed: rng.gen(),
            };
            generate(&spec, format!("syn-{:03}", k))
        })
        .collect()
}
