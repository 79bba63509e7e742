//! Shared data model: tables, tasks, multi-turn trajectories and rollout groups.
//!
//! Every type here is plain immutable data once built and round-trips through
//! the JSONL formats in [`crate::jsonl`].

use serde::{Deserialize, Serialize};

/// Errors raised while building or inspecting model values.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("trajectory has no sampled tokens")]
    EmptyTrajectory,
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Deserialize)]
struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    #[serde(default)]
    caption: Option<String>,
}

impl TryFrom<RawTable> for Table {
    type Error = ModelError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        Table::new(raw.header, raw.rows, raw.caption)
    }
}

impl Table {
    pub fn new(
        header: Vec<String>,
        rows: Vec<Vec<String>>,
        caption: Option<String>,
    ) -> Result<Self, ModelError> {
        if let Some(i) = header.iter().position(|h| h.trim().is_empty()) {
            return Err(ModelError::InvalidTable(format!("header {i} is blank")));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(ModelError::InvalidTable(format!(
                    "row {r} has {} cells, header has {}",
                    row.len(),
                    header.len()
                )));
            }
        }
        Ok(Self { header, rows, caption })
    }

    /// Convenience constructor from string slices.
    pub fn from_strs(header: &[&str], rows: &[&[&str]]) -> Result<Self, ModelError> {
        Self::new(
            header.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
            None,
        )
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    /// Index of the column whose header equals `name` (trimmed, case-insensitive).
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[idx].as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    QuestionAnswering,
    FactVerification,
}

/// One (table, question, answer) instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTask")]
pub struct TableTask {
    pub id: String,
    pub table: Table,
    pub question: String,
    pub gold: Vec<String>,
    pub kind: TaskKind,
}

#[derive(Deserialize)]
struct RawTask {
    id: String,
    table: Table,
    question: String,
    gold: Vec<String>,
    kind: TaskKind,
}

impl TryFrom<RawTask> for TableTask {
    type Error = ModelError;

    fn try_from(raw: RawTask) -> Result<Self, Self::Error> {
        TableTask::new(raw.id, raw.table, raw.question, raw.gold, raw.kind)
    }
}

impl TableTask {
    pub fn new(
        id: impl Into<String>,
        table: Table,
        question: impl Into<String>,
        gold: Vec<String>,
        kind: TaskKind,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        if gold.is_empty() {
            return Err(ModelError::InvalidTask(format!("task {id}: gold is empty")));
        }
        if kind == TaskKind::FactVerification
            && !(gold.len() == 1 && (gold[0] == "1" || gold[0] == "0"))
        {
            return Err(ModelError::InvalidTask(format!(
                "task {id}: fact verification gold must be a single \"1\" or \"0\" label"
            )));
        }
        Ok(Self { id, table, question: question.into(), gold, kind })
    }
}

/// A model-generated token with its log-probability under the sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_id: u32,
    pub logprob_old: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

/// Table payload carried by an execution request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TablePayload {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl From<&Table> for TablePayload {
    fn from(t: &Table) -> Self {
        Self { header: t.header.clone(), rows: t.rows.clone() }
    }
}

/// One code-execution request on the executor wire protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub id: String,
    pub code: String,
    pub table: TablePayload,
    pub timeout_ms: u64,
    pub max_output_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub id: String,
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
}

impl ExecResult {
    pub fn ok(id: impl Into<String>, stdout: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            status: ExecStatus::Ok,
            stdout: stdout.into(),
            stderr: String::new(),
            duration_ms: 0,
        }
    }

    pub fn error(id: impl Into<String>, stderr: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            status: ExecStatus::Error,
            stdout: String::new(),
            stderr: stderr.into(),
            duration_ms: 0,
        }
    }

    /// Counts toward the tool-success indicator: exited cleanly and printed something.
    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Ok && !self.stdout.trim().is_empty()
    }
}

/// One plan / action / observation / reflection cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub plan: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ExecResult>,
    #[serde(default)]
    pub reflection: String,
    /// Raw model text for this turn; the format reward inspects it.
    #[serde(default)]
    pub response: String,
}

/// Per-component reward for a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_acc: f64,
    pub r_tool: f64,
    pub total: f64,
}

/// One sampled response to a query, across all of its turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub turns: Vec<Turn>,
    /// Model-generated tokens only; tool observations carry no policy probability.
    pub tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    pub format_valid: bool,
    pub n_tool_turns: usize,
    pub any_tool_success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
    /// Set when the episode was aborted; holds the diagnostic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incomplete: Option<String>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            turns: Vec::new(),
            tokens: Vec::new(),
            final_answer: None,
            format_valid: false,
            n_tool_turns: 0,
            any_tool_success: false,
            reward: None,
            incomplete: None,
        }
    }

    /// Recomputes `n_tool_turns` and `any_tool_success` from the turns.
    pub fn refresh_tool_stats(&mut self) {
        self.n_tool_turns = self.turns.iter().filter(|t| t.action.is_some()).count();
        let success = self.executions().any(ExecResult::is_success);
        self.any_tool_success = success;
    }

    pub fn executions(&self) -> impl Iterator<Item = &ExecResult> + '_ {
        self.turns.iter().filter_map(|t| t.observation.as_ref())
    }

    pub fn total_reward(&self) -> Option<f64> {
        self.reward.map(|r| r.total)
    }
}

/// G trajectories sampled for one query at one global training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub query_id: String,
    pub trajectories: Vec<Trajectory>,
    pub step: u64,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.trajectories.iter().map(|t| t.tokens.len()).sum()
    }
}

/// Mean old-policy log-probability per token: the sequence confidence.
pub fn length_normalized_logprob(traj: &Trajectory) -> Result<f64, ModelError> {
    if traj.tokens.is_empty() {
        return Err(ModelError::EmptyTrajectory);
    }
    let sum: f64 = traj.tokens.iter().map(|t| t.logprob_old).sum();
    Ok(sum / traj.tokens.len() as f64)
}

/// Lists every invariant violation in a group. An empty list means valid.
pub fn validate_group(group: &RolloutGroup) -> Vec<String> {
    let mut report = Vec::new();
    if group.len() < 2 {
        report.push(format!("group size below 2 (got {})", group.len()));
    }
    for (i, traj) in group.trajectories.iter().enumerate() {
        if traj.task_id != group.query_id {
            report.push(format!(
                "trajectory {i}: task_id {:?} differs from query_id {:?}",
                traj.task_id, group.query_id
            ));
        }
        if traj.tokens.is_empty() {
            report.push(format!("trajectory {i}: no sampled tokens"));
        }
        if let Some(t) = traj.tokens.iter().position(|t| {
            !t.logprob_old.is_finite() || t.logprob_old > 0.0
        }) {
            report.push(format!(
                "trajectory {i}: token {t} has logprob_old {} (must be finite and <= 0)",
                traj.tokens[t].logprob_old
            ));
        }
        let actions = traj.turns.iter().filter(|t| t.action.is_some()).count();
        if actions != traj.n_tool_turns {
            report.push(format!(
                "trajectory {i}: n_tool_turns={} but {actions} turns carry an action",
                traj.n_tool_turns
            ));
        }
        if traj.any_tool_success && traj.n_tool_turns == 0 {
            report.push(format!(
                "trajectory {i}: any_tool_success is set with n_tool_turns=0"
            ));
        }
        if traj.incomplete.is_none() {
            if let Some(k) = traj
                .turns
                .iter()
                .position(|t| t.action.is_some() && t.observation.is_none())
            {
                report.push(format!("trajectory {i}: turn {k} has an action but no observation"));
            }
        }
    }
    report
}
