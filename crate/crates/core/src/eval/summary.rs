use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::normalize::answer_correct;
use crate::model::{ExecStatus, TableTask, TaskKind, Trajectory};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no trajectories to summarize")]
    EmptyInput,
    #[error("trajectory references unknown task id {0:?}")]
    UnknownTaskId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n_tasks: usize,
    pub n_qa: usize,
    pub n_fact: usize,
    /// Exact-match rate over question-answering tasks (0 when there are none).
    pub exact_match: f64,
    /// Label accuracy over fact-verification tasks (0 when there are none).
    pub accuracy: f64,
    pub tool_calls_ratio: f64,
    /// Ok executions over all executions; `None` when nothing was executed.
    pub pass_ratio: Option<f64>,
    pub mean_turns: f64,
}

/// Execution counts across a set of trajectories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ToolCounts {
    pub trajectories: usize,
    pub with_tool_call: usize,
    pub executions: usize,
    pub ok_executions: usize,
}

impl ToolCounts {
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut c = Self::default();
        for t in trajs {
            c.trajectories += 1;
            if t.n_tool_turns >= 1 {
                c.with_tool_call += 1;
            }
            for e in t.executions() {
                c.executions += 1;
                if e.status == ExecStatus::Ok {
                    c.ok_executions += 1;
                }
            }
        }
        c
    }

    pub fn tool_calls_ratio(&self) -> f64 {
        if self.trajectories == 0 {
            0.0
        } else {
            self.with_tool_call as f64 / self.trajectories as f64
        }
    }

    pub fn pass_ratio(&self) -> Option<f64> {
        (self.executions > 0).then(|| self.ok_executions as f64 / self.executions as f64)
    }
}

pub fn summarize(trajectories: &[Trajectory], dataset: &[TableTask]) -> Result<MetricsSummary, MetricsError> {
    if trajectories.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let by_id: HashMap<&str, &TableTask> = dataset.iter().map(|t| (t.id.as_str(), t)).collect();
    let (mut n_qa, mut n_fact, mut qa_hits, mut fact_hits) = (0usize, 0usize, 0usize, 0usize);
    let mut turns = 0usize;
    for traj in trajectories {
        let task = by_id
            .get(traj.task_id.as_str())
            .ok_or_else(|| MetricsError::UnknownTaskId(traj.task_id.clone()))?;
        let hit = usize::from(answer_correct(task, traj.final_answer.as_deref()));
        match task.kind {
            TaskKind::QuestionAnswering => {
                n_qa += 1;
                qa_hits += hit;
            }
            TaskKind::FactVerification => {
                n_fact += 1;
                fact_hits += hit;
            }
        }
        turns += traj.n_tool_turns;
    }
    let ratio = |hits: usize, n: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
    let counts = ToolCounts::from_trajectories(trajectories);
    Ok(MetricsSummary {
        n_tasks: trajectories.len(),
        n_qa,
        n_fact,
        exact_match: ratio(qa_hits, n_qa),
        accuracy: ratio(fact_hits, n_fact),
        tool_calls_ratio: counts.tool_calls_ratio(),
        pass_ratio: counts.pass_ratio(),
        mean_turns: turns as f64 / trajectories.len() as f64,
    })
}
