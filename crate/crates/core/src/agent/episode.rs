//! The plan → action → execution → reflection loop, one task at a time or
//! over a whole dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{BackendError, Message, PolicyBackend, Role, SamplingParams};
use super::parse::{parse_step, StepKind};
use super::prompt::{render_prompt, PromptError, PromptTemplate};
use crate::eval::{summarize, MetricsError, MetricsSummary};
use crate::exec::{truncate_output, CodeExecutor, ExecutorError};
use crate::model::{ExecRequest, ExecResult, TablePayload, TableTask, Trajectory, Turn};
use crate::reward::format_reward;

/// Appended to the last observation once the tool-turn budget is spent.
pub const FORCED_ANSWER_NOTICE: &str =
    "The tool budget is exhausted. Reply with your final answer inside <answer>...</answer> now.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    pub temperature: f64,
    pub max_response_tokens_per_turn: usize,
    pub observation_truncate_bytes: usize,
    pub exec_timeout_ms: u64,
    pub max_output_bytes: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_turns: 3,
            temperature: 1.0,
            max_response_tokens_per_turn: 2048,
            observation_truncate_bytes: 4096,
            exec_timeout_ms: 10_000,
            max_output_bytes: 65_536,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.max_turns == 0 {
            return Err(EpisodeError::InvalidConfig("max_turns must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(EpisodeError::InvalidConfig(format!("temperature {} is invalid", self.temperature)));
        }
        if self.max_response_tokens_per_turn == 0 {
            return Err(EpisodeError::InvalidConfig("max_response_tokens_per_turn must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("backend unavailable: {message}")]
    BackendUnavailable { message: String, trajectory: Box<Trajectory> },
    #[error("executor unavailable: {message}")]
    ExecutorUnavailable { message: String, trajectory: Box<Trajectory> },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
}

impl EpisodeError {
    /// The partial trajectory of an aborted episode, marked incomplete.
    pub fn trajectory(&self) -> Option<&Trajectory> {
        match self {
            Self::BackendUnavailable { trajectory, .. } | Self::ExecutorUnavailable { trajectory, .. } => {
                Some(trajectory)
            }
            _ => None,
        }
    }

    /// A trajectory for the record, built from scratch when the episode never started.
    pub fn into_trajectory(self, task_id: &str) -> Trajectory {
        match self {
            Self::BackendUnavailable { trajectory, .. } | Self::ExecutorUnavailable { trajectory, .. } => *trajectory,
            other => {
                let mut t = Trajectory::new(task_id);
                t.incomplete = Some(other.to_string());
                t
            }
        }
    }
}

/// Text the model sees for one execution.
pub fn observation_text(result: &ExecResult) -> String {
    let mut body = String::new();
    if !result.stdout.is_empty() {
        body.push_str(&result.stdout);
    }
    if !result.stderr.is_empty() {
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        body.push_str(&result.stderr);
    }
    let status = serde_json::to_value(result.status).ok().and_then(|v| v.as_str().map(str::to_owned));
    format!("<observation status=\"{}\">\n{}\n</observation>", status.unwrap_or_default(), body.trim_end())
}

fn finish(traj: &mut Trajectory) {
    traj.refresh_tool_stats();
    traj.format_valid = format_reward(traj) == 1.0;
}

fn abort(mut traj: Trajectory, message: String, backend: bool) -> EpisodeError {
    traj.refresh_tool_stats();
    traj.format_valid = false;
    traj.incomplete = Some(message.clone());
    let trajectory = Box::new(traj);
    if backend {
        EpisodeError::BackendUnavailable { message, trajectory }
    } else {
        EpisodeError::ExecutorUnavailable { message, trajectory }
    }
}

/// Runs one episode. Ends on a final answer, on malformed output, or after
/// `max_turns` tool turns plus one answer-only completion.
pub fn run_episode(
    task: &TableTask,
    template: &PromptTemplate,
    backend: &mut dyn PolicyBackend,
    executor: &mut dyn CodeExecutor,
    cfg: &EpisodeConfig,
) -> Result<Trajectory, EpisodeError> {
    cfg.validate()?;
    let prompt = render_prompt(template, task)?;
    let params = SamplingParams { temperature: cfg.temperature, max_tokens: cfg.max_response_tokens_per_turn };
    let payload = TablePayload::from(&task.table);
    let mut history = vec![Message::new(Role::User, prompt)];
    let mut traj = Trajectory::new(task.id.clone());
    let mut tool_turns = 0usize;

    loop {
        let response = match backend.respond(&history, &params) {
            Ok(r) => r,
            Err(BackendError::Unavailable(m)) => return Err(abort(traj, m, true)),
            Err(e @ BackendError::Exhausted(_)) => return Err(abort(traj, e.to_string(), true)),
        };
        traj.tokens.extend(response.tokens);
        let parsed = parse_step(&response.text);
        let think = parsed.think_text.clone().unwrap_or_default();
        if let Some(prev) = traj.turns.last_mut() {
            prev.reflection = think.clone();
        }
        history.push(Message::new(Role::Assistant, response.text.clone()));
        let mut turn = Turn { plan: think, action: None, observation: None, reflection: String::new(), response: response.text };

        match parsed.kind {
            StepKind::Action(code) if tool_turns < cfg.max_turns => {
                let req = ExecRequest {
                    id: format!("{}#{}", task.id, tool_turns),
                    code: code.clone(),
                    table: payload.clone(),
                    timeout_ms: cfg.exec_timeout_ms,
                    max_output_bytes: cfg.max_output_bytes,
                };
                turn.action = Some(code);
                let mut result = match executor.execute(&req) {
                    Ok(r) => r,
                    Err(e) => {
                        let message = match e {
                            ExecutorError::Unavailable(m) => m,
                            other => other.to_string(),
                        };
                        traj.turns.push(turn);
                        return Err(abort(traj, message, false));
                    }
                };
                result.stdout = truncate_output(&result.stdout, cfg.observation_truncate_bytes);
                result.stderr = truncate_output(&result.stderr, cfg.observation_truncate_bytes);
                tool_turns += 1;
                let mut obs = observation_text(&result);
                if tool_turns == cfg.max_turns {
                    obs.push('\n');
                    obs.push_str(FORCED_ANSWER_NOTICE);
                }
                turn.observation = Some(result);
                traj.turns.push(turn);
                history.push(Message::new(Role::Observation, obs));
            }
            StepKind::Final(_) => {
                traj.final_answer = parsed.answer_text();
                traj.turns.push(turn);
                break;
            }
            // Malformed output, or code offered when only an answer is allowed.
            _ => {
                traj.turns.push(turn);
                break;
            }
        }
    }
    finish(&mut traj);
    Ok(traj)
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Config(#[from] EpisodeError),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// One trajectory per task, ordered by task id; failed tasks carry `incomplete`.
    pub trajectories: Vec<Trajectory>,
    pub summary: MetricsSummary,
    pub failures: Vec<TaskFailure>,
}

/// Runs every task on a pool of `parallelism` workers. Each episode gets its
/// own backend and executor from the factories.
pub fn batch_run<B, E, FB, FE>(
    dataset: &[TableTask],
    template: &PromptTemplate,
    backend_for: FB,
    executor_for: FE,
    cfg: &EpisodeConfig,
    parallelism: usize,
) -> Result<BatchOutput, BatchError>
where
    B: PolicyBackend,
    E: CodeExecutor,
    FB: Fn(&TableTask) -> Result<B, BackendError> + Sync,
    FE: Fn() -> Result<E, String> + Sync,
{
    if dataset.is_empty() {
        return Err(BatchError::EmptyDataset);
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| BatchError::Pool(e.to_string()))?;

    // Each task yields a trajectory, plus the failure message when it was aborted.
    let one = |task: &TableTask| -> (Trajectory, Option<String>) {
        let backend = backend_for(task).map_err(|e| format!("backend unavailable: {e}"));
        let executor = executor_for().map_err(|e| format!("executor unavailable: {e}"));
        let (mut backend, mut executor) = match (backend, executor) {
            (Ok(b), Ok(e)) => (b, e),
            (Err(msg), _) | (_, Err(msg)) => return (incomplete(&task.id, &msg), Some(msg)),
        };
        match run_episode(task, template, &mut backend, &mut executor, cfg) {
            Ok(t) => (t, None),
            Err(e) => {
                let msg = e.to_string();
                (e.into_trajectory(&task.id), Some(msg))
            }
        }
    };

    let results: Vec<(Trajectory, Option<String>)> = pool.install(|| dataset.par_iter().map(one).collect());

    let mut trajectories = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (t, failure) in results {
        if let Some(message) = failure {
            log::warn!("task {} failed: {message}", t.task_id);
            failures.push(TaskFailure { task_id: t.task_id.clone(), message });
        }
        trajectories.push(t);
    }
    trajectories.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    failures.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let summary = summarize(&trajectories, dataset)?;
    Ok(BatchOutput { trajectories, summary, failures })
}

fn incomplete(task_id: &str, message: &str) -> Trajectory {
    let mut t = Trajectory::new(task_id);
    t.incomplete = Some(message.to_string());
    t
}
