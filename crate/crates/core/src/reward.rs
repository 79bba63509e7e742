//! Multi-objective trajectory reward: format, accuracy and a decaying
//! tool-interaction term.
//!
//! ```text
//! R_tool = exp(-rho * s) * (beta * I_success - C * N_turns^2)
//! total  = R_format + R_acc + R_tool
//! ```
//!
//! `s` is the global training step, so early training pays for successful tool
//! use while the quadratic turn penalty and the decay push towards economical
//! tool calls later on.

use serde::{Deserialize, Serialize};

use crate::agent::parse::response_format_ok;
use crate::eval::answer_correct;
use crate::model::{TableTask, Trajectory};

pub use crate::model::RewardBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Decay rate of the tool term per global step.
    pub rho: f64,
    /// Bonus for at least one successful tool call.
    pub beta: f64,
    /// Quadratic penalty coefficient on the number of tool turns.
    pub c_penalty: f64,
    /// Ablation switch: when false the tool term is always zero.
    pub enable_tool_reward: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { rho: 0.05, beta: 0.5, c_penalty: 0.01, enable_tool_reward: true }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid reward config: {0}")]
pub struct RewardConfigError(String);

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        for (name, v) in [("rho", self.rho), ("beta", self.beta), ("c_penalty", self.c_penalty)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RewardConfigError(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// 1 when every turn wraps its reasoning in think tags and the final turn
/// carries an answer block holding a JSON object.
pub fn format_reward(traj: &Trajectory) -> f64 {
    let Some((last, earlier)) = traj.turns.split_last() else {
        return 0.0;
    };
    let ok = earlier.iter().all(|t| response_format_ok(&t.response, false))
        && response_format_ok(&last.response, true);
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Exact match (QA) or label accuracy (fact verification) of the final answer.
pub fn accuracy_reward(traj: &Trajectory, task: &TableTask) -> f64 {
    if answer_correct(task, traj.final_answer.as_deref()) {
        1.0
    } else {
        0.0
    }
}

pub fn tool_reward(traj: &Trajectory, step: u64, cfg: &RewardConfig) -> f64 {
    tool_reward_from_counts(traj.any_tool_success, traj.n_tool_turns, step, cfg)
}

/// The tool term evaluated on raw trajectory features.
pub fn tool_reward_from_counts(success: bool, n_turns: usize, step: u64, cfg: &RewardConfig) -> f64 {
    if !cfg.enable_tool_reward {
        return 0.0;
    }
    let indicator = if success { 1.0 } else { 0.0 };
    let n = n_turns as f64;
    (-cfg.rho * step as f64).exp() * (cfg.beta * indicator - cfg.c_penalty * n * n)
}

pub fn score(traj: &Trajectory, task: &TableTask, step: u64, cfg: &RewardConfig) -> RewardBreakdown {
    let r_format = format_reward(traj);
    let r_acc = accuracy_reward(traj, task);
    let r_tool = tool_reward(traj, step, cfg);
    RewardBreakdown { r_format, r_acc, r_tool, total: r_format + r_acc + r_tool }
}
