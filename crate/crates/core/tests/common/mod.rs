#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tablemind::agent::ScriptedStep;
use tablemind::lab::{default_suite, rollout, SuiteConfig, SyntheticTask, ToyPolicy};
use tablemind::model::{
    ExecResult, RewardBreakdown, RolloutGroup, Table, TableTask, TaskKind, TokenRecord, Trajectory, Turn,
};

pub fn suite() -> Vec<SyntheticTask> {
    default_suite(&SuiteConfig::default()).unwrap()
}

pub fn contexts(policy: &ToyPolicy<f64>, suite: &[SyntheticTask]) -> HashMap<String, usize> {
    suite.iter().map(|t| (t.task.id.clone(), policy.context_of(t))).collect()
}

pub fn with_reward(mut t: Trajectory, total: f64) -> Trajectory {
    t.reward = Some(RewardBreakdown { r_format: 0.0, r_acc: 0.0, r_tool: 0.0, total });
    t
}

/// A toy policy with logits drawn uniformly from `[-scale, scale]`.
pub fn random_policy(rng: &mut ChaCha8Rng, n_cols: usize, scale: f64) -> ToyPolicy<f64> {
    let mut p = ToyPolicy::uniform(n_cols, rng.gen_range(0.5..1.5));
    for x in &mut p.theta {
        *x = rng.gen_range(-scale..scale);
    }
    p
}

/// Groups sampled from `policy` on random suite tasks, with random rewards
/// drawn from a small set so that ties and strict pairs both occur.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    policy: &ToyPolicy<f64>,
    suite: &[SyntheticTask],
    n_groups: usize,
    group_size: usize,
) -> Vec<RolloutGroup> {
    (0..n_groups)
        .map(|_| {
            let task = &suite[rng.gen_range(0..suite.len())];
            let mut g = rollout(policy, task, group_size, policy.temperature, rng);
            for t in &mut g.trajectories {
                let total = [0.0, 0.5, 1.0, 2.0, 2.49][rng.gen_range(0..5)];
                t.reward = Some(RewardBreakdown { r_format: 0.0, r_acc: 0.0, r_tool: 0.0, total });
            }
            g
        })
        .collect()
}

/// Time-difference task: the two times sit in a text column and must be
/// parsed before subtracting.
pub fn time_task() -> TableTask {
    let table = Table::from_strs(
        &["Rank", "Athlete", "Time"],
        &[&["1", "A. Lane", "1:36.119"], &["2", "B. Ortiz", "2:10.502"], &["3", "C. Weber", "4:48.119"]],
    )
    .unwrap();
    TableTask::new(
        "time-diff",
        table,
        "How much time difference is there between the first and the last athlete, in seconds?",
        vec!["192".into()],
        TaskKind::QuestionAnswering,
    )
    .unwrap()
}

/// Plan, read the raw times, reflect that they are strings, convert and
/// subtract, then answer.
pub fn time_script() -> Vec<ScriptedStep> {
    [
        "<think>Plan: read the two time strings from the Time column.</think>\n```python\ncells(Time)\n```",
        "<think>The times are text like 1:36.119, so plain subtraction is not possible. \
         Convert both to seconds first, then take the difference.</think>\n```python\ntime_diff(Time, 2, 0)\n```",
        "<think>The difference is 192 seconds.</think>\n<answer>{\"answer\": \"192\"}</answer>",
    ]
    .iter()
    .map(|t| ScriptedStep::from(*t))
    .collect()
}

pub fn action_forever(n: usize) -> Vec<ScriptedStep> {
    (0..n).map(|i| ScriptedStep::from(format!("<think>try {i}</think>\n```python\nmax(Time)\n```").as_str())).collect()
}

pub fn tok(lp: f64) -> TokenRecord {
    TokenRecord { token_id: 0, logprob_old: lp }
}

pub fn turn_with(observation: Option<ExecResult>) -> Turn {
    Turn {
        plan: String::new(),
        action: observation.as_ref().map(|_| "x".to_string()),
        observation,
        reflection: String::new(),
        response: String::new(),
    }
}
