//! Turning sampled toy programs into scored multi-turn trajectories.

use rand::Rng;
use serde_json::json;

use super::policy::{ToyAction, ToyOp, ToyPolicy};
use super::task::{column_name, SyntheticTask};
use crate::exec::{CodeExecutor, MockExecutor};
use crate::model::{ExecRequest, RolloutGroup, TablePayload, TokenRecord, Trajectory, Turn};
use crate::reward::{format_reward, score, RewardConfig};
use crate::scalar::Scalar;

const EXEC_TIMEOUT_MS: u64 = 1_000;
const MAX_OUTPUT_BYTES: usize = 4_096;

/// Program text for a tool call. The task's parameter fills the second
/// argument; without one the call has the wrong arity and fails.
pub fn program_text(action: ToyAction, task: &SyntheticTask) -> String {
    let col = column_name(action.col);
    match (action.op.needs_param(), task.param) {
        (true, Some(p)) => format!("{}({col}, {p})", action.op.name()),
        _ => format!("{}({col})", action.op.name()),
    }
}

/// What the policy answers without running code: lookups read the addressed
/// cell, every other operation guesses the first cell of the column.
pub fn direct_answer(action: ToyAction, task: &SyntheticTask) -> Option<String> {
    let table = &task.task.table;
    if action.col >= table.n_cols() {
        return None;
    }
    match action.op {
        ToyOp::Lookup => {
            let row = usize::try_from(task.param?).ok()?;
            table.rows.get(row).map(|r| r[action.col].clone())
        }
        ToyOp::CountGt if task.param.is_none() => None,
        _ => table.rows.first().map(|r| r[action.col].clone()),
    }
}

fn answer_response(think: &str, value: &str) -> String {
    format!("<think>{think}</think>\n<answer>{}</answer>", json!({ "answer": value }))
}

/// Builds the trajectory an action produces on a task. Tool calls run in the
/// in-process executor; `tokens` are the sampled action tokens.
pub fn decode(
    task: &SyntheticTask,
    action: ToyAction,
    tokens: Vec<TokenRecord>,
    executor: &mut dyn CodeExecutor,
) -> Trajectory {
    let mut traj = Trajectory::new(task.task.id.clone());
    traj.tokens = tokens;
    let col = column_name(action.col);
    if action.use_tool {
        let code = program_text(action, task);
        let plan = format!("Run {} on {col}.", action.op.name());
        let req = ExecRequest {
            id: format!("{}#0", task.task.id),
            code: code.clone(),
            table: TablePayload::from(&task.task.table),
            timeout_ms: EXEC_TIMEOUT_MS,
            max_output_bytes: MAX_OUTPUT_BYTES,
        };
        let result = executor.execute(&req).unwrap_or_else(|e| crate::model::ExecResult::error(req.id.clone(), e.to_string()));
        let (reflection, second) = if result.is_success() {
            let value = result.stdout.trim().to_string();
            let think = format!("The program printed {value}.");
            traj.final_answer = Some(value.clone());
            (think.clone(), Some(answer_response(&think, &value)))
        } else {
            let first = result.stderr.lines().next().unwrap_or("no output").to_string();
            (format!("The program failed: {first}"), None)
        };
        traj.turns.push(Turn {
            response: format!("<think>{plan}</think>\n```python\n{code}\n```"),
            plan,
            action: Some(code),
            observation: Some(result),
            reflection: reflection.clone(),
        });
        traj.turns.push(Turn {
            response: second.unwrap_or_else(|| format!("<think>{reflection}</think>")),
            plan: reflection,
            action: None,
            observation: None,
            reflection: String::new(),
        });
    } else {
        let plan = format!("Answer {} on {col} directly.", action.op.name());
        let response = match direct_answer(action, task) {
            Some(v) => {
                traj.final_answer = Some(v.clone());
                answer_response(&plan, &v)
            }
            None => format!("<think>{plan}</think>"),
        };
        traj.turns.push(Turn { plan, action: None, observation: None, reflection: String::new(), response });
    }
    traj.refresh_tool_stats();
    traj.format_valid = format_reward(&traj) == 1.0;
    traj
}

/// Samples `group_size` trajectories for one task at `temperature`.
pub fn rollout<T: Scalar, R: Rng + ?Sized>(
    policy: &ToyPolicy<T>,
    task: &SyntheticTask,
    group_size: usize,
    temperature: T,
    rng: &mut R,
) -> RolloutGroup {
    let ctx = policy.context_of(task);
    let mut executor = MockExecutor::new();
    let trajectories = (0..group_size)
        .map(|_| {
            let (action, lps) = policy.sample(ctx, temperature, rng);
            let tokens = action
                .token_ids()
                .iter()
                .zip(lps)
                .map(|(&token_id, lp)| TokenRecord { token_id, logprob_old: lp.as_f64() })
                .collect();
            decode(task, action, tokens, &mut executor)
        })
        .collect();
    RolloutGroup { query_id: task.task.id.clone(), trajectories, step: 0 }
}

/// Fills every trajectory's reward at global step `step`.
pub fn score_group(group: &mut RolloutGroup, task: &SyntheticTask, step: u64, cfg: &RewardConfig) {
    group.step = step;
    for t in &mut group.trajectories {
        t.reward = Some(score(t, &task.task, step, cfg));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::task::QuestionFamily;
    use crate::model::validate_group;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn count_task() -> SyntheticTask {
        let values = vec![vec![3, 1], vec![12, 9], vec![15, 0]];
        SyntheticTask::from_values("cw", values, QuestionFamily::CountWhere, 0, Some(10)).unwrap()
    }

    #[test]
    fn programs() {
        let t = count_task();
        let a = |op, col| ToyAction { use_tool: true, op, col };
        assert_eq!(program_text(a(ToyOp::CountGt, 0), &t), "count_gt(c0, 10)");
        assert_eq!(program_text(a(ToyOp::Sum, 1), &t), "sum(c1)");
        let s = SyntheticTask::from_values("s", vec![vec![1]], QuestionFamily::ColumnSum, 0, None).unwrap();
        assert_eq!(program_text(a(ToyOp::Lookup, 0), &s), "lookup(c0)");
    }

    #[test]
    fn correct_tool_call_scores_two_point_four_nine() {
        let t = count_task();
        let action = ToyAction { use_tool: true, op: ToyOp::CountGt, col: 0 };
        let toks = vec![TokenRecord { token_id: 0, logprob_old: 0.0 }; 3];
        let mut g = RolloutGroup {
            query_id: "cw".into(),
            trajectories: vec![decode(&t, action, toks, &mut MockExecutor::new())],
            step: 0,
        };
        score_group(&mut g, &t, 0, &RewardConfig::default());
        let tr = &g.trajectories[0];
        assert_eq!(tr.final_answer.as_deref(), Some("2"));
        assert!(tr.format_valid && tr.any_tool_success);
        assert!((tr.total_reward().unwrap() - 2.49).abs() < 1e-12);
    }

    #[test]
    fn failing_call_has_no_answer() {
        let s = SyntheticTask::from_values("s", vec![vec![1]], QuestionFamily::ColumnSum, 0, None).unwrap();
        let action = ToyAction { use_tool: true, op: ToyOp::Lookup, col: 0 };
        let tr = decode(&s, action, vec![], &mut MockExecutor::new());
        assert_eq!(tr.n_tool_turns, 1);
        assert!(!tr.any_tool_success && !tr.format_valid);
        assert_eq!(tr.final_answer, None);
        assert!(tr.turns[0].observation.as_ref().unwrap().stderr.starts_with("ArityError"));
    }

    #[test]
    fn direct_answers() {
        let t = count_task();
        let a = |op, col| ToyAction { use_tool: false, op, col };
        assert_eq!(direct_answer(a(ToyOp::Sum, 1), &t).as_deref(), Some("1"));
        assert_eq!(direct_answer(a(ToyOp::Lookup, 0), &t), None);
        let l = SyntheticTask::from_values("l", vec![vec![4], vec![8]], QuestionFamily::CellLookup, 0, Some(1)).unwrap();
        let tr = decode(&l, a(ToyOp::Lookup, 0), vec![], &mut MockExecutor::new());
        assert_eq!(tr.final_answer.as_deref(), Some("8"));
        assert!(tr.format_valid);
        assert_eq!(tr.n_tool_turns, 0);
    }

    #[test]
    fn rollout_is_seed_deterministic_and_valid() {
        let p = ToyPolicy::<f64>::uniform(2, 1.0);
        let t = count_task();
        let a = rollout(&p, &t, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let b = rollout(&p, &t, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(validate_group(&a).is_empty(), "{:?}", validate_group(&a));
        let uniform = -(2f64.ln() + 4f64.ln() + 2f64.ln()) / 3.0;
        for tr in &a.trajectories {
            let mean = tr.tokens.iter().map(|t| t.logprob_old).sum::<f64>() / 3.0;
            assert!((mean - uniform).abs() < 1e-12);
        }
    }
}
