mod common;

use std::sync::{Arc, Mutex};

use tablemind::agent::episode::FORCED_ANSWER_NOTICE;
use tablemind::agent::{
    batch_run, run_episode, BackendError, BackendResponse, EpisodeConfig, EpisodeError, Message, PolicyBackend,
    PromptTemplate, Role, SamplingParams, ScriptedBackend, ScriptedFixture, ScriptedStep,
};
use tablemind::exec::{MockExecutor, SandboxConfig, SandboxExecutor, TRUNCATION_MARKER};
use tablemind::jsonl;
use tablemind::model::{Table, TableTask, TaskKind};

use common::*;

/// Wraps a backend and keeps a copy of every history it was shown.
struct Recording {
    inner: ScriptedBackend,
    seen: Arc<Mutex<Vec<Vec<Message>>>>,
}

impl PolicyBackend for Recording {
    fn respond(&mut self, history: &[Message], params: &SamplingParams) -> Result<BackendResponse, BackendError> {
        self.seen.lock().unwrap().push(history.to_vec());
        self.inner.respond(history, params)
    }
}

fn cfg(max_turns: usize) -> EpisodeConfig {
    EpisodeConfig { max_turns, ..Default::default() }
}

fn steps(texts: &[&str]) -> Vec<ScriptedStep> {
    texts.iter().map(|t| ScriptedStep::from(*t)).collect()
}

#[test]
fn immediate_answer_uses_no_tools() {
    let mut b = ScriptedBackend::new(steps(&["<think>easy</think><answer>{\"answer\": \"192\"}</answer>"]));
    let t = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap();
    assert_eq!(t.n_tool_turns, 0);
    assert_eq!(t.turns.len(), 1);
    assert!(t.format_valid);
    assert_eq!(t.final_answer.as_deref(), Some("192"));
}

#[test]
fn single_action_variant_of_the_time_case() {
    let mut b = ScriptedBackend::new(steps(&[
        "<think>Convert and subtract.</think>\n```python\ntime_diff(Time, 2, 0)\n```",
        "<think>192 seconds.</think>\n<answer>{\"answer\": \"192\"}</answer>",
    ]));
    let t = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap();
    assert_eq!(t.n_tool_turns, 1);
    assert!(t.any_tool_success);
    assert_eq!(t.turns[0].observation.as_ref().unwrap().stdout.trim(), "192");
    assert_eq!(t.turns[0].reflection, "192 seconds.");
    assert_eq!(t.final_answer.as_deref(), Some("192"));
}

#[test]
fn full_time_case_records_plan_action_reflection() {
    let mut b = ScriptedBackend::new(time_script());
    let t = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap();
    assert_eq!(t.n_tool_turns, 2);
    assert!(t.turns[0].observation.as_ref().unwrap().stdout.contains("1:36.119"));
    assert!(t.turns[0].reflection.contains("Convert both to seconds"));
    assert_eq!(t.turns[1].action.as_deref(), Some("time_diff(Time, 2, 0)"));
    assert!(t.format_valid);
}

#[test]
fn action_cap_forces_an_answer_only_turn() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let mut b = Recording { inner: ScriptedBackend::new(action_forever(10)), seen: seen.clone() };
    let t = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap();
    assert_eq!(t.n_tool_turns, 3);
    assert_eq!(t.turns.len(), 4);
    assert!(t.turns[3].action.is_none() && t.turns[3].observation.is_none());
    assert!(!t.format_valid);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 4);
    let last = seen[3].last().unwrap();
    assert_eq!(last.role, Role::Observation);
    assert!(last.content.ends_with(FORCED_ANSWER_NOTICE));
    assert!(!seen[2].last().unwrap().content.contains(FORCED_ANSWER_NOTICE));
}

#[test]
fn conversation_only_grows() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let mut b = Recording { inner: ScriptedBackend::new(time_script()), seen: seen.clone() };
    run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    for pair in seen.windows(2) {
        assert_eq!(pair[1].len(), pair[0].len() + 2);
        assert_eq!(&pair[1][..pair[0].len()], &pair[0][..]);
        assert_eq!(pair[1][pair[0].len()].role, Role::Assistant);
        assert_eq!(pair[1][pair[0].len() + 1].role, Role::Observation);
    }
}

#[test]
fn long_observations_are_truncated() {
    let mut b = ScriptedBackend::new(steps(&[
        "<think>look</think>\n```python\ncells(Athlete)\n```",
        "<think>done</think><answer>{\"answer\": \"x\"}</answer>",
    ]));
    let c = EpisodeConfig { observation_truncate_bytes: 8, ..cfg(3) };
    let t = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &c).unwrap();
    let out = &t.turns[0].observation.as_ref().unwrap().stdout;
    assert!(out.ends_with(TRUNCATION_MARKER), "{out:?}");
    assert!(out.len() <= 8 + TRUNCATION_MARKER.len());
}

#[test]
fn malformed_output_ends_the_episode() {
    let mut b = ScriptedBackend::new(steps(&["I refuse to use tags", "<answer>{\"answer\": \"1\"}</answer>"]));
    let t = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap();
    assert_eq!(t.turns.len(), 1);
    assert_eq!(t.final_answer, None);
    assert!(!t.format_valid);
    assert_eq!(b.remaining(), 1);
}

#[test]
fn exhausted_backend_aborts_with_partial_trajectory() {
    let mut b = ScriptedBackend::new(action_forever(1));
    let err = run_episode(&time_task(), &PromptTemplate::default(), &mut b, &mut MockExecutor::new(), &cfg(3)).unwrap_err();
    assert!(matches!(err, EpisodeError::BackendUnavailable { .. }));
    let t = err.into_trajectory("time-diff");
    assert_eq!(t.turns.len(), 1);
    assert!(t.incomplete.is_some());
}

fn sum_tasks(n: usize) -> Vec<TableTask> {
    (0..n)
        .map(|i| {
            let table = Table::from_strs(&["v"], &[&[&i.to_string()], &["10"]]).unwrap();
            TableTask::new(format!("t{i:02}"), table, "What is the total of v?", vec![(i + 10).to_string()], TaskKind::QuestionAnswering)
                .unwrap()
        })
        .collect()
}

fn sum_fixture(tasks: &[TableTask]) -> ScriptedFixture {
    let lines: Vec<String> = tasks
        .iter()
        .map(|t| {
            serde_json::json!({
                "task_id": t.id,
                "responses": [
                    {"text": "<think>add</think>\n```python\nsum(v)\n```"},
                    {"text": format!("<think>ok</think><answer>{{\"answer\": \"{}\"}}</answer>", t.gold[0])},
                ]
            })
            .to_string()
        })
        .collect();
    ScriptedFixture::from_jsonl(&lines.join("\n")).unwrap()
}

#[test]
fn batch_of_correct_scripts_scores_perfectly_and_replays_identically() {
    let tasks = sum_tasks(10);
    let fixture = sum_fixture(&tasks);
    let go = |par| {
        batch_run(
            &tasks,
            &PromptTemplate::default(),
            |t| Ok(fixture.backend_for(&t.id)),
            || Ok::<_, String>(MockExecutor::new()),
            &cfg(3),
            par,
        )
        .unwrap()
    };
    let a = go(4);
    let b = go(1);
    assert_eq!(a.summary.exact_match, 1.0);
    assert_eq!(a.summary.tool_calls_ratio, 1.0);
    assert_eq!(a.summary.pass_ratio, Some(1.0));
    assert!(a.failures.is_empty());
    assert_eq!(jsonl::to_string(&a.trajectories).unwrap(), jsonl::to_string(&b.trajectories).unwrap());
    let ids: Vec<&str> = a.trajectories.iter().map(|t| t.task_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn empty_fixture_fails_every_task_without_crashing() {
    let tasks = sum_tasks(3);
    let fixture = ScriptedFixture::from_jsonl("").unwrap();
    let out = batch_run(
        &tasks,
        &PromptTemplate::default(),
        |t| Ok(fixture.backend_for(&t.id)),
        || Ok::<_, String>(MockExecutor::new()),
        &cfg(3),
        2,
    )
    .unwrap();
    assert_eq!(out.failures.len(), 3);
    assert_eq!(out.trajectories.len(), 3);
    assert!(out.trajectories.iter().all(|t| t.incomplete.is_some()));
    assert_eq!(out.summary.exact_match, 0.0);
}

#[test]
fn unavailable_executor_is_recorded_per_task() {
    let tasks = sum_tasks(2);
    let fixture = sum_fixture(&tasks);
    let out = batch_run(
        &tasks,
        &PromptTemplate::default(),
        |t| Ok(fixture.backend_for(&t.id)),
        || {
            Ok::<_, String>(SandboxExecutor::new(SandboxConfig {
                command: vec!["/nonexistent/worker".into()],
                client_grace_ms: 10,
            }))
        },
        &cfg(3),
        2,
    )
    .unwrap();
    assert_eq!(out.failures.len(), 2);
    assert!(out.failures.iter().all(|f| f.message.contains("spawn")), "{:?}", out.failures);
}

#[test]
fn empty_dataset_is_an_error() {
    let out = batch_run(
        &[],
        &PromptTemplate::default(),
        |_| Ok(ScriptedBackend::new(vec![])),
        || Ok::<_, String>(MockExecutor::new()),
        &cfg(3),
        1,
    );
    assert!(out.is_err());
}
