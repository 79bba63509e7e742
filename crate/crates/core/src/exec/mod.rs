//! Code execution backends for agent actions.

pub mod program;
mod sandbox;

use std::collections::HashMap;
use std::time::Instant;

pub use sandbox::{SandboxConfig, SandboxExecutor};

use crate::model::{ExecRequest, ExecResult, ExecStatus, TablePayload};

pub const TRUNCATION_MARKER: &str = "[truncated]";

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("executor unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Turns one request into exactly one result. Failing code is an
/// `ExecResult` with a non-ok status; `Err` means the executor itself is gone.
pub trait CodeExecutor: Send {
    fn execute(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecutorError>;
}

impl<E: CodeExecutor + ?Sized> CodeExecutor for Box<E> {
    fn execute(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecutorError> {
        (**self).execute(req)
    }
}

/// Truncates to at most `max_bytes` (on a char boundary) and appends the marker.
pub fn truncate_output(s: &str, max_bytes: usize) -> String {
    if s.len() <= max_bytes {
        return s.to_string();
    }
    let mut cut = max_bytes;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}{TRUNCATION_MARKER}", &s[..cut])
}

/// In-process interpreter for the table-program language in [`program`],
/// with optional canned outputs for replaying recorded episodes.
#[derive(Debug, Clone, Default)]
pub struct MockExecutor {
    canned: HashMap<String, ExecOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecOutcome {
    Stdout(String),
    Stderr(String),
}

impl MockExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answers `code` (compared after trimming) with a fixed outcome.
    pub fn with_canned(mut self, code: &str, outcome: ExecOutcome) -> Self {
        self.canned.insert(code.trim().to_string(), outcome);
        self
    }

    /// Runs code against a table without building a request.
    pub fn run(&self, code: &str, table: &TablePayload) -> ExecOutcome {
        if let Some(hit) = self.canned.get(code.trim()) {
            return hit.clone();
        }
        match program::run(code, table) {
            Ok(out) => ExecOutcome::Stdout(format!("{out}\n")),
            Err(e) => ExecOutcome::Stderr(e.to_string()),
        }
    }
}

impl CodeExecutor for MockExecutor {
    fn execute(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecutorError> {
        let start = Instant::now();
        let (status, stdout, stderr) = match self.run(&req.code, &req.table) {
            ExecOutcome::Stdout(s) => (ExecStatus::Ok, s, String::new()),
            ExecOutcome::Stderr(e) => (ExecStatus::Error, String::new(), e),
        };
        Ok(ExecResult {
            id: req.id.clone(),
            status,
            stdout: truncate_output(&stdout, req.max_output_bytes),
            stderr: truncate_output(&stderr, req.max_output_bytes),
            duration_ms: start.elapsed().as_millis() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(code: &str, max: usize) -> ExecRequest {
        ExecRequest {
            id: "r1".into(),
            code: code.into(),
            table: TablePayload { header: vec!["x".into()], rows: vec![vec!["4".into()], vec!["5".into()]] },
            timeout_ms: 1000,
            max_output_bytes: max,
        }
    }

    #[test]
    fn mock_runs_programs() {
        let mut ex = MockExecutor::new();
        let r = ex.execute(&req("sum(x)", 100)).unwrap();
        assert_eq!((r.status, r.stdout.as_str(), r.id.as_str()), (ExecStatus::Ok, "9\n", "r1"));
        let r = ex.execute(&req("sum()", 100)).unwrap();
        assert_eq!(r.status, ExecStatus::Error);
        assert!(r.stderr.contains("ArityError"));
    }

    #[test]
    fn canned_outputs_take_precedence() {
        let mut ex = MockExecutor::new().with_canned("print(1+1)", ExecOutcome::Stdout("2\n".into()));
        assert_eq!(ex.execute(&req(" print(1+1) ", 100)).unwrap().stdout, "2\n");
    }

    #[test]
    fn truncation_is_exact() {
        let long = "a".repeat(10_000);
        let t = truncate_output(&long, 4096);
        assert_eq!(t.len(), 4096 + TRUNCATION_MARKER.len());
        assert!(t.ends_with(TRUNCATION_MARKER));
        assert_eq!(truncate_output("short", 4096), "short");
        // never splits a multi-byte char
        let t = truncate_output("ééé", 3);
        assert_eq!(t, format!("é{TRUNCATION_MARKER}"));
    }
}
