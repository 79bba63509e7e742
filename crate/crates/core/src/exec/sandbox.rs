//! Client for the out-of-process sandbox worker.
//!
//! The worker speaks newline-delimited JSON over stdio: one `ExecRequest` per
//! line in, one `ExecResult` per line out, in order.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CodeExecutor, ExecutorError};
use crate::model::{ExecRequest, ExecResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    /// Worker program and arguments, e.g. `["python3", "sandbox_worker.py"]`.
    pub command: Vec<String>,
    /// Added to each request's own deadline before the client gives up.
    pub client_grace_ms: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            command: vec!["python3".into(), "sandbox_worker.py".into()],
            client_grace_ms: 5_000,
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// One worker process per executor; spawned on first use and respawned after
/// a transport failure.
pub struct SandboxExecutor {
    cfg: SandboxConfig,
    worker: Option<Worker>,
}

impl SandboxExecutor {
    pub fn new(cfg: SandboxConfig) -> Self {
        Self { cfg, worker: None }
    }

    fn spawn(&self) -> Result<Worker, ExecutorError> {
        let (program, args) = self
            .cfg
            .command
            .split_first()
            .ok_or_else(|| ExecutorError::Unavailable("empty worker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ExecutorError::Unavailable(format!("failed to spawn {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker { child, stdin, lines: rx })
    }

    fn roundtrip(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecutorError> {
        if self.worker.is_none() {
            self.worker = Some(self.spawn()?);
        }
        let worker = self.worker.as_mut().expect("worker spawned");
        let mut line = serde_json::to_string(req).map_err(|e| ExecutorError::Protocol(e.to_string()))?;
        line.push('\n');
        worker
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| worker.stdin.flush())
            .map_err(|e| ExecutorError::Unavailable(format!("worker stdin closed: {e}")))?;
        let wait = Duration::from_millis(req.timeout_ms + self.cfg.client_grace_ms);
        let reply = match worker.lines.recv_timeout(wait) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(ExecutorError::Unavailable(format!("worker stdout failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(ExecutorError::Unavailable(format!("worker silent for {} ms", wait.as_millis())))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ExecutorError::Unavailable("worker exited".into()))
            }
        };
        let result: ExecResult = serde_json::from_str(&reply)
            .map_err(|e| ExecutorError::Protocol(format!("bad result line {reply:?}: {e}")))?;
        if result.id != req.id {
            return Err(ExecutorError::Protocol(format!(
                "result id {:?} does not echo request id {:?}",
                result.id, req.id
            )));
        }
        Ok(result)
    }

    fn shutdown(&mut self) {
        if let Some(mut w) = self.worker.take() {
            let _ = w.child.kill();
            let _ = w.child.wait();
        }
    }
}

impl CodeExecutor for SandboxExecutor {
    fn execute(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecutorError> {
        let out = self.roundtrip(req);
        if out.is_err() {
            // Drop a worker in an unknown state; the next call respawns.
            self.shutdown();
        }
        out
    }
}

impl Drop for SandboxExecutor {
    fn drop(&mut self) {
        self.shutdown();
    }
}
