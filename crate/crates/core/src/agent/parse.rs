//! Classification of raw model responses into actions, final answers or
//! malformed output.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::eval::format_number;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const FENCE: &str = "```";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepKind {
    Action(String),
    Final(Map<String, Value>),
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedStep {
    pub kind: StepKind,
    pub think_text: Option<String>,
}

impl ParsedStep {
    /// Answer string carried by a `Final` step.
    pub fn answer_text(&self) -> Option<String> {
        match &self.kind {
            StepKind::Final(obj) => answer_text(obj),
            _ => None,
        }
    }
}

/// Never fails: anything that is neither a final answer nor an action is `Malformed`.
pub fn parse_step(response: &str) -> ParsedStep {
    let think_text = think_block(response).map(|s| s.trim().to_string());
    let kind = if let Some(obj) = answer_object(response) {
        StepKind::Final(obj)
    } else if let Some(code) = fenced_code(response) {
        StepKind::Action(code)
    } else {
        StepKind::Malformed(response.to_string())
    };
    ParsedStep { kind, think_text }
}

fn think_block(text: &str) -> Option<&str> {
    let start = text.find(THINK_OPEN)? + THINK_OPEN.len();
    let len = text[start..].find(THINK_CLOSE)?;
    Some(&text[start..start + len])
}

/// Payloads of every `<answer>…</answer>` block, in order.
fn answer_blocks(text: &str) -> impl Iterator<Item = &str> + '_ {
    let mut rest = text;
    std::iter::from_fn(move || {
        let start = rest.find(ANSWER_OPEN)? + ANSWER_OPEN.len();
        let len = rest[start..].find(ANSWER_CLOSE)?;
        let payload = &rest[start..start + len];
        rest = &rest[start + len + ANSWER_CLOSE.len()..];
        Some(payload)
    })
}

fn answer_object(text: &str) -> Option<Map<String, Value>> {
    answer_blocks(text).find_map(|payload| match serde_json::from_str::<Value>(payload.trim()) {
        Ok(Value::Object(obj)) => Some(obj),
        _ => None,
    })
}

fn fenced_code(text: &str) -> Option<String> {
    let open = text.find(FENCE)? + FENCE.len();
    let after = &text[open..];
    // Skip an optional language tag on the fence line.
    let body_start = match after.find('\n') {
        Some(nl) if !after[..nl].contains(FENCE) => nl + 1,
        _ => 0,
    };
    let body = &after[body_start..];
    let close = body.find(FENCE)?;
    let code = body[..close].trim_end_matches(['\n', '\r']);
    Some(code.to_string())
}

/// Grammar check used by the format reward. A well-formed turn has a think
/// block; a final turn must also carry an answer block with a JSON object.
pub fn response_format_ok(response: &str, is_final: bool) -> bool {
    if think_block(response).is_none() {
        return false;
    }
    !is_final || answer_object(response).is_some()
}

/// Extracts the answer from a final JSON object: the `answer` key when present,
/// otherwise the sole value of a one-key object. Arrays join with `|`.
pub fn answer_text(obj: &Map<String, Value>) -> Option<String> {
    let value = match obj.get("answer") {
        Some(v) => v,
        None if obj.len() == 1 => obj.values().next()?,
        None => return None,
    };
    value_text(value)
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => n.as_f64().map(format_number),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(value_text).collect();
            parts.map(|p| p.join("|"))
        }
        Value::Null | Value::Object(_) => None,
    }
}
