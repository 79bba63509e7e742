//! A tiny table-program language: `op(arg, ...)` over one table.
//!
//! | op                          | result                                    |
//! |-----------------------------|-------------------------------------------|
//! | `sum(col)`                  | sum of the numeric column                 |
//! | `max(col)` / `min(col)`     | extreme of the numeric column             |
//! | `count_gt(col, x)`          | rows whose value is strictly above `x`    |
//! | `lookup(col, row)`          | cell at zero-based `row`                  |
//! | `cells(col)`                | all cells joined with `|`                 |
//! | `time_diff(col, a, b)`      | seconds between `[h:]m:s[.fff]` cells     |
//!
//! Columns are header names (optionally quoted) or `#i` indices.

use std::fmt;

use crate::eval::format_number;
use crate::model::TablePayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Sum,
    Max,
    Min,
    CountGt,
    Lookup,
    Cells,
    TimeDiff,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Sum => "sum",
            Op::Max => "max",
            Op::Min => "min",
            Op::CountGt => "count_gt",
            Op::Lookup => "lookup",
            Op::Cells => "cells",
            Op::TimeDiff => "time_diff",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sum" => Op::Sum,
            "max" => Op::Max,
            "min" => Op::Min,
            "count_gt" => Op::CountGt,
            "lookup" => Op::Lookup,
            "cells" => Op::Cells,
            "time_diff" => Op::TimeDiff,
            _ => return None,
        })
    }

    /// Number of arguments, the column included.
    pub fn arity(self) -> usize {
        match self {
            Op::Sum | Op::Max | Op::Min | Op::Cells => 1,
            Op::CountGt | Op::Lookup => 2,
            Op::TimeDiff => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProgramError {
    Syntax(String),
    UnknownOp(String),
    Arity { op: &'static str, expected: usize, got: usize },
    UnknownColumn(String),
    Value(String),
    Index(String),
}

impl fmt::Display for ProgramError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Syntax(m) => write!(f, "SyntaxError: {m}"),
            Self::UnknownOp(op) => write!(f, "NameError: unknown operation {op:?}"),
            Self::Arity { op, expected, got } => {
                write!(f, "ArityError: {op} expects {expected} argument(s), got {got}")
            }
            Self::UnknownColumn(c) => write!(f, "KeyError: no column {c:?}"),
            Self::Value(m) => write!(f, "ValueError: {m}"),
            Self::Index(m) => write!(f, "IndexError: {m}"),
        }
    }
}

impl std::error::Error for ProgramError {}

/// A parsed but not yet validated call.
#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub op: Op,
    pub args: Vec<String>,
}

pub fn parse(code: &str) -> Result<Call, ProgramError> {
    let code = code.trim();
    let open = code.find('(').ok_or_else(|| ProgramError::Syntax("expected op(args)".into()))?;
    if !code.ends_with(')') {
        return Err(ProgramError::Syntax("missing closing parenthesis".into()));
    }
    let name = code[..open].trim();
    let op = Op::from_name(name).ok_or_else(|| ProgramError::UnknownOp(name.to_string()))?;
    let inner = code[open + 1..code.len() - 1].trim();
    let args = if inner.is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(|a| unquote(a.trim()).to_string()).collect()
    };
    Ok(Call { op, args })
}

fn unquote(s: &str) -> &str {
    for q in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

fn resolve_column(table: &TablePayload, arg: &str) -> Result<usize, ProgramError> {
    if let Some(idx) = arg.strip_prefix('#') {
        let i: usize = idx.parse().map_err(|_| ProgramError::UnknownColumn(arg.to_string()))?;
        return (i < table.header.len()).then_some(i).ok_or_else(|| ProgramError::UnknownColumn(arg.to_string()));
    }
    table
        .header
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(arg))
        .ok_or_else(|| ProgramError::UnknownColumn(arg.to_string()))
}

fn number(cell: &str) -> Result<f64, ProgramError> {
    let cleaned: String = cell.trim().chars().filter(|c| *c != ',').collect();
    cleaned
        .parse::<f64>()
        .map_err(|_| ProgramError::Value(format!("could not convert {cell:?} to a number")))
}

fn row_index(table: &TablePayload, arg: &str) -> Result<usize, ProgramError> {
    let i: usize = arg
        .parse()
        .map_err(|_| ProgramError::Value(format!("row index {arg:?} is not a non-negative integer")))?;
    if i >= table.rows.len() {
        return Err(ProgramError::Index(format!("row {i} out of range for {} rows", table.rows.len())));
    }
    Ok(i)
}

/// Parses `[h:]m:s[.fff]` into seconds.
pub fn parse_duration(cell: &str) -> Result<f64, ProgramError> {
    let err = || ProgramError::Value(format!("time data {cell:?} does not match [h:]m:s[.fff]"));
    let parts: Vec<&str> = cell.trim().split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(err());
    }
    let mut seconds = 0.0;
    for p in &parts {
        let v: f64 = p.parse().map_err(|_| err())?;
        seconds = seconds * 60.0 + v;
    }
    Ok(seconds)
}

/// Runs `code` against `table`, returning what the program prints.
pub fn run(code: &str, table: &TablePayload) -> Result<String, ProgramError> {
    let call = parse(code)?;
    if call.args.len() != call.op.arity() {
        return Err(ProgramError::Arity { op: call.op.name(), expected: call.op.arity(), got: call.args.len() });
    }
    let col = resolve_column(table, &call.args[0])?;
    let cells = || table.rows.iter().map(move |r| r[col].as_str());
    let values = || cells().map(number).collect::<Result<Vec<f64>, _>>();
    let out = match call.op {
        Op::Sum => format_number(values()?.iter().sum()),
        Op::Max | Op::Min => {
            let vs = values()?;
            if vs.is_empty() {
                return Err(ProgramError::Value(format!("{}() arg is an empty sequence", call.op.name())));
            }
            let pick = if call.op == Op::Max { f64::max } else { f64::min };
            format_number(vs.iter().copied().reduce(pick).unwrap())
        }
        Op::CountGt => {
            let threshold = number(&call.args[1])?;
            let n = values()?.iter().filter(|v| **v > threshold).count();
            n.to_string()
        }
        Op::Lookup => table.rows[row_index(table, &call.args[1])?][col].clone(),
        Op::Cells => cells().collect::<Vec<_>>().join("|"),
        Op::TimeDiff => {
            let a = parse_duration(&table.rows[row_index(table, &call.args[1])?][col])?;
            let b = parse_duration(&table.rows[row_index(table, &call.args[2])?][col])?;
            format_number(((a - b) * 1e6).round() / 1e6)
        }
    };
    Ok(out)
}
