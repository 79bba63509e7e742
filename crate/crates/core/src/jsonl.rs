//! UTF-8 JSON-lines readers and writers for datasets and trajectories.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[source] serde_json::Error),
}

/// Parses one value per non-blank line.
pub fn read_from<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|source| JsonlError::Parse { line: i + 1, source })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_path<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    read_from(BufReader::new(File::open(path)?))
}

pub fn write_to<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<(), JsonlError> {
    for item in items {
        let line = serde_json::to_string(item).map_err(JsonlError::Serialize)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_path<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), JsonlError> {
    write_to(BufWriter::new(File::create(path)?), items)
}

/// Serializes to an in-memory JSONL string.
pub fn to_string<T: Serialize>(items: &[T]) -> Result<String, JsonlError> {
    let mut buf = Vec::new();
    write_to(&mut buf, items)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
