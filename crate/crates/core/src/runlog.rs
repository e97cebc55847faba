//! Append-only JSON-lines event log.
//!
//! Each line is one [`LogRecord`] serialized compactly with fields in the
//! order `v, run_id, round, phase, type, payload, rng_cursor`, terminated by
//! `\n`. Payload objects keep struct field order. Floats use the shortest
//! representation that round-trips. Logs contain no wall-clock data, so a
//! re-execution of the same run reproduces the file byte for byte.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Event type names.
pub mod kinds {
    pub const RUN_START: &str = "run_start";
    pub const RUN_END: &str = "run_end";
    pub const ROUND_START: &str = "round_start";
    pub const DECISION: &str = "decision";
    pub const PARSE_FAILURE: &str = "parse_failure";
    pub const FALLBACK: &str = "fallback";
    pub const ANNOUNCEMENT: &str = "announcement";
    pub const TURN: &str = "turn";
    pub const SETTLEMENT: &str = "settlement";
    pub const REPHRASE: &str = "rephrase";
    pub const POOL: &str = "persona_pool";
    pub const EMBEDDINGS: &str = "embeddings";
    pub const EPOCH_END: &str = "epoch_end";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogPhase {
    Run,
    Round,
    Test,
    Discussion,
    Settlement,
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub v: u32,
    pub run_id: String,
    pub round: u64,
    pub phase: LogPhase,
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: Value,
    pub rng_cursor: u64,
}

pub trait EventSink {
    fn emit(&mut self, phase: LogPhase, kind: &str, payload: Value, rng_cursor: u64) -> io::Result<()>;

    /// Sets the round index stamped on subsequent records.
    fn set_round(&mut self, round: u64);
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _: LogPhase, _: &str, _: Value, _: u64) -> io::Result<()> {
        Ok(())
    }
    fn set_round(&mut self, _: u64) {}
}

pub struct RunLog<W: Write> {
    writer: W,
    run_id: String,
    round: u64,
    bytes: u64,
}

impl RunLog<Vec<u8>> {
    pub fn in_memory(run_id: impl Into<String>) -> Self {
        Self::new(Vec::new(), run_id)
    }
}

impl<W: Write> RunLog<W> {
    pub fn new(writer: W, run_id: impl Into<String>) -> Self {
        Self { writer, run_id: run_id.into(), round: 0, bytes: 0 }
    }

    /// Continues a log whose first `bytes_already_written` bytes exist.
    pub fn resume(writer: W, run_id: impl Into<String>, round: u64, bytes_already_written: u64) -> Self {
        Self { writer, run_id: run_id.into(), round, bytes: bytes_already_written }
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> EventSink for RunLog<W> {
    fn emit(&mut self, phase: LogPhase, kind: &str, payload: Value, rng_cursor: u64) -> io::Result<()> {
        let record = LogRecord {
            v: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            round: self.round,
            phase,
            kind: kind.to_string(),
            payload,
            rng_cursor,
        };
        let mut line = serde_json::to_vec(&record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.bytes += line.len() as u64;
        Ok(())
    }

    fn set_round(&mut self, round: u64) {
        self.round = round;
    }
}

#[derive(Debug, Error)]
pub enum LogReadError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unsupported schema version {v}")]
    Version { line: usize, v: u32 },
}

/// Parsed log plus a note when the final line was cut off.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<LogRecord>,
    /// 1-based line number of an unterminated, unparseable final line.
    pub truncated_at: Option<usize>,
}

/// Parses JSONL bytes. A malformed line in the middle is an error; an
/// unterminated malformed last line is reported as truncation so callers
/// can work with the valid prefix.
pub fn parse_log(bytes: &[u8]) -> Result<ParsedLog, LogReadError> {
    let mut parsed = ParsedLog::default();
    let mut lines = bytes.split(|&b| b == b'\n').enumerate().peekable();
    while let Some((idx, line)) = lines.next() {
        let is_last = lines.peek().is_none();
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<LogRecord>(line) {
            Ok(record) if record.v != SCHEMA_VERSION => {
                return Err(LogReadError::Version { line: idx + 1, v: record.v })
            }
            Ok(record) => parsed.records.push(record),
            Err(_) if is_last => parsed.truncated_at = Some(idx + 1),
            Err(e) => {
                return Err(LogReadError::Malformed { line: idx + 1, message: e.to_string() })
            }
        }
    }
    Ok(parsed)
}

/// First differing line (1-based) between two logs, or `None` when equal.
pub fn first_divergence(expected: &[u8], actual: &[u8]) -> Option<usize> {
    let mut a = expected.split_inclusive(|&b| b == b'\n');
    let mut b = actual.split_inclusive(|&b| b == b'\n');
    let mut line = 1;
    loop {
        match (a.next(), b.next()) {
            (None, None) => return None,
            (x, y) if x != y => return Some(line),
            _ => line += 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn field_order_is_fixed() {
        let mut log = RunLog::in_memory("r1");
        log.set_round(3);
        log.emit(LogPhase::Test, "x", json!({"b": 1, "a": 2.5}), 8).unwrap();
        let text = String::from_utf8(log.into_inner()).unwrap();
        assert_eq!(
            text,
            "{\"v\":1,\"run_id\":\"r1\",\"round\":3,\"phase\":\"test\",\"type\":\"x\",\"payload\":{\"a\":2.5,\"b\":1},\"rng_cursor\":8}\n"
        );
    }

    #[test]
    fn truncated_tail_is_tolerated_but_middle_errors_are_not() {
        let mut log = RunLog::in_memory("r");
        log.emit(LogPhase::Run, "a", json!(null), 0).unwrap();
        log.emit(LogPhase::Run, "b", json!(null), 0).unwrap();
        let bytes = log.into_inner();
        let cut = &bytes[..bytes.len() - 10];
        let parsed = parse_log(cut).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.truncated_at, Some(2));

        let mut broken = b"garbage\n".to_vec();
        broken.extend_from_slice(&bytes);
        assert!(matches!(parse_log(&broken), Err(LogReadError::Malformed { line: 1, .. })));
    }

    #[test]
    fn divergence_line() {
        assert_eq!(first_divergence(b"a\nb\nc\n", b"a\nb\nc\n"), None);
        assert_eq!(first_divergence(b"a\nb\nc\n", b"a\nX\nc\n"), Some(2));
        assert_eq!(first_divergence(b"a\nb\n", b"a\nb\nc\n"), Some(3));
        assert_eq!(first_divergence(b"a\nb", b"a\nb\n"), Some(2));
    }
}
