use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One received bit: whether it was decoded correctly, on which channel and in which period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitEvent {
    pub period: u64,
    pub channel: usize,
    pub correct: bool,
    /// Linear SINR at reception, when known. Needed for BER-curve training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinr: Option<f64>,
}

pub fn write_events_jsonl<W: Write>(events: &[BitEvent], mut out: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a JSON-lines event trace. Blank lines are skipped.
pub fn read_events_jsonl<R: BufRead>(input: R) -> Result<Vec<BitEvent>> {
    let mut events = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: BitEvent = serde_json::from_str(&line)
            .map_err(|err| Error::field("trace", format!("line {}: {err}", n + 1)))?;
        events.push(e);
    }
    Ok(events)
}
