//! Trace records, per-channel metrics and their serialized forms.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::channel::{Candidate, Cause, DecisionMode, MmpIds, Pair, SwitchEstimate, UserDecision};
use crate::context::Millis;

/// Evaluation details carried so a record can be re-checked after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detail {
    pub mode: Option<DecisionMode>,
    pub best: Option<Candidate>,
    pub current_cost: Option<f64>,
    pub current_throughput: Option<f64>,
    pub threshold: f64,
    pub estimate: Option<SwitchEstimate>,
    pub user_decision: Option<UserDecision>,
    pub forced: bool,
    pub stability_count: u32,
}

/// One line of the trace. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: Millis,
    pub channel: String,
    pub cause: Cause,
    pub action: String,
    pub old_pair: Option<Pair>,
    pub new_pair: Option<Pair>,
    pub mmp: Option<MmpIds>,
    pub cost: Option<f64>,
    pub event: String,
    pub detail: Option<Detail>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub window_ms: Millis,
    pub switch_count: u32,
    pub suspend_count: u32,
    pub resume_count: u32,
    pub pre_establish_ms: Millis,
    pub active_ms: Millis,
    pub suspended_ms: Millis,
    /// Time-weighted cost of the running pair; `None` if never active.
    pub mean_cost: Option<f64>,
    /// Active time spent below the acceptable-quality threshold.
    pub qos_violation_ms: Millis,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub channels: Vec<ChannelMetrics>,
}

impl Metrics {
    pub fn channel(&self, id: &str) -> Option<&ChannelMetrics> {
        self.channels.iter().find(|c| c.channel == id)
    }
}

/// Writes one JSON object per line.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn trace_to_string(records: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
