//! Line-delimited JSON event log.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use vrulink_core::obu::AlertLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStart,
    Cmd,
    Emit,
    Publish,
    Drop,
    Deliver,
    Route,
    Broadcast,
    Ingest,
    Forward,
    Encounter,
    Visual,
    Alert,
    RunEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_ms: u64,
    pub kind: EventKind,
    pub actor: String,
    pub detail: Value,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("line {line}: `{kind:?}` detail: {reason}")]
    Detail { line: usize, kind: EventKind, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Event {
    pub fn new<D: Serialize>(t_ms: u64, kind: EventKind, actor: impl Into<String>, detail: &D) -> Self {
        Event {
            t_ms,
            kind,
            actor: actor.into(),
            detail: serde_json::to_value(detail).expect("event detail serializes"),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    /// Typed view of the detail object. `line` is only used for the error.
    pub fn detail_as<D: DeserializeOwned>(&self, line: usize) -> Result<D, LogError> {
        D::deserialize(&self.detail).map_err(|e| LogError::Detail { line, kind: self.kind, reason: e.to_string() })
    }
}

pub fn write_log<W: Write>(events: &[Event], mut w: W) -> std::io::Result<()> {
    for e in events {
        w.write_all(e.to_line().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn log_to_string(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

/// Parse a complete log. A final line without its newline counts as truncated.
pub fn read_log<R: BufRead>(mut r: R) -> Result<Vec<Event>, LogError> {
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut line = 0;
    loop {
        buf.clear();
        if r.read_line(&mut buf)? == 0 {
            return Ok(out);
        }
        line += 1;
        let Some(body) = buf.strip_suffix('\n') else {
            return Err(LogError::Line { line, reason: "truncated line (no terminating newline)".into() });
        };
        let body = body.strip_suffix('\r').unwrap_or(body);
        let ev: Event = serde_json::from_str(body).map_err(|e| LogError::Line { line, reason: e.to_string() })?;
        if let Some(prev) = out.last().map(|p: &Event| p.t_ms) {
            if ev.t_ms < prev {
                return Err(LogError::Line { line, reason: format!("time goes backwards ({} < {prev})", ev.t_ms) });
            }
        }
        out.push(ev);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStart {
    pub scenario: String,
    pub seed: u64,
    pub step_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emit {
    pub station_id: u32,
    pub ts_ms: u64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// Distance from the published position to the true one.
    pub truth_error_m: f64,
    pub fix_error: String,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publish {
    pub station_id: u32,
    pub ts_ms: u64,
    pub topic: String,
    pub uplink_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropDetail {
    pub station_id: u32,
    pub ts_ms: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deliver {
    pub station_id: u32,
    pub ts_ms: u64,
    pub broker_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub station_id: u32,
    pub ts_ms: u64,
    pub middleware_ms: u64,
    pub rsus: Vec<String>,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioReceiver {
    pub node: String,
    pub role: vrulink_core::dsrc::NodeRole,
    pub distance_m: f64,
    pub in_range: bool,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub frame_seq: u64,
    pub frame: String,
    pub station_id: u32,
    pub ts_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop_limit: Option<u8>,
    pub receivers: Vec<RadioReceiver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingest {
    pub frame_seq: u64,
    pub station_id: u32,
    pub ts_ms: u64,
    pub outcome: String,
    pub uplink_ms: u64,
    pub broker_ms: u64,
    pub middleware_ms: u64,
    pub radio_ms: u64,
    pub e2e_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forward {
    pub parent_seq: u64,
    pub frame_seq: u64,
    pub station_id: u32,
    pub hop_limit: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub pedestrian: String,
    pub station_id: u32,
    pub truth_ttc_s: f64,
    pub truth_distance_m: f64,
    pub stop_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visual {
    pub pedestrian: String,
    pub station_id: u32,
    pub truth_distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub station_id: u32,
    pub from: AlertLevel,
    pub to: AlertLevel,
    pub ttc_s: Option<f64>,
    pub distance_m: Option<f64>,
    pub truth_ttc_s: Option<f64>,
    pub truth_distance_m: Option<f64>,
    pub stop_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnd {
    pub steps: u64,
    pub emitted: u64,
    pub ingested: u64,
}
