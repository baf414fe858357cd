//! Run metrics derived purely from an event log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use vrulink_core::obu::AlertLevel;

use crate::events::{self, Event, EventKind, LogError};

pub const CSV_HEADER: &str =
    "scenario,seed,encounter,first_alert_ttc_s,deadline_met,alert_before_visual,p50_ms,p95_ms,p99_ms,delivery_ratio";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterMetrics {
    pub vehicle: String,
    pub pedestrian: String,
    pub station_id: u32,
    pub start_ms: u64,
    pub first_alert_ms: Option<u64>,
    pub first_alert_level: Option<AlertLevel>,
    /// Ground-truth TTC when the first WARN or BRAKE was shown.
    pub first_alert_ttc_s: Option<f64>,
    pub stop_time_s: Option<f64>,
    pub visual_ms: Option<u64>,
    pub deadline_met: bool,
    pub alert_before_visual: bool,
}

impl EncounterMetrics {
    pub fn label(&self) -> String {
        format!("{}:{}", self.vehicle, self.pedestrian)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    /// False for an empty log.
    pub ran: bool,
    pub encounters: Vec<EncounterMetrics>,
    pub e2e_samples: usize,
    pub p50_ms: Option<u64>,
    pub p95_ms: Option<u64>,
    pub p99_ms: Option<u64>,
    /// OBU ingests over OBU receptions within radio range.
    pub delivery_ratio: Option<f64>,
    /// The same ratio for receptions beyond radio range.
    pub beyond_range_ratio: Option<f64>,
    pub in_range_receptions: u64,
    pub beyond_range_receptions: u64,
    pub reports_emitted: u64,
    pub max_report_error_m: Option<f64>,
}

impl RunMetrics {
    pub fn empty(scenario: &str, seed: u64) -> Self {
        RunMetrics {
            scenario: scenario.into(),
            seed,
            ran: false,
            encounters: Vec::new(),
            e2e_samples: 0,
            p50_ms: None,
            p95_ms: None,
            p99_ms: None,
            delivery_ratio: None,
            beyond_range_ratio: None,
            in_range_receptions: 0,
            beyond_range_receptions: 0,
            reports_emitted: 0,
            max_report_error_m: None,
        }
    }

    pub fn all_deadlines_met(&self) -> bool {
        self.encounters.iter().all(|e| e.deadline_met)
    }

    /// CSV rows without the header. A run with no encounter still gets one row.
    /// A log with no events yields no rows.
    pub fn csv_rows(&self) -> String {
        if !self.ran {
            return String::new();
        }
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let tail = format!(
            "{},{},{},{}",
            opt(self.p50_ms),
            opt(self.p95_ms),
            opt(self.p99_ms),
            self.delivery_ratio.map(|r| format!("{r:.6}")).unwrap_or_default()
        );
        let mut out = String::new();
        if self.encounters.is_empty() {
            let _ = writeln!(out, "{},{},,,,,{}", self.scenario, self.seed, tail);
        }
        for e in &self.encounters {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.scenario,
                self.seed,
                e.label(),
                e.first_alert_ttc_s.map(|v| format!("{v:.3}")).unwrap_or_default(),
                e.deadline_met,
                e.alert_before_visual,
                tail
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Recompute metrics from a complete log.
pub fn metrics_from_events(log: &[Event]) -> Result<RunMetrics, LogError> {
    let Some(first) = log.first() else {
        return Ok(RunMetrics::empty("", 0));
    };
    if first.kind != EventKind::RunStart {
        return Err(LogError::Line { line: 1, reason: "log must begin with run_start".into() });
    }
    let start: events::RunStart = first.detail_as(1)?;
    let mut m = RunMetrics::empty(&start.scenario, start.seed);
    m.ran = true;

    let mut e2e = Vec::new();
    let mut receptions: BTreeMap<(u64, String), bool> = BTreeMap::new();
    let (mut in_ingests, mut beyond_ingests) = (0u64, 0u64);
    let mut levels: BTreeMap<(String, u32), AlertLevel> = BTreeMap::new();
    let mut encounters: BTreeMap<(String, u32), EncounterMetrics> = BTreeMap::new();
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut visuals: BTreeMap<(String, u32), u64> = BTreeMap::new();
    let mut ended = false;

    for (i, ev) in log.iter().enumerate() {
        let line = i + 1;
        if ended {
            return Err(LogError::Line { line, reason: "event after run_end".into() });
        }
        match ev.kind {
            EventKind::RunStart if i > 0 => {
                return Err(LogError::Line { line, reason: "second run_start".into() });
            }
            EventKind::Emit => {
                let d: events::Emit = ev.detail_as(line)?;
                m.reports_emitted += 1;
                m.max_report_error_m =
                    Some(m.max_report_error_m.map_or(d.truth_error_m, |x: f64| x.max(d.truth_error_m)));
            }
            EventKind::Broadcast => {
                let d: events::Broadcast = ev.detail_as(line)?;
                for r in d.receivers.iter().filter(|r| r.role == vrulink_core::dsrc::NodeRole::Obu) {
                    receptions.insert((d.frame_seq, r.node.clone()), r.in_range);
                    if r.in_range {
                        m.in_range_receptions += 1;
                    } else {
                        m.beyond_range_receptions += 1;
                    }
                }
            }
            EventKind::Ingest => {
                let d: events::Ingest = ev.detail_as(line)?;
                if ev.t_ms < d.ts_ms {
                    return Err(LogError::Line { line, reason: "ingest precedes its report".into() });
                }
                e2e.push(ev.t_ms - d.ts_ms);
                match receptions.get(&(d.frame_seq, ev.actor.clone())) {
                    Some(true) => in_ingests += 1,
                    Some(false) => beyond_ingests += 1,
                    None => {
                        return Err(LogError::Line {
                            line,
                            reason: format!("ingest of unknown frame {}", d.frame_seq),
                        });
                    }
                }
            }
            EventKind::Encounter => {
                let d: events::Encounter = ev.detail_as(line)?;
                let key = (ev.actor.clone(), d.station_id);
                let mut e = EncounterMetrics {
                    vehicle: ev.actor.clone(),
                    pedestrian: d.pedestrian,
                    station_id: d.station_id,
                    start_ms: ev.t_ms,
                    first_alert_ms: None,
                    first_alert_level: None,
                    first_alert_ttc_s: None,
                    stop_time_s: None,
                    visual_ms: visuals.get(&key).copied(),
                    deadline_met: false,
                    alert_before_visual: false,
                };
                let level = levels.get(&key).copied().unwrap_or_default();
                if level >= AlertLevel::Warn {
                    e.first_alert_ms = Some(ev.t_ms);
                    e.first_alert_level = Some(level);
                    e.first_alert_ttc_s = Some(d.truth_ttc_s);
                    e.stop_time_s = Some(d.stop_time_s);
                }
                if !encounters.contains_key(&key) {
                    order.push(key.clone());
                }
                encounters.insert(key, e);
            }
            EventKind::Visual => {
                let d: events::Visual = ev.detail_as(line)?;
                let key = (ev.actor.clone(), d.station_id);
                visuals.entry(key.clone()).or_insert(ev.t_ms);
                if let Some(e) = encounters.get_mut(&key) {
                    e.visual_ms.get_or_insert(ev.t_ms);
                }
            }
            EventKind::Alert => {
                let d: events::Alert = ev.detail_as(line)?;
                let key = (ev.actor.clone(), d.station_id);
                levels.insert(key.clone(), d.to);
                if d.to >= AlertLevel::Warn {
                    if let Some(e) = encounters.get_mut(&key) {
                        if e.first_alert_ms.is_none() {
                            e.first_alert_ms = Some(ev.t_ms);
                            e.first_alert_level = Some(d.to);
                            e.first_alert_ttc_s = d.truth_ttc_s;
                            e.stop_time_s = Some(d.stop_time_s);
                        }
                    }
                }
            }
            EventKind::RunEnd => ended = true,
            _ => {}
        }
    }
    if !ended {
        return Err(LogError::Line { line: log.len(), reason: "log ends without run_end".into() });
    }

    for key in order {
        let mut e = encounters.remove(&key).expect("recorded");
        e.deadline_met = matches!((e.first_alert_ttc_s, e.stop_time_s), (Some(ttc), Some(stop)) if ttc >= stop);
        e.alert_before_visual = match (e.first_alert_ms, e.visual_ms) {
            (Some(a), Some(v)) => a < v,
            (Some(_), None) => true,
            (None, _) => false,
        };
        m.encounters.push(e);
    }
    e2e.sort_unstable();
    m.e2e_samples = e2e.len();
    m.p50_ms = nearest_rank(&e2e, 50.0);
    m.p95_ms = nearest_rank(&e2e, 95.0);
    m.p99_ms = nearest_rank(&e2e, 99.0);
    m.delivery_ratio = (m.in_range_receptions > 0).then(|| in_ingests as f64 / m.in_range_receptions as f64);
    m.beyond_range_ratio =
        (m.beyond_range_receptions > 0).then(|| beyond_ingests as f64 / m.beyond_range_receptions as f64);
    Ok(m)
}

/// Merge several runs into one CSV, one block of rows per run, in input order.
pub fn aggregate_csv(runs: &[RunMetrics]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in runs {
        out.push_str(&r.csv_rows());
    }
    out
}
