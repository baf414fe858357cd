//! VRU-side beaconing: fix smoothing, jump rejection, dynamics-based
//! triggering, geofencing, and pausing while not vulnerable.

use alloc::collections::VecDeque;
use alloc::string::String;
use core::fmt;

use libm::fabs;
use serde::{Deserialize, Serialize};

use crate::geo::{enu_project, enu_unproject, haversine_distance, EnuVector, GeoPoint, Geofence};
use crate::messages::PotiReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    #[default]
    Walking,
    Standing,
    InVehicle,
    Unknown,
}

/// One position-and-time fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotiSample {
    pub ts_ms: u64,
    pub position: GeoPoint,
    pub speed_mps: f64,
    pub heading_deg: f64,
    /// Reported 1-sigma horizontal accuracy.
    pub accuracy_m: f64,
    pub activity: Activity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentError {
    OutOfOrder { last_ts_ms: u64, got_ts_ms: u64 },
    InvalidParam(&'static str),
}

impl fmt::Display for AgentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentError::OutOfOrder { last_ts_ms, got_ts_ms } => {
                write!(f, "sample at {got_ts_ms} ms is not newer than {last_ts_ms} ms")
            }
            AgentError::InvalidParam(p) => write!(f, "agent parameter `{p}` out of range"),
        }
    }
}

impl core::error::Error for AgentError {}

/// Generation thresholds, CAM-style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerParams {
    pub d_pos_m: f64,
    pub d_speed_mps: f64,
    pub d_heading_deg: f64,
    pub t_max_ms: u64,
    pub t_min_ms: u64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        TriggerParams { d_pos_m: 4.0, d_speed_mps: 0.5, d_heading_deg: 4.0, t_max_ms: 1_000, t_min_ms: 100 }
    }
}

impl TriggerParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.d_pos_m) {
            return Err(AgentError::InvalidParam("d_pos_m"));
        }
        if !positive(self.d_speed_mps) {
            return Err(AgentError::InvalidParam("d_speed_mps"));
        }
        if !positive(self.d_heading_deg) {
            return Err(AgentError::InvalidParam("d_heading_deg"));
        }
        if self.t_min_ms == 0 {
            return Err(AgentError::InvalidParam("t_min_ms"));
        }
        if self.t_min_ms >= self.t_max_ms {
            return Err(AgentError::InvalidParam("t_max_ms"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherParams {
    pub window: usize,
    /// Fixes implying a faster move than this are replaced by the last accepted one.
    pub max_speed_mps: f64,
}

impl Default for SmootherParams {
    fn default() -> Self {
        SmootherParams { window: 5, max_speed_mps: 10.0 }
    }
}

impl SmootherParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.window == 0 {
            return Err(AgentError::InvalidParam("window"));
        }
        if !(self.max_speed_mps.is_finite() && self.max_speed_mps > 0.0) {
            return Err(AgentError::InvalidParam("max_speed_mps"));
        }
        Ok(())
    }
}

/// Incremental rolling-average smoother with jump rejection.
#[derive(Debug, Clone)]
pub struct Smoother {
    params: SmootherParams,
    last_accepted: Option<(u64, GeoPoint)>,
    window: VecDeque<GeoPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothed {
    pub sample: PotiSample,
    /// The raw fix was discarded as an implausible jump.
    pub rejected: bool,
}

impl Smoother {
    pub fn new(params: SmootherParams) -> Self {
        Smoother { params, last_accepted: None, window: VecDeque::with_capacity(params.window) }
    }

    pub fn push(&mut self, raw: &PotiSample) -> Smoothed {
        let (pos, rejected) = match self.last_accepted {
            None => (raw.position, false),
            Some((t, p)) => {
                let dist = haversine_distance(p, raw.position);
                let dt_s = raw.ts_ms.saturating_sub(t) as f64 / 1000.0;
                let implausible = if dt_s > 0.0 { dist / dt_s > self.params.max_speed_mps } else { dist > 0.0 };
                if implausible {
                    (p, true)
                } else {
                    (raw.position, false)
                }
            }
        };
        if !rejected {
            self.last_accepted = Some((raw.ts_ms, pos));
        }
        if self.window.len() == self.params.window {
            self.window.pop_front();
        }
        self.window.push_back(pos);

        let mut sum = EnuVector::ZERO;
        for p in &self.window {
            // Window members lie within max_speed * window span of each other.
            sum = sum + enu_project(pos, *p).unwrap_or(EnuVector::ZERO);
        }
        let mean = sum * (1.0 / self.window.len() as f64);
        let position = enu_unproject(pos, mean).unwrap_or(pos);
        Smoothed { sample: PotiSample { position, ..*raw }, rejected }
    }
}

/// Smooth a complete, time-ordered history and return the newest output.
pub fn smooth(history: &[PotiSample], s: &SmootherParams) -> Option<PotiSample> {
    let mut sm = Smoother::new(*s);
    history.iter().map(|h| sm.push(h).sample).last()
}

/// Smallest angle between two headings, degrees.
pub fn heading_delta(a: f64, b: f64) -> f64 {
    let d = fabs(a - b) % 360.0;
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

pub fn should_trigger(last_sent: &PotiSample, current: &PotiSample, p: &TriggerParams) -> bool {
    let elapsed = current.ts_ms.saturating_sub(last_sent.ts_ms);
    if elapsed < p.t_min_ms {
        return false;
    }
    elapsed >= p.t_max_ms
        || haversine_distance(last_sent.position, current.position) > p.d_pos_m
        || fabs(current.speed_mps - last_sent.speed_mps) > p.d_speed_mps
        || heading_delta(current.heading_deg, last_sent.heading_deg) > p.d_heading_deg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VulnerabilityState {
    #[default]
    Active,
    PausedInVehicle,
    OutOfFence,
}

/// Publication is allowed only in `Active`. Unknown activity counts as vulnerable.
pub fn vulnerability_step(_state: VulnerabilityState, sample: &PotiSample, fence: &Geofence) -> VulnerabilityState {
    if !fence.contains(sample.position) {
        VulnerabilityState::OutOfFence
    } else if sample.activity == Activity::InVehicle {
        VulnerabilityState::PausedInVehicle
    } else {
        VulnerabilityState::Active
    }
}

/// Per-VRU pipeline from raw fixes to published reports.
#[derive(Debug, Clone)]
pub struct VruAgent {
    id: String,
    smoother: Option<Smoother>,
    trigger: TriggerParams,
    fence: Geofence,
    state: VulnerabilityState,
    last_ts_ms: Option<u64>,
    last_sent: Option<PotiSample>,
    last_smoothed: Option<Smoothed>,
}

impl VruAgent {
    /// `smoother: None` publishes raw fixes.
    pub fn new(
        id: impl Into<String>,
        smoother: Option<SmootherParams>,
        trigger: TriggerParams,
        fence: Geofence,
    ) -> Result<Self, AgentError> {
        trigger.validate()?;
        if let Some(s) = &smoother {
            s.validate()?;
        }
        Ok(VruAgent {
            id: id.into(),
            smoother: smoother.map(Smoother::new),
            trigger,
            fence,
            state: VulnerabilityState::Active,
            last_ts_ms: None,
            last_sent: None,
            last_smoothed: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> VulnerabilityState {
        self.state
    }

    pub fn last_sent(&self) -> Option<&PotiSample> {
        self.last_sent.as_ref()
    }

    /// Output of the smoothing stage for the most recent sample.
    pub fn last_smoothed(&self) -> Option<&Smoothed> {
        self.last_smoothed.as_ref()
    }

    pub fn set_smoothing(&mut self, params: Option<SmootherParams>) {
        self.smoother = params.map(Smoother::new);
    }

    pub fn step(&mut self, raw: &PotiSample) -> Result<Option<PotiReport>, AgentError> {
        if let Some(last) = self.last_ts_ms {
            if raw.ts_ms <= last {
                return Err(AgentError::OutOfOrder { last_ts_ms: last, got_ts_ms: raw.ts_ms });
            }
        }
        self.last_ts_ms = Some(raw.ts_ms);

        let smoothed = match &mut self.smoother {
            Some(s) => s.push(raw),
            None => Smoothed { sample: *raw, rejected: false },
        };
        self.last_smoothed = Some(smoothed);
        let current = smoothed.sample;

        self.state = vulnerability_step(self.state, &current, &self.fence);
        if self.state != VulnerabilityState::Active {
            return Ok(None);
        }
        let fire = match &self.last_sent {
            None => true,
            Some(last) => should_trigger(last, &current, &self.trigger),
        };
        if !fire {
            return Ok(None);
        }
        self.last_sent = Some(current);
        Ok(Some(PotiReport::from_sample(&self.id, &current)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn origin() -> GeoPoint {
        GeoPoint::new(57.78, 12.77).unwrap()
    }

    fn at(ts_ms: u64, east: f64, north: f64) -> PotiSample {
        PotiSample {
            ts_ms,
            position: enu_unproject(origin(), EnuVector::new(east, north)).unwrap(),
            speed_mps: 1.0,
            heading_deg: 90.0,
            accuracy_m: 3.0,
            activity: Activity::Walking,
        }
    }

    fn offset(p: GeoPoint) -> EnuVector {
        enu_project(origin(), p).unwrap()
    }

    fn fence() -> Geofence {
        Geofence::new(origin(), 2_000.0).unwrap()
    }

    #[test]
    fn smoothing_constant_input() {
        let h: Vec<_> = (0..5).map(|i| at(i * 1000, 10.0, -3.0)).collect();
        let out = smooth(&h, &SmootherParams::default()).unwrap();
        assert!((offset(out.position) - EnuVector::new(10.0, -3.0)).norm() < 1e-6);
        assert!(smooth(&[], &SmootherParams::default()).is_none());
    }

    #[test]
    fn smoothing_averages_window() {
        let h: Vec<_> = (0..5).map(|i| at(i * 1000, i as f64, 0.0)).collect();
        let out = smooth(&h, &SmootherParams::default()).unwrap();
        let v = offset(out.position);
        assert!((v.east_m - 2.0).abs() < 1e-6 && v.north_m.abs() < 1e-6, "{v:?}");
        assert_eq!(out.ts_ms, 4000);
        assert_eq!(out.speed_mps, 1.0);
    }

    #[test]
    fn smoothing_rejects_fallback_jump() {
        let mut h: Vec<_> = (0..10).map(|i| at(i * 1000, i as f64, 0.0)).collect();
        h.push(at(10_000, 10.0, 70.0));
        let out = smooth(&h, &SmootherParams::default()).unwrap();
        let v = offset(out.position);
        // mean of accepted 6,7,8,9 and the held 9
        assert!((v - EnuVector::new(7.8, 0.0)).norm() < 1e-6, "{v:?}");
        assert!((v - EnuVector::new(10.0, 0.0)).norm() < 3.0);
        // within 1 m of the pre-jump track's last accepted fix once the walk resumes
        h.push(at(11_000, 11.0, 0.0));
        let v = offset(smooth(&h, &SmootherParams::default()).unwrap().position);
        assert!(v.north_m.abs() < 1e-6);
    }

    #[test]
    fn rejection_releases_after_long_gap() {
        let mut sm = Smoother::new(SmootherParams { window: 1, max_speed_mps: 10.0 });
        assert!(!sm.push(&at(0, 0.0, 0.0)).rejected);
        assert!(sm.push(&at(1_000, 50.0, 0.0)).rejected);
        // 50 m over 6 s since the last accepted fix is plausible
        assert!(!sm.push(&at(6_000, 50.0, 0.0)).rejected);
    }

    #[test]
    fn trigger_examples() {
        let p = TriggerParams::default();
        let base = at(0, 0.0, 0.0);
        let mut still = base;
        still.ts_ms = 1_200;
        assert!(should_trigger(&base, &still, &p));

        assert!(should_trigger(&base, &at(200, 5.0, 0.0), &p));

        let mut small = at(500, 1.0, 0.0);
        small.speed_mps += 0.1;
        small.heading_deg += 1.0;
        assert!(!should_trigger(&base, &small, &p));

        // t_min wins over a large move
        assert!(!should_trigger(&base, &at(50, 30.0, 0.0), &p));

        let mut turn = at(300, 0.0, 0.0);
        turn.heading_deg = 95.0;
        assert!(should_trigger(&base, &turn, &p));
        let mut sped = at(300, 0.0, 0.0);
        sped.speed_mps = 1.6;
        assert!(should_trigger(&base, &sped, &p));
    }

    #[test]
    fn heading_wraps() {
        assert_eq!(heading_delta(359.0, 1.0), 2.0);
        assert_eq!(heading_delta(10.0, 350.0), 20.0);
        assert_eq!(heading_delta(0.0, 180.0), 180.0);
    }

    #[test]
    fn trigger_param_validation() {
        let mut p = TriggerParams::default();
        assert!(p.validate().is_ok());
        p.t_min_ms = 1_000;
        assert_eq!(p.validate(), Err(AgentError::InvalidParam("t_max_ms")));
        assert!(SmootherParams { window: 0, max_speed_mps: 1.0 }.validate().is_err());
    }

    #[test]
    fn vulnerability_examples() {
        let f = fence();
        let s = VulnerabilityState::Active;
        assert_eq!(vulnerability_step(s, &at(0, 10.0, 0.0), &f), VulnerabilityState::Active);
        let mut car = at(0, 10.0, 0.0);
        car.activity = Activity::InVehicle;
        assert_eq!(vulnerability_step(s, &car, &f), VulnerabilityState::PausedInVehicle);
        assert_eq!(vulnerability_step(s, &at(0, 2_500.0, 0.0), &f), VulnerabilityState::OutOfFence);
        let mut unk = at(0, 10.0, 0.0);
        unk.activity = Activity::Unknown;
        assert_eq!(vulnerability_step(s, &unk, &f), VulnerabilityState::Active);
    }

    #[test]
    fn agent_examples() {
        let mut a = VruAgent::new("7", Some(SmootherParams::default()), TriggerParams::default(), fence()).unwrap();
        let first = a.step(&at(0, 0.0, 0.0)).unwrap().expect("bootstrap emit");
        assert_eq!(first.id, "7");
        assert!(a.step(&at(300, 1.0, 0.0)).unwrap().is_none());

        let err = a.step(&at(300, 1.0, 0.0)).unwrap_err();
        assert_eq!(err, AgentError::OutOfOrder { last_ts_ms: 300, got_ts_ms: 300 });

        let mut car = at(400, 100.0, 0.0);
        car.activity = Activity::InVehicle;
        assert!(a.step(&car).unwrap().is_none());
        assert_eq!(a.state(), VulnerabilityState::PausedInVehicle);
        car.ts_ms = 2_000;
        assert!(a.step(&car).unwrap().is_none());

        // back on foot after the pause: stale last_sent fires immediately
        assert!(a.step(&at(2_100, 0.0, 0.0)).unwrap().is_some());
    }

    fn arb_trace() -> impl Strategy<Value = Vec<(f64, f64, u8)>> {
        proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0u8..10), 1..80)
    }

    proptest! {
        #[test]
        fn agent_is_deterministic_and_paused_states_are_silent(trace in arb_trace()) {
            let run = || {
                let mut a = VruAgent::new("1", Some(SmootherParams::default()), TriggerParams::default(), fence()).unwrap();
                let (mut e, mut n) = (0.0, 0.0);
                let mut out = Vec::new();
                for (i, (de, dn, act)) in trace.iter().enumerate() {
                    e += de; n += dn;
                    let mut s = at(i as u64 * 100, e, n);
                    if *act == 0 { s.activity = Activity::InVehicle; }
                    let r = a.step(&s).unwrap();
                    if a.state() != VulnerabilityState::Active {
                        assert!(r.is_none());
                    }
                    out.push(r);
                }
                out
            };
            prop_assert_eq!(run(), run());
        }
    }
}
