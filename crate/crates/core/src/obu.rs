//! Vehicle-side receiver: VRU track table and alert assessment.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geo::{enu_project, EnuVector, GeoPoint};
use crate::kinematics::{stopping_profile, ttc_with_radius, BodyState, KinematicsParams};
use crate::messages::{decode_frame, CodecError, Frame, PsmMessage, SEC_MARK_UNAVAILABLE};

/// Tracks silent for longer than this are dropped.
pub const TRACK_EXPIRY_MS: u64 = 5_000;
/// Width of the WARN band above the stopping time.
pub const WARN_MARGIN_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackSource {
    Psm,
    Denm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VruTrack {
    pub station_id: u32,
    /// Generation time of the latest fix, reconstructed from its second mark.
    pub last_update_ms: u64,
    pub position: GeoPoint,
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub accuracy_m: f64,
    pub source: TrackSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlertLevel {
    #[default]
    None,
    Inform,
    Warn,
    Brake,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertAssessment {
    pub station_id: u32,
    pub level: AlertLevel,
    pub ttc_s: Option<f64>,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Created(VruTrack),
    Updated(VruTrack),
    /// Not newer than the current track.
    Stale {
        station_id: u32,
    },
    DecodeError(CodecError),
}

impl IngestOutcome {
    pub fn track(&self) -> Option<&VruTrack> {
        match self {
            IngestOutcome::Created(t) | IngestOutcome::Updated(t) => Some(t),
            _ => None,
        }
    }
}

/// Absolute time of a second mark, taken as the latest instant not after `now_ms`.
pub fn resolve_sec_mark(sec_mark_ms: u16, now_ms: u64) -> u64 {
    if sec_mark_ms == SEC_MARK_UNAVAILABLE {
        return now_ms;
    }
    let now_in_minute = now_ms % 60_000;
    let age = (now_in_minute + 60_000 - sec_mark_ms as u64 % 60_000) % 60_000;
    now_ms.saturating_sub(age)
}

fn track_from(psm: &PsmMessage, source: TrackSource, now_ms: u64) -> Result<VruTrack, CodecError> {
    Ok(VruTrack {
        station_id: psm.station_id,
        last_update_ms: resolve_sec_mark(psm.sec_mark_ms, now_ms),
        position: psm.position().map_err(|_| CodecError::OutOfRange("lat"))?,
        speed_mps: psm.speed_mps().unwrap_or(0.0),
        heading_deg: psm.heading_deg().unwrap_or(0.0),
        accuracy_m: psm.accuracy_m().unwrap_or(0.0),
        source,
    })
}

/// Threat level for one track against the vehicle's own state.
///
/// `origin` is the frame `vehicle` is expressed in. The track is extrapolated
/// at constant velocity to `now_ms`, and the contact radius is widened by the
/// track's reported accuracy.
pub fn assess(
    track: &VruTrack,
    origin: GeoPoint,
    vehicle: &BodyState,
    k: &KinematicsParams,
    ch_range_m: f64,
    now_ms: u64,
) -> AlertAssessment {
    let pos = enu_project(origin, track.position).unwrap_or(EnuVector::new(f64::INFINITY, f64::INFINITY));
    let vel = EnuVector::from_heading(track.heading_deg, track.speed_mps);
    let age_s = now_ms.saturating_sub(track.last_update_ms) as f64 / 1000.0;
    let vru = BodyState::new(pos, vel).advanced(age_s);

    let rel = vru.position - vehicle.position;
    let distance_m = rel.norm();
    let closing = rel.dot(vru.velocity_mps - vehicle.velocity_mps) < 0.0;
    let ttc_s = if distance_m.is_finite() {
        ttc_with_radius(vehicle, &vru, k.collision_radius_m + track.accuracy_m)
    } else {
        None
    };
    let stop_time = stopping_profile(vehicle.speed_mps(), k).map(|p| p.stop_time_s).unwrap_or(k.t_think_s);

    let level = match ttc_s {
        Some(t) if t <= stop_time => AlertLevel::Brake,
        Some(t) if t <= stop_time + WARN_MARGIN_S => AlertLevel::Warn,
        _ if distance_m <= ch_range_m && closing => AlertLevel::Inform,
        _ => AlertLevel::None,
    };
    AlertAssessment { station_id: track.station_id, level, ttc_s, distance_m }
}

/// A change of alert level for one station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlertTransition {
    pub from: AlertLevel,
    pub assessment: AlertAssessment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObuStats {
    pub frames: u64,
    pub decode_errors: u64,
    pub stale: u64,
}

#[derive(Debug, Clone)]
pub struct Obu {
    id: String,
    origin: GeoPoint,
    tracks: BTreeMap<u32, VruTrack>,
    levels: BTreeMap<u32, AlertLevel>,
    stats: ObuStats,
}

impl Obu {
    pub fn new(id: impl Into<String>, origin: GeoPoint) -> Self {
        Obu { id: id.into(), origin, tracks: BTreeMap::new(), levels: BTreeMap::new(), stats: ObuStats::default() }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn stats(&self) -> ObuStats {
        self.stats
    }

    pub fn tracks(&self) -> impl Iterator<Item = &VruTrack> {
        self.tracks.values()
    }

    pub fn track(&self, station_id: u32) -> Option<&VruTrack> {
        self.tracks.get(&station_id)
    }

    pub fn level(&self, station_id: u32) -> AlertLevel {
        self.levels.get(&station_id).copied().unwrap_or_default()
    }

    pub fn ingest(&mut self, frame: &[u8], now_ms: u64) -> IngestOutcome {
        self.stats.frames += 1;
        let decoded = decode_frame(frame).and_then(|f| match f {
            Frame::Psm(p) => track_from(&p, TrackSource::Psm, now_ms),
            Frame::Denm(d) => track_from(&d.header, TrackSource::Denm, now_ms),
        });
        let track = match decoded {
            Ok(t) => t,
            Err(e) => {
                self.stats.decode_errors += 1;
                return IngestOutcome::DecodeError(e);
            }
        };
        match self.tracks.get_mut(&track.station_id) {
            None => {
                self.tracks.insert(track.station_id, track);
                IngestOutcome::Created(track)
            }
            Some(cur) if track.last_update_ms > cur.last_update_ms => {
                *cur = track;
                IngestOutcome::Updated(track)
            }
            Some(_) => {
                self.stats.stale += 1;
                IngestOutcome::Stale { station_id: track.station_id }
            }
        }
    }

    pub fn expire_tracks(&mut self, now_ms: u64) -> Vec<u32> {
        let gone: Vec<u32> = self
            .tracks
            .values()
            .filter(|t| now_ms.saturating_sub(t.last_update_ms) > TRACK_EXPIRY_MS)
            .map(|t| t.station_id)
            .collect();
        for id in &gone {
            self.tracks.remove(id);
        }
        gone
    }

    /// Expire stale tracks, assess the rest, and report level changes.
    ///
    /// Expired stations fall back to `None`, which is reported as a transition.
    pub fn update_alerts(
        &mut self,
        vehicle: &BodyState,
        k: &KinematicsParams,
        ch_range_m: f64,
        now_ms: u64,
    ) -> (Vec<AlertAssessment>, Vec<AlertTransition>) {
        let expired = self.expire_tracks(now_ms);
        let mut transitions = Vec::new();
        for id in expired {
            if let Some(prev) = self.levels.remove(&id) {
                if prev != AlertLevel::None {
                    transitions.push(AlertTransition {
                        from: prev,
                        assessment: AlertAssessment {
                            station_id: id,
                            level: AlertLevel::None,
                            ttc_s: None,
                            distance_m: f64::NAN,
                        },
                    });
                }
            }
        }
        let mut current = Vec::with_capacity(self.tracks.len());
        for track in self.tracks.values() {
            let a = assess(track, self.origin, vehicle, k, ch_range_m, now_ms);
            let prev = self.levels.insert(track.station_id, a.level).unwrap_or_default();
            if prev != a.level {
                transitions.push(AlertTransition { from: prev, assessment: a });
            }
            current.push(a);
        }
        (current, transitions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::enu_unproject;
    use crate::messages::{encode_psm, BasicType};
    use proptest::prelude::*;

    const KMH64: f64 = 64.0 / 3.6;

    fn origin() -> GeoPoint {
        GeoPoint::new(57.78, 12.77).unwrap()
    }

    fn psm(station: u32, east: f64, north: f64, sec_mark: u16) -> PsmMessage {
        let p = enu_unproject(origin(), EnuVector::new(east, north)).unwrap();
        PsmMessage {
            basic_type: BasicType::Pedestrian,
            msg_cnt: 0,
            station_id: station,
            sec_mark_ms: sec_mark,
            lat_e7: libm::round(p.lat_deg() * 1e7) as i32,
            lon_e7: libm::round(p.lon_deg() * 1e7) as i32,
            accuracy_cm: 0,
            speed_cmps: 0,
            heading_cdeg: 0,
        }
    }

    #[test]
    fn sec_mark_resolution() {
        assert_eq!(resolve_sec_mark(1_000, 61_500), 61_000);
        assert_eq!(resolve_sec_mark(59_900, 60_100), 59_900);
        assert_eq!(resolve_sec_mark(SEC_MARK_UNAVAILABLE, 1234), 1234);
        assert_eq!(resolve_sec_mark(500, 500), 500);
    }

    #[test]
    fn ingest_examples() {
        let mut obu = Obu::new("car", origin());
        let f = encode_psm(&psm(7, 10.0, 0.0, 1_000)).unwrap();
        assert!(matches!(obu.ingest(&f, 1_100), IngestOutcome::Created(_)));

        let older = encode_psm(&psm(7, 12.0, 0.0, 900)).unwrap();
        assert_eq!(obu.ingest(&older, 1_150), IngestOutcome::Stale { station_id: 7 });
        assert_eq!(obu.track(7).unwrap().last_update_ms, 1_000);

        let newer = encode_psm(&psm(7, 12.0, 0.0, 1_100)).unwrap();
        assert!(matches!(obu.ingest(&newer, 1_200), IngestOutcome::Updated(_)));

        // wraps over the minute boundary
        let mut obu2 = Obu::new("car", origin());
        obu2.ingest(&encode_psm(&psm(1, 0.0, 0.0, 59_900)).unwrap(), 59_950);
        let wrapped = encode_psm(&psm(1, 0.0, 0.0, 50)).unwrap();
        assert!(matches!(obu2.ingest(&wrapped, 60_060), IngestOutcome::Updated(_)));

        let n = obu.tracks().count();
        assert!(matches!(obu.ingest(&f[..10], 1_300), IngestOutcome::DecodeError(_)));
        assert_eq!(obu.stats().decode_errors, 1);
        assert_eq!(obu.tracks().count(), n);
    }

    #[test]
    fn expiry_examples() {
        let mut obu = Obu::new("car", origin());
        assert!(obu.expire_tracks(10_000).is_empty());
        obu.ingest(&encode_psm(&psm(1, 0.0, 0.0, 4_000)).unwrap(), 4_000);
        obu.ingest(&encode_psm(&psm(2, 0.0, 0.0, 0)).unwrap(), 0);
        assert_eq!(obu.expire_tracks(6_000), alloc::vec![2]);
        assert!(obu.track(1).is_some());
    }

    fn static_track(east: f64) -> VruTrack {
        VruTrack {
            station_id: 7,
            last_update_ms: 0,
            position: enu_unproject(origin(), EnuVector::new(east, 0.0)).unwrap(),
            speed_mps: 0.0,
            heading_deg: 0.0,
            accuracy_m: 0.0,
            source: TrackSource::Psm,
        }
    }

    fn car() -> BodyState {
        BodyState::new(EnuVector::ZERO, EnuVector::new(KMH64, 0.0))
    }

    #[test]
    fn assessment_levels() {
        let k = KinematicsParams::default();
        // ttc = (gap - 1 m) / v
        let gap = |ttc: f64| ttc * KMH64 + k.collision_radius_m;
        let a = assess(&static_track(gap(2.0)), origin(), &car(), &k, 130.0, 0);
        assert_eq!(a.level, AlertLevel::Brake);
        assert!((a.ttc_s.unwrap() - 2.0).abs() < 1e-3);

        let a = assess(&static_track(gap(4.5)), origin(), &car(), &k, 130.0, 0);
        assert_eq!(a.level, AlertLevel::Warn);

        let a = assess(&static_track(gap(6.0)), origin(), &car(), &k, 130.0, 0);
        assert_eq!(a.level, AlertLevel::Inform);

        let a = assess(&static_track(gap(20.0)), origin(), &car(), &k, 130.0, 0);
        assert_eq!(a.level, AlertLevel::None);

        let a = assess(&static_track(-30.0), origin(), &car(), &k, 130.0, 0);
        assert_eq!(a.level, AlertLevel::None);
        assert!(a.ttc_s.is_none());
    }

    #[test]
    fn extrapolates_track_age() {
        let k = KinematicsParams::default();
        let stopped = BodyState::default();
        let mut t = static_track(50.0);
        t.speed_mps = 10.0;
        t.heading_deg = 270.0;
        // after 4 s the VRU has covered 40 m of the 50 m gap
        let a = assess(&t, origin(), &stopped, &k, 130.0, 4_000);
        assert!((a.distance_m - 10.0).abs() < 0.01);
        assert!((a.ttc_s.unwrap() - 0.9).abs() < 1e-3);
    }

    #[test]
    fn transitions_and_expiry() {
        let k = KinematicsParams::default();
        let mut obu = Obu::new("car", origin());
        obu.ingest(&encode_psm(&psm(7, 60.0, 0.0, 0)).unwrap(), 0);
        let (cur, tr) = obu.update_alerts(&car(), &k, 130.0, 0);
        assert_eq!(cur[0].level, AlertLevel::Warn);
        assert_eq!(tr.len(), 1);
        let (_, tr) = obu.update_alerts(&car(), &k, 130.0, 100);
        assert!(tr.is_empty());
        let (cur, tr) = obu.update_alerts(&car(), &k, 130.0, 6_000);
        assert!(cur.is_empty());
        assert_eq!(tr[0].from, AlertLevel::Warn);
        assert_eq!(tr[0].assessment.level, AlertLevel::None);
    }

    proptest! {
        #[test]
        fn level_monotone_on_approach(start in 20.0f64..400.0, speed in 3.0f64..35.0) {
            let k = KinematicsParams::default();
            let track = static_track(start);
            let mut last = AlertLevel::None;
            let mut x = 0.0;
            while x < start - 1.5 {
                let v = BodyState::new(EnuVector::new(x, 0.0), EnuVector::new(speed, 0.0));
                let a = assess(&track, origin(), &v, &k, 130.0, 0);
                prop_assert!(a.level >= last, "{:?} after {:?}", a.level, last);
                last = a.level;
                x += 0.5;
            }
        }

        #[test]
        fn receding_never_warns(gap in 2.0f64..300.0, vru_speed in 0.0f64..5.0) {
            let k = KinematicsParams::default();
            let mut t = static_track(-gap);
            t.speed_mps = vru_speed;
            t.heading_deg = 270.0;
            let a = assess(&t, origin(), &car(), &k, 130.0, 0);
            prop_assert!(a.level <= AlertLevel::Inform);
        }

        #[test]
        fn brake_implies_ttc_within_stop_time(e in -200.0f64..200.0, n in -20.0f64..20.0, hdg in 0.0f64..360.0) {
            let k = KinematicsParams::default();
            let mut t = static_track(0.0);
            t.position = enu_unproject(origin(), EnuVector::new(e, n)).unwrap();
            t.speed_mps = 1.5;
            t.heading_deg = hdg;
            let a = assess(&t, origin(), &car(), &k, 130.0, 0);
            if a.level == AlertLevel::Brake {
                prop_assert!(a.ttc_s.unwrap() <= stopping_profile(KMH64, &k).unwrap().stop_time_s);
            }
        }
    }
}
