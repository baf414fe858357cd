//! Bridge from bus POTI reports to RSU broadcast commands.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use libm::round;
use serde::{Deserialize, Serialize};

use crate::geo::{haversine_distance, GeoPoint};
use crate::messages::{poti_to_psm, CodecError, DenmMessage, Frame, PotiReport, PsmMessage, CAUSE_HUMAN_PRESENCE};

/// Topic pattern the middleware consumes.
pub const POTI_SUBSCRIPTION: &str = "vru/+/poti";

/// Reports seen again within this window are dropped.
pub const DEDUP_WINDOW_MS: u64 = 2_000;

pub fn poti_topic(station_id: &str) -> String {
    alloc::format!("vru/{station_id}/poti")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuRegistration {
    pub rsu_id: String,
    pub position: GeoPoint,
    /// Area this RSU broadcasts for.
    pub relevance_radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MiddlewareMode {
    #[default]
    Psm,
    Denm {
        hop_limit: u8,
    },
}

impl MiddlewareMode {
    pub const DEFAULT_DENM_HOPS: u8 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DedupKey {
    pub station_id: u32,
    pub ts_ms: u64,
}

/// Send request for one RSU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsuCommand {
    pub rsu_id: String,
    pub frame: Frame,
}

/// Numeric ids pass through; anything else is hashed with 32-bit FNV-1a.
pub fn station_id_for(id: &str) -> u32 {
    if let Ok(n) = id.parse::<u32>() {
        return n;
    }
    let mut h: u32 = 0x811c_9dc5;
    for b in id.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// RSUs whose relevance disk contains the report position.
pub fn route_report<'a>(r: &PotiReport, rsus: &'a [RsuRegistration]) -> Vec<&'a str> {
    let Ok(p) = r.position() else {
        return Vec::new();
    };
    rsus.iter()
        .filter(|rsu| haversine_distance(rsu.position, p) <= rsu.relevance_radius_m)
        .map(|rsu| rsu.rsu_id.as_str())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MiddlewareStats {
    pub malformed: u64,
    pub duplicates: u64,
    pub unrouted: u64,
    pub commands: u64,
}

#[derive(Debug, Clone)]
pub struct Middleware {
    rsus: Vec<RsuRegistration>,
    mode: MiddlewareMode,
    msg_cnt: BTreeMap<u32, u8>,
    denm_seq: BTreeMap<u32, u16>,
    recent: BTreeMap<DedupKey, u64>,
    stats: MiddlewareStats,
}

impl Middleware {
    pub fn new(rsus: Vec<RsuRegistration>, mode: MiddlewareMode) -> Self {
        Middleware {
            rsus,
            mode,
            msg_cnt: BTreeMap::new(),
            denm_seq: BTreeMap::new(),
            recent: BTreeMap::new(),
            stats: MiddlewareStats::default(),
        }
    }

    pub fn rsus(&self) -> &[RsuRegistration] {
        &self.rsus
    }

    pub fn stats(&self) -> MiddlewareStats {
        self.stats
    }

    /// Decode a raw bus payload; malformed payloads are counted and dropped.
    pub fn on_payload(&mut self, payload: &[u8], now_ms: u64) -> Result<Vec<RsuCommand>, CodecError> {
        match PotiReport::from_json(payload) {
            Ok(r) => Ok(self.on_report(&r, now_ms)),
            Err(e) => {
                self.stats.malformed += 1;
                Err(e)
            }
        }
    }

    pub fn on_report(&mut self, r: &PotiReport, now_ms: u64) -> Vec<RsuCommand> {
        let station_id = station_id_for(&r.id);
        let key = DedupKey { station_id, ts_ms: r.ts_ms };
        self.recent.retain(|_, seen| now_ms.saturating_sub(*seen) <= DEDUP_WINDOW_MS);
        if self.recent.contains_key(&key) {
            self.stats.duplicates += 1;
            return Vec::new();
        }
        self.recent.insert(key, now_ms);

        let targets: Vec<RsuRegistration> = {
            let ids = route_report(r, &self.rsus);
            self.rsus.iter().filter(|rsu| ids.contains(&rsu.rsu_id.as_str())).cloned().collect()
        };
        if targets.is_empty() {
            self.stats.unrouted += 1;
            return Vec::new();
        }

        let cnt = self.msg_cnt.entry(station_id).or_insert(0);
        // secMark dates the fix, not the moment the RSU crafts the frame.
        let psm = poti_to_psm(r, *cnt, station_id, r.ts_ms);
        *cnt = (*cnt + 1) % 128;

        let frames: Vec<RsuCommand> = match self.mode {
            MiddlewareMode::Psm => {
                targets.iter().map(|rsu| RsuCommand { rsu_id: rsu.rsu_id.clone(), frame: Frame::Psm(psm) }).collect()
            }
            MiddlewareMode::Denm { hop_limit } => {
                let seq = self.denm_seq.entry(station_id).or_insert(0);
                let sequence_number = *seq;
                *seq = seq.wrapping_add(1);
                targets
                    .iter()
                    .map(|rsu| RsuCommand {
                        rsu_id: rsu.rsu_id.clone(),
                        frame: Frame::Denm(denm_for(psm, rsu, sequence_number, hop_limit)),
                    })
                    .collect()
            }
        };
        self.stats.commands += frames.len() as u64;
        frames
    }
}

fn denm_for(psm: PsmMessage, rsu: &RsuRegistration, sequence_number: u16, hop_limit: u8) -> DenmMessage {
    DenmMessage {
        header: psm,
        cause_code: CAUSE_HUMAN_PRESENCE,
        sub_cause: 0,
        sequence_number,
        dest_center_lat_e7: round(rsu.position.lat_deg() * 1e7) as i32,
        dest_center_lon_e7: round(rsu.position.lon_deg() * 1e7) as i32,
        dest_radius_m: round(rsu.relevance_radius_m).clamp(1.0, u16::MAX as f64) as u16,
        hop_limit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Activity;
    use crate::geo::{enu_unproject, EnuVector};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn origin() -> GeoPoint {
        GeoPoint::new(57.78, 12.77).unwrap()
    }

    fn at(e: f64, n: f64) -> GeoPoint {
        enu_unproject(origin(), EnuVector::new(e, n)).unwrap()
    }

    fn rsu(id: &str, e: f64, radius: f64) -> RsuRegistration {
        RsuRegistration { rsu_id: id.into(), position: at(e, 0.0), relevance_radius_m: radius }
    }

    fn report(id: &str, e: f64, ts: u64) -> PotiReport {
        let p = at(e, 0.0);
        PotiReport {
            id: id.into(),
            ts_ms: ts,
            lat_deg: p.lat_deg(),
            lon_deg: p.lon_deg(),
            speed_mps: 1.4,
            heading_deg: 0.0,
            accuracy_m: 3.0,
            activity: Activity::Walking,
        }
    }

    #[test]
    fn routing_examples() {
        let one = vec![rsu("city", 0.0, 500.0)];
        assert_eq!(route_report(&report("1", 50.0, 0), &one), vec!["city"]);

        let two = vec![rsu("city", 0.0, 300.0), rsu("multilane", 2_000.0, 300.0)];
        assert_eq!(route_report(&report("1", 100.0, 0), &two), vec!["city"]);
        assert!(route_report(&report("1", 1_000.0, 0), &two).is_empty());
    }

    #[test]
    fn counter_and_dedup() {
        let mut mw = Middleware::new(vec![rsu("a", 0.0, 500.0)], MiddlewareMode::Psm);
        let c = mw.on_report(&report("9", 10.0, 1_000), 1_100);
        assert_eq!(c.len(), 1);
        let Frame::Psm(p) = c[0].frame else { panic!() };
        assert_eq!((p.msg_cnt, p.station_id, p.sec_mark_ms), (0, 9, 1_000));

        assert!(mw.on_report(&report("9", 10.0, 1_000), 1_200).is_empty());
        assert_eq!(mw.stats().duplicates, 1);

        let c = mw.on_report(&report("9", 10.0, 2_000), 2_100);
        let Frame::Psm(p) = c[0].frame else { panic!() };
        assert_eq!(p.msg_cnt, 1);

        // outside the window the same key counts as new
        assert_eq!(mw.on_report(&report("9", 10.0, 1_000), 5_000).len(), 1);
    }

    #[test]
    fn overlapping_rsus_get_same_psm() {
        let mut mw = Middleware::new(vec![rsu("a", 0.0, 500.0), rsu("b", 100.0, 500.0)], MiddlewareMode::Psm);
        let c = mw.on_report(&report("3", 50.0, 0), 0);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].rsu_id, "a");
        assert_eq!(c[1].rsu_id, "b");
        assert_eq!(c[0].frame, c[1].frame);
    }

    #[test]
    fn malformed_payload_is_counted() {
        let mut mw = Middleware::new(vec![rsu("a", 0.0, 500.0)], MiddlewareMode::Psm);
        assert!(mw.on_payload(b"{", 0).is_err());
        assert_eq!(mw.stats().malformed, 1);
        let ok = report("4", 0.0, 5).to_json();
        assert_eq!(mw.on_payload(&ok, 10).unwrap().len(), 1);
    }

    #[test]
    fn denm_mode() {
        let mut mw = Middleware::new(
            vec![rsu("a", 0.0, 400.0)],
            MiddlewareMode::Denm { hop_limit: MiddlewareMode::DEFAULT_DENM_HOPS },
        );
        let c = mw.on_report(&report("5", 10.0, 0), 0);
        let Frame::Denm(d) = c[0].frame else { panic!() };
        assert_eq!(d.cause_code, 12);
        assert_eq!(d.hop_limit, 3);
        assert_eq!(d.dest_radius_m, 400);
        assert_eq!(d.sequence_number, 0);
        let c = mw.on_report(&report("5", 10.0, 100), 100);
        let Frame::Denm(d) = c[0].frame else { panic!() };
        assert_eq!(d.sequence_number, 1);
        assert!(crate::messages::encode_denm(&d).is_ok());
    }

    #[test]
    fn station_ids() {
        assert_eq!(station_id_for("17"), 17);
        assert_eq!(station_id_for("ped-a"), station_id_for("ped-a"));
        assert_ne!(station_id_for("ped-a"), station_id_for("ped-b"));
        assert_eq!(poti_topic("7"), "vru/7/poti".to_string());
    }

    proptest! {
        #[test]
        fn duplicated_trace_yields_same_commands(
            reports in proptest::collection::vec((0u8..3, 0.0f64..800.0), 1..40),
            dup_mask in proptest::collection::vec(any::<bool>(), 40),
        ) {
            let rsus = vec![rsu("a", 0.0, 300.0), rsu("b", 500.0, 300.0)];
            let trace: Vec<_> = reports.iter().enumerate()
                .map(|(i, (sid, e))| (report(&sid.to_string(), *e, i as u64 * 100), i as u64 * 100 + 50))
                .collect();
            let mut clean = Middleware::new(rsus.clone(), MiddlewareMode::Psm);
            let mut dup = Middleware::new(rsus.clone(), MiddlewareMode::Psm);
            let mut a = vec![];
            let mut b = vec![];
            let mut counts: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
            for (i, (r, now)) in trace.iter().enumerate() {
                let out = clean.on_report(r, *now);
                prop_assert_eq!(out.len(), route_report(r, &rsus).len());
                if let Some(RsuCommand { frame: Frame::Psm(p), .. }) = out.first() {
                    counts.entry(p.station_id).or_default().push(p.msg_cnt);
                }
                a.extend(out);
                b.extend(dup.on_report(r, *now));
                if dup_mask[i] {
                    b.extend(dup.on_report(r, *now + 20));
                }
            }
            prop_assert_eq!(a, b);
            for seq in counts.values() {
                prop_assert!(seq.windows(2).all(|w| w[1] == (w[0] + 1) % 128));
            }
        }
    }
}
