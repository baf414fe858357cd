//! DSRC safety-message codecs and the bus-side POTI report.
//!
//! Frames use a fixed-width big-endian layout. Offsets are normative:
//!
//! | bytes   | PSM field      | notes                          |
//! |---------|----------------|--------------------------------|
//! | 0       | type           | `0x20` PSM, `0x21` DENM        |
//! | 1       | version        | `0x01`                         |
//! | 2       | basic_type     | 0..=3                          |
//! | 3       | msg_cnt        | 0..=127                        |
//! | 4..8    | station_id     | u32                            |
//! | 8..10   | sec_mark_ms    | 0..=60999, 65535 unavailable   |
//! | 10..14  | lat_e7         | i32, 1e-7 deg                  |
//! | 14..18  | lon_e7         | i32, 1e-7 deg                  |
//! | 18..20  | accuracy_cm    | 65535 unavailable              |
//! | 20..22  | speed_cmps     | 0.01 m/s, 65535 unavailable    |
//! | 22..24  | heading_cdeg   | 0..=35999, 65535 unavailable   |
//!
//! A DENM repeats those 24 bytes with type `0x21`, then appends
//! cause_code (24), sub_cause (25), sequence_number (26..28),
//! dest_center_lat_e7 (28..32), dest_center_lon_e7 (32..36),
//! dest_radius_m (36..38) and hop_limit (38).

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use libm::round;
use serde::{Deserialize, Serialize};

use crate::agent::{Activity, PotiSample};
use crate::geo::{GeoError, GeoPoint};

pub const PSM_TYPE: u8 = 0x20;
pub const DENM_TYPE: u8 = 0x21;
pub const WIRE_VERSION: u8 = 0x01;
pub const PSM_LEN: usize = 24;
pub const DENM_LEN: usize = 39;

pub const SEC_MARK_UNAVAILABLE: u16 = 65_535;
pub const ACCURACY_UNAVAILABLE: u16 = 65_535;
pub const SPEED_UNAVAILABLE: u16 = 65_535;
pub const HEADING_UNAVAILABLE: u16 = 65_535;

/// DENM cause code for human presence on the road.
pub const CAUSE_HUMAN_PRESENCE: u8 = 12;

const LAT_E7_MAX: i32 = 900_000_000;
const LON_E7_MIN: i32 = -1_800_000_000;
const LON_E7_MAX: i32 = 1_799_999_999;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecError {
    Truncated {
        needed: usize,
        got: usize,
    },
    TrailingBytes {
        expected: usize,
        got: usize,
    },
    WrongType(u8),
    WrongVersion(u8),
    /// A field is outside its documented range; carries the field name.
    OutOfRange(&'static str),
    Json(String),
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::Truncated { needed, got } => write!(f, "truncated frame: need {needed} bytes, got {got}"),
            CodecError::TrailingBytes { expected, got } => {
                write!(f, "frame length {got} exceeds expected {expected}")
            }
            CodecError::WrongType(t) => write!(f, "wrong message type 0x{t:02x}"),
            CodecError::WrongVersion(v) => write!(f, "unsupported wire version {v}"),
            CodecError::OutOfRange(field) => write!(f, "{field} out of range"),
            CodecError::Json(e) => write!(f, "malformed POTI report: {e}"),
        }
    }
}

impl core::error::Error for CodecError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum BasicType {
    Unavailable = 0,
    Pedestrian = 1,
    Cyclist = 2,
    PublicSafety = 3,
}

impl TryFrom<u8> for BasicType {
    type Error = CodecError;
    fn try_from(v: u8) -> Result<Self, CodecError> {
        Ok(match v {
            0 => BasicType::Unavailable,
            1 => BasicType::Pedestrian,
            2 => BasicType::Cyclist,
            3 => BasicType::PublicSafety,
            _ => return Err(CodecError::OutOfRange("basic_type")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PsmMessage {
    pub basic_type: BasicType,
    pub msg_cnt: u8,
    pub station_id: u32,
    pub sec_mark_ms: u16,
    pub lat_e7: i32,
    pub lon_e7: i32,
    pub accuracy_cm: u16,
    pub speed_cmps: u16,
    pub heading_cdeg: u16,
}

impl PsmMessage {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.msg_cnt > 127 {
            return Err(CodecError::OutOfRange("msg_cnt"));
        }
        if self.sec_mark_ms > 60_999 && self.sec_mark_ms != SEC_MARK_UNAVAILABLE {
            return Err(CodecError::OutOfRange("sec_mark"));
        }
        check_lat(self.lat_e7, "lat")?;
        check_lon(self.lon_e7, "lon")?;
        if self.heading_cdeg > 35_999 && self.heading_cdeg != HEADING_UNAVAILABLE {
            return Err(CodecError::OutOfRange("heading"));
        }
        Ok(())
    }

    pub fn position(&self) -> Result<GeoPoint, GeoError> {
        GeoPoint::new(self.lat_e7 as f64 * 1e-7, self.lon_e7 as f64 * 1e-7)
    }

    pub fn speed_mps(&self) -> Option<f64> {
        (self.speed_cmps != SPEED_UNAVAILABLE).then(|| self.speed_cmps as f64 / 100.0)
    }

    pub fn heading_deg(&self) -> Option<f64> {
        (self.heading_cdeg != HEADING_UNAVAILABLE).then(|| self.heading_cdeg as f64 / 100.0)
    }

    pub fn accuracy_m(&self) -> Option<f64> {
        (self.accuracy_cm != ACCURACY_UNAVAILABLE).then(|| self.accuracy_cm as f64 / 100.0)
    }

    fn write_body(&self, type_byte: u8, out: &mut Vec<u8>) {
        out.push(type_byte);
        out.push(WIRE_VERSION);
        out.push(self.basic_type as u8);
        out.push(self.msg_cnt);
        out.extend_from_slice(&self.station_id.to_be_bytes());
        out.extend_from_slice(&self.sec_mark_ms.to_be_bytes());
        out.extend_from_slice(&self.lat_e7.to_be_bytes());
        out.extend_from_slice(&self.lon_e7.to_be_bytes());
        out.extend_from_slice(&self.accuracy_cm.to_be_bytes());
        out.extend_from_slice(&self.speed_cmps.to_be_bytes());
        out.extend_from_slice(&self.heading_cdeg.to_be_bytes());
    }

    fn read_body(b: &[u8]) -> Result<PsmMessage, CodecError> {
        let m = PsmMessage {
            basic_type: BasicType::try_from(b[2])?,
            msg_cnt: b[3],
            station_id: be_u32(&b[4..8]),
            sec_mark_ms: be_u16(&b[8..10]),
            lat_e7: be_u32(&b[10..14]) as i32,
            lon_e7: be_u32(&b[14..18]) as i32,
            accuracy_cm: be_u16(&b[18..20]),
            speed_cmps: be_u16(&b[20..22]),
            heading_cdeg: be_u16(&b[22..24]),
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DenmMessage {
    /// Identity and position of the event, laid out as in a PSM.
    pub header: PsmMessage,
    pub cause_code: u8,
    pub sub_cause: u8,
    pub sequence_number: u16,
    pub dest_center_lat_e7: i32,
    pub dest_center_lon_e7: i32,
    pub dest_radius_m: u16,
    pub hop_limit: u8,
}

impl DenmMessage {
    pub fn validate(&self) -> Result<(), CodecError> {
        self.header.validate()?;
        check_lat(self.dest_center_lat_e7, "dest_lat")?;
        check_lon(self.dest_center_lon_e7, "dest_lon")?;
        if self.dest_radius_m == 0 {
            return Err(CodecError::OutOfRange("dest_radius"));
        }
        Ok(())
    }

    pub fn dest_center(&self) -> Result<GeoPoint, GeoError> {
        GeoPoint::new(self.dest_center_lat_e7 as f64 * 1e-7, self.dest_center_lon_e7 as f64 * 1e-7)
    }
}

/// Any frame that can appear on the DSRC channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Psm(PsmMessage),
    Denm(DenmMessage),
}

impl Frame {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        match self {
            Frame::Psm(m) => encode_psm(m),
            Frame::Denm(m) => encode_denm(m),
        }
    }

    pub fn station_id(&self) -> u32 {
        match self {
            Frame::Psm(m) => m.station_id,
            Frame::Denm(m) => m.header.station_id,
        }
    }
}

fn check_lat(v: i32, field: &'static str) -> Result<(), CodecError> {
    if !(-LAT_E7_MAX..=LAT_E7_MAX).contains(&v) {
        return Err(CodecError::OutOfRange(field));
    }
    Ok(())
}

fn check_lon(v: i32, field: &'static str) -> Result<(), CodecError> {
    if !(LON_E7_MIN..=LON_E7_MAX).contains(&v) {
        return Err(CodecError::OutOfRange(field));
    }
    Ok(())
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn check_header(bytes: &[u8], type_byte: u8, len: usize) -> Result<(), CodecError> {
    if bytes.len() < len {
        return Err(CodecError::Truncated { needed: len, got: bytes.len() });
    }
    if bytes[0] != type_byte {
        return Err(CodecError::WrongType(bytes[0]));
    }
    if bytes[1] != WIRE_VERSION {
        return Err(CodecError::WrongVersion(bytes[1]));
    }
    if bytes.len() > len {
        return Err(CodecError::TrailingBytes { expected: len, got: bytes.len() });
    }
    Ok(())
}

pub fn encode_psm(m: &PsmMessage) -> Result<Vec<u8>, CodecError> {
    m.validate()?;
    let mut out = Vec::with_capacity(PSM_LEN);
    m.write_body(PSM_TYPE, &mut out);
    Ok(out)
}

pub fn decode_psm(bytes: &[u8]) -> Result<PsmMessage, CodecError> {
    check_header(bytes, PSM_TYPE, PSM_LEN)?;
    PsmMessage::read_body(bytes)
}

pub fn encode_denm(m: &DenmMessage) -> Result<Vec<u8>, CodecError> {
    m.validate()?;
    let mut out = Vec::with_capacity(DENM_LEN);
    m.header.write_body(DENM_TYPE, &mut out);
    out.push(m.cause_code);
    out.push(m.sub_cause);
    out.extend_from_slice(&m.sequence_number.to_be_bytes());
    out.extend_from_slice(&m.dest_center_lat_e7.to_be_bytes());
    out.extend_from_slice(&m.dest_center_lon_e7.to_be_bytes());
    out.extend_from_slice(&m.dest_radius_m.to_be_bytes());
    out.push(m.hop_limit);
    Ok(out)
}

pub fn decode_denm(bytes: &[u8]) -> Result<DenmMessage, CodecError> {
    check_header(bytes, DENM_TYPE, DENM_LEN)?;
    let m = DenmMessage {
        header: PsmMessage::read_body(bytes)?,
        cause_code: bytes[24],
        sub_cause: bytes[25],
        sequence_number: be_u16(&bytes[26..28]),
        dest_center_lat_e7: be_u32(&bytes[28..32]) as i32,
        dest_center_lon_e7: be_u32(&bytes[32..36]) as i32,
        dest_radius_m: be_u16(&bytes[36..38]),
        hop_limit: bytes[38],
    };
    m.validate()?;
    Ok(m)
}

/// Dispatch on the type byte.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, CodecError> {
    match bytes.first() {
        None => Err(CodecError::Truncated { needed: PSM_LEN, got: 0 }),
        Some(&PSM_TYPE) => decode_psm(bytes).map(Frame::Psm),
        Some(&DENM_TYPE) => decode_denm(bytes).map(Frame::Denm),
        Some(&t) => Err(CodecError::WrongType(t)),
    }
}

/// POTI report as carried on the bus, serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotiReport {
    pub id: String,
    pub ts_ms: u64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub accuracy_m: f64,
    pub activity: Activity,
}

impl PotiReport {
    pub fn from_sample(id: &str, s: &PotiSample) -> Self {
        PotiReport {
            id: id.to_string(),
            ts_ms: s.ts_ms,
            lat_deg: s.position.lat_deg(),
            lon_deg: s.position.lon_deg(),
            speed_mps: s.speed_mps,
            heading_deg: s.heading_deg,
            accuracy_m: s.accuracy_m,
            activity: s.activity,
        }
    }

    pub fn position(&self) -> Result<GeoPoint, GeoError> {
        GeoPoint::new(self.lat_deg, self.lon_deg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.id.is_empty() {
            return Err(CodecError::OutOfRange("id"));
        }
        self.position().map_err(|e| match e {
            GeoError::Longitude(_) => CodecError::OutOfRange("lon_deg"),
            _ => CodecError::OutOfRange("lat_deg"),
        })?;
        if !(self.speed_mps.is_finite() && self.speed_mps >= 0.0) {
            return Err(CodecError::OutOfRange("speed_mps"));
        }
        if !(self.heading_deg.is_finite() && (0.0..360.0).contains(&self.heading_deg)) {
            return Err(CodecError::OutOfRange("heading_deg"));
        }
        if !(self.accuracy_m.is_finite() && self.accuracy_m >= 0.0) {
            return Err(CodecError::OutOfRange("accuracy_m"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        // Plain data with string keys cannot fail to serialize.
        serde_json::to_vec(self).expect("POTI report serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CodecError> {
        let r: PotiReport = serde_json::from_slice(bytes).map_err(|e| CodecError::Json(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }
}

fn quantize_saturating(v: f64, scale: f64, max: u16) -> u16 {
    let q = round(v * scale);
    if q.is_nan() || q <= 0.0 {
        0
    } else if q >= max as f64 {
        max
    } else {
        q as u16
    }
}

/// Quantize a report into a PSM. `ref_ms` fixes the second-of-minute mark.
pub fn poti_to_psm(r: &PotiReport, msg_cnt: u8, station_id: u32, ref_ms: u64) -> PsmMessage {
    let heading = round(r.heading_deg * 100.0) as i64;
    PsmMessage {
        basic_type: BasicType::Pedestrian,
        msg_cnt: msg_cnt % 128,
        station_id,
        sec_mark_ms: (ref_ms % 60_000) as u16,
        lat_e7: (round(r.lat_deg * 1e7) as i64).clamp(-LAT_E7_MAX as i64, LAT_E7_MAX as i64) as i32,
        lon_e7: (round(r.lon_deg * 1e7) as i64).clamp(LON_E7_MIN as i64, LON_E7_MAX as i64) as i32,
        accuracy_cm: quantize_saturating(r.accuracy_m, 100.0, ACCURACY_UNAVAILABLE - 1),
        speed_cmps: quantize_saturating(r.speed_mps, 100.0, SPEED_UNAVAILABLE - 1),
        heading_cdeg: heading.rem_euclid(36_000) as u16,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{enu_project, haversine_distance};
    use alloc::vec;
    use proptest::prelude::*;

    fn sample_psm() -> PsmMessage {
        PsmMessage {
            basic_type: BasicType::Pedestrian,
            msg_cnt: 0,
            station_id: 1,
            sec_mark_ms: 0,
            lat_e7: 0,
            lon_e7: 0,
            accuracy_cm: 100,
            speed_cmps: 150,
            heading_cdeg: 9000,
        }
    }

    fn hex(b: &[u8]) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        for x in b {
            write!(s, "{x:02x}").unwrap();
        }
        s
    }

    #[test]
    fn documented_psm_bytes() {
        let bytes = encode_psm(&sample_psm()).unwrap();
        assert_eq!(bytes.len(), PSM_LEN);
        assert_eq!(hex(&bytes), "200101000000000100000000000000000000006400962328");
    }

    #[test]
    fn psm_range_errors() {
        let mut m = sample_psm();
        m.lat_e7 = 900_000_001;
        let err = encode_psm(&m).unwrap_err();
        assert_eq!(err, CodecError::OutOfRange("lat"));
        assert_eq!(alloc::format!("{err}"), "lat out of range");

        let mut m = sample_psm();
        m.lon_e7 = 1_800_000_000;
        assert_eq!(encode_psm(&m), Err(CodecError::OutOfRange("lon")));
        let mut m = sample_psm();
        m.msg_cnt = 128;
        assert_eq!(encode_psm(&m), Err(CodecError::OutOfRange("msg_cnt")));
        let mut m = sample_psm();
        m.sec_mark_ms = 61_000;
        assert_eq!(encode_psm(&m), Err(CodecError::OutOfRange("sec_mark")));
        m.sec_mark_ms = SEC_MARK_UNAVAILABLE;
        assert!(encode_psm(&m).is_ok());
        let mut m = sample_psm();
        m.heading_cdeg = 36_000;
        assert_eq!(encode_psm(&m), Err(CodecError::OutOfRange("heading")));
    }

    #[test]
    fn decode_errors_are_distinct() {
        let mut zeros = vec![0u8; PSM_LEN];
        zeros[0] = PSM_TYPE;
        zeros[1] = WIRE_VERSION;
        let m = decode_psm(&zeros).unwrap();
        assert_eq!(m.basic_type, BasicType::Unavailable);
        assert_eq!(m.station_id, 0);

        assert_eq!(decode_psm(&zeros[..23]), Err(CodecError::Truncated { needed: 24, got: 23 }));
        let mut wrong = zeros.clone();
        wrong[0] = 0x21;
        assert_eq!(decode_psm(&wrong), Err(CodecError::WrongType(0x21)));
        let mut wrong = zeros.clone();
        wrong[1] = 2;
        assert_eq!(decode_psm(&wrong), Err(CodecError::WrongVersion(2)));
        let mut wrong = zeros.clone();
        wrong[2] = 9;
        assert_eq!(decode_psm(&wrong), Err(CodecError::OutOfRange("basic_type")));
        let mut long = zeros.clone();
        long.push(0);
        assert!(matches!(decode_psm(&long), Err(CodecError::TrailingBytes { .. })));
        assert!(matches!(decode_frame(&[]), Err(CodecError::Truncated { .. })));
    }

    fn sample_denm() -> DenmMessage {
        DenmMessage {
            header: sample_psm(),
            cause_code: CAUSE_HUMAN_PRESENCE,
            sub_cause: 0,
            sequence_number: 7,
            dest_center_lat_e7: 577_000_000,
            dest_center_lon_e7: 119_000_000,
            dest_radius_m: 500,
            hop_limit: 0,
        }
    }

    #[test]
    fn denm_layout() {
        let d = sample_denm();
        let bytes = encode_denm(&d).unwrap();
        assert_eq!(bytes.len(), DENM_LEN);
        assert_eq!(bytes[0], DENM_TYPE);
        assert_eq!(&bytes[2..24], &encode_psm(&d.header).unwrap()[2..24]);
        assert_eq!(bytes[24], 12);
        assert_eq!(&bytes[26..28], &[0, 7]);
        assert_eq!(&bytes[36..38], &500u16.to_be_bytes());
        assert_eq!(bytes[38], 0);
        let back = decode_denm(&bytes).unwrap();
        assert_eq!(back.hop_limit, 0);
        assert_eq!(back, d);
        assert_eq!(decode_frame(&bytes), Ok(Frame::Denm(d)));
    }

    #[test]
    fn denm_rejects_zero_radius() {
        let mut d = sample_denm();
        d.dest_radius_m = 0;
        assert_eq!(encode_denm(&d), Err(CodecError::OutOfRange("dest_radius")));
        assert_eq!(decode_denm(&encode_psm(&d.header).unwrap()), Err(CodecError::Truncated { needed: 39, got: 24 }));
    }

    fn report(lat: f64, lon: f64, speed: f64, heading: f64, ts: u64) -> PotiReport {
        PotiReport {
            id: "7".into(),
            ts_ms: ts,
            lat_deg: lat,
            lon_deg: lon,
            speed_mps: speed,
            heading_deg: heading,
            accuracy_m: 3.0,
            activity: Activity::Walking,
        }
    }

    #[test]
    fn poti_quantization_examples() {
        let p = poti_to_psm(&report(57.7089000, 11.9, 1.5, 90.0, 0), 0, 7, 0);
        assert_eq!(p.lat_e7, 577_089_000);
        assert_eq!(p.lon_e7, 119_000_000);
        assert_eq!(p.heading_cdeg, 9000);
        assert_eq!(p.accuracy_cm, 300);

        let p = poti_to_psm(&report(0.0, 0.0, 700.0, 0.0, 0), 0, 7, 0);
        assert_eq!(p.speed_cmps, 65_534);

        let p = poti_to_psm(&report(0.0, 0.0, 0.0, 359.999, 0), 130, 7, 61_000);
        assert_eq!(p.sec_mark_ms, 1_000);
        assert_eq!(p.heading_cdeg, 0);
        assert_eq!(p.msg_cnt, 2);

        // half away from zero
        let p = poti_to_psm(&report(-0.00000005, 0.00000005, 0.0, 0.0, 0), 0, 7, 0);
        assert_eq!((p.lat_e7, p.lon_e7), (-1, 1));
    }

    #[test]
    fn report_json_wire_form() {
        let r = report(57.7, 11.9, 1.2, 45.0, 1_000);
        let json = String::from_utf8(r.to_json()).unwrap();
        assert_eq!(
            json,
            r#"{"id":"7","ts_ms":1000,"lat_deg":57.7,"lon_deg":11.9,"speed_mps":1.2,"heading_deg":45.0,"accuracy_m":3.0,"activity":"walking"}"#
        );
        assert_eq!(PotiReport::from_json(json.as_bytes()).unwrap(), r);

        let extra = json.replace("}", r#","x":1}"#);
        assert!(matches!(PotiReport::from_json(extra.as_bytes()), Err(CodecError::Json(_))));
        let bad = json.replace("57.7", "97.7");
        assert_eq!(PotiReport::from_json(bad.as_bytes()), Err(CodecError::OutOfRange("lat_deg")));
        assert!(PotiReport::from_json(b"not json").is_err());
    }

    fn arb_psm() -> impl Strategy<Value = PsmMessage> {
        (
            0u8..4,
            0u8..128,
            any::<u32>(),
            prop_oneof![0u16..61_000, Just(SEC_MARK_UNAVAILABLE)],
            -LAT_E7_MAX..=LAT_E7_MAX,
            LON_E7_MIN..=LON_E7_MAX,
            any::<u16>(),
            any::<u16>(),
            prop_oneof![0u16..36_000, Just(HEADING_UNAVAILABLE)],
        )
            .prop_map(|(bt, cnt, sid, sec, lat, lon, acc, spd, hdg)| PsmMessage {
                basic_type: BasicType::try_from(bt).unwrap(),
                msg_cnt: cnt,
                station_id: sid,
                sec_mark_ms: sec,
                lat_e7: lat,
                lon_e7: lon,
                accuracy_cm: acc,
                speed_cmps: spd,
                heading_cdeg: hdg,
            })
    }

    proptest! {
        #[test]
        fn psm_round_trip_is_canonical(m in arb_psm()) {
            let a = encode_psm(&m).unwrap();
            prop_assert_eq!(decode_psm(&a).unwrap(), m);
            prop_assert_eq!(encode_psm(&m.clone()).unwrap(), a);
        }

        #[test]
        fn quantization_error_bound(lat in -60.0f64..60.0, lon in -179.0f64..179.0, speed in 0.0f64..600.0) {
            let r = report(lat, lon, speed, 10.0, 0);
            let psm = decode_psm(&encode_psm(&poti_to_psm(&r, 0, 1, 0)).unwrap()).unwrap();
            let truth = r.position().unwrap();
            let back = psm.position().unwrap();
            let d = enu_project(truth, back).unwrap();
            prop_assert!(d.east_m.abs() < 0.02 && d.north_m.abs() < 0.02);
            prop_assert!(haversine_distance(truth, back) < 0.03);
            prop_assert!((psm.speed_mps().unwrap() - speed).abs() < 0.005);
        }
    }
}
