//! Declarative scenario description and the built-in reference scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vrulink_core::agent::{Activity, SmootherParams, TriggerParams};
use vrulink_core::dsrc::ChannelParams;
use vrulink_core::geo::{enu_unproject, EnuVector, GeoPoint, Geofence};
use vrulink_core::kinematics::KinematicsParams;
use vrulink_core::middleware::{MiddlewareMode, RsuRegistration};

use crate::latency::LatencyParams;
use crate::noise::NoiseParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, reason: impl ToString) -> Self {
        ScenarioError::Invalid { field: field.into(), reason: reason.to_string() }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Invalid { field, .. } => Some(field),
            ScenarioError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Pedestrian,
    Vehicle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub id: String,
    pub kind: EntityKind,
    /// Start position followed by the points to visit, in order.
    pub waypoints: Vec<GeoPoint>,
    pub speed_mps: f64,
    #[serde(default)]
    pub depart_ms: u64,
    /// Pedestrians only.
    #[serde(default)]
    pub activity: Activity,
    /// Vehicles only: carries an on-board unit.
    #[serde(default = "yes")]
    pub obu: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuSpec {
    #[serde(flatten)]
    pub registration: RsuRegistration,
    /// Antenna position when it differs from the registration position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radio_position: Option<GeoPoint>,
}

impl RsuSpec {
    pub fn radio_position(&self) -> GeoPoint {
        self.radio_position.unwrap_or(self.registration.position)
    }
}

/// Interval during which the broker drops everything it receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outage {
    pub from_ms: u64,
    pub to_ms: u64,
}

fn default_step() -> u64 {
    100
}

fn default_visual() -> f64 {
    20.0
}

fn default_smoother() -> Option<SmootherParams> {
    Some(SmootherParams::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step_ms: u64,
    pub duration_ms: u64,
    pub geofence: Geofence,
    pub rsus: Vec<RsuSpec>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub latency: LatencyParams,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub trigger: TriggerParams,
    /// `null` publishes raw fixes.
    #[serde(default = "default_smoother")]
    pub smoother: Option<SmootherParams>,
    #[serde(default)]
    pub kinematics: KinematicsParams,
    #[serde(default)]
    pub middleware_mode: MiddlewareMode,
    pub entities: Vec<EntitySpec>,
    #[serde(default = "default_visual")]
    pub visual_detection_m: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub broker_outages: Vec<Outage>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::invalid(if path == "." { "<root>".into() } else { path }, e.into_inner())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// The local frame every module shares.
    pub fn origin(&self) -> GeoPoint {
        self.geofence.center()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return Err(ScenarioError::invalid("name", "must not be empty"));
        }
        if self.name.contains([',', '"', '\n', '\r', '/']) {
            return Err(ScenarioError::invalid("name", "must not contain commas, quotes, slashes or newlines"));
        }
        if self.step_ms == 0 {
            return Err(ScenarioError::invalid("step_ms", "must be positive"));
        }
        if self.duration_ms != 0 && self.duration_ms < self.step_ms {
            return Err(ScenarioError::invalid("duration_ms", "must be 0 or at least step_ms"));
        }
        self.channel.validate().map_err(|e| ScenarioError::invalid(format!("channel.{}", e.0), "out of range"))?;
        self.latency.validate().map_err(|(f, r)| ScenarioError::invalid(format!("latency.{f}"), r))?;
        self.noise.validate().map_err(|(f, r)| ScenarioError::invalid(format!("noise.{f}"), r))?;
        self.trigger.validate().map_err(|e| ScenarioError::invalid("trigger", e))?;
        if let Some(s) = &self.smoother {
            s.validate().map_err(|e| ScenarioError::invalid("smoother", e))?;
        }
        self.kinematics.validate().map_err(|e| ScenarioError::invalid("kinematics", e))?;
        if !(self.visual_detection_m.is_finite() && self.visual_detection_m >= 0.0) {
            return Err(ScenarioError::invalid("visual_detection_m", "must be non-negative"));
        }
        let origin = self.origin();
        let mut ids = std::collections::BTreeSet::new();
        for (i, r) in self.rsus.iter().enumerate() {
            let reg = &r.registration;
            if !(reg.relevance_radius_m.is_finite() && reg.relevance_radius_m > 0.0) {
                return Err(ScenarioError::invalid(format!("rsus[{i}].relevance_radius_m"), "must be positive"));
            }
            if !ids.insert(reg.rsu_id.clone()) {
                return Err(ScenarioError::invalid(format!("rsus[{i}].rsu_id"), "duplicate id"));
            }
            vrulink_core::geo::enu_project(origin, r.radio_position())
                .map_err(|e| ScenarioError::invalid(format!("rsus[{i}].position"), e))?;
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.id.is_empty() || !ids.insert(e.id.clone()) {
                return Err(ScenarioError::invalid(format!("entities[{i}].id"), "empty or duplicate id"));
            }
            if e.id.contains(['/', '+', '#', ',', '"', ':']) {
                return Err(ScenarioError::invalid(
                    format!("entities[{i}].id"),
                    "must be a single topic segment without commas, quotes or colons",
                ));
            }
            if e.waypoints.is_empty() {
                return Err(ScenarioError::invalid(
                    format!("entities[{i}].waypoints"),
                    "at least one waypoint required",
                ));
            }
            if !(e.speed_mps.is_finite() && e.speed_mps >= 0.0) {
                return Err(ScenarioError::invalid(format!("entities[{i}].speed_mps"), "must be non-negative"));
            }
            for (j, w) in e.waypoints.iter().enumerate() {
                vrulink_core::geo::enu_project(origin, *w)
                    .map_err(|err| ScenarioError::invalid(format!("entities[{i}].waypoints[{j}]"), err))?;
            }
        }
        for (i, o) in self.broker_outages.iter().enumerate() {
            if o.to_ms < o.from_ms {
                return Err(ScenarioError::invalid(format!("broker_outages[{i}]"), "to_ms before from_ms"));
            }
        }
        Ok(())
    }
}

pub const URBAN_COVERAGE: &str = "urban-coverage";
pub const TRACK_OCCLUSION: &str = "track-occlusion";
pub const BRIDGE_OUTLIER: &str = "bridge-outlier";

/// 64 km/h.
pub const TRACK_SPEED_MPS: f64 = 64.0 / 3.6;

fn at(origin: GeoPoint, east: f64, north: f64) -> GeoPoint {
    enu_unproject(origin, EnuVector::new(east, north)).expect("reference geometry is local")
}

fn rsu(origin: GeoPoint, id: &str, east: f64, north: f64, radius: f64) -> RsuSpec {
    RsuSpec {
        registration: RsuRegistration {
            rsu_id: id.into(),
            position: at(origin, east, north),
            relevance_radius_m: radius,
        },
        radio_position: None,
    }
}

fn entity(origin: GeoPoint, id: &str, kind: EntityKind, path: &[(f64, f64)], speed_mps: f64) -> EntitySpec {
    EntitySpec {
        id: id.into(),
        kind,
        waypoints: path.iter().map(|(e, n)| at(origin, *e, *n)).collect(),
        speed_mps,
        depart_ms: 0,
        activity: Activity::Walking,
        obu: true,
    }
}

fn base(name: &str, origin: GeoPoint, duration_ms: u64, fence_m: f64) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        seed: 42,
        step_ms: 100,
        duration_ms,
        geofence: Geofence::new(origin, fence_m).expect("positive radius"),
        rsus: Vec::new(),
        channel: ChannelParams::default(),
        latency: LatencyParams::default(),
        noise: NoiseParams::default(),
        trigger: TriggerParams::default(),
        smoother: Some(SmootherParams::default()),
        kinematics: KinematicsParams::default(),
        middleware_mode: MiddlewareMode::Psm,
        entities: Vec::new(),
        visual_detection_m: 20.0,
        broker_outages: Vec::new(),
    }
}

/// A vehicle drives 600 m straight past a window-mounted RSU; a VRU stands
/// beside the road near the RSU.
pub fn urban_coverage() -> ScenarioSpec {
    let origin = GeoPoint::new(57.7067, 11.9386).expect("valid");
    let mut s = base(URBAN_COVERAGE, origin, 75_000, 2_000.0);
    s.rsus.push(rsu(origin, "rsu-window", 0.0, 12.0, 500.0));
    s.entities.push(entity(origin, "car", EntityKind::Vehicle, &[(-300.0, 0.0), (300.0, 0.0)], 30.0 / 3.6));
    let mut vru = entity(origin, "101", EntityKind::Pedestrian, &[(6.0, 8.0)], 0.0);
    vru.activity = Activity::Standing;
    s.entities.push(vru);
    s
}

/// A vehicle at 64 km/h approaches a pedestrian who crosses its path from
/// behind a parked truck. Both reach the crossing point at the same time.
pub fn track_occlusion() -> ScenarioSpec {
    let origin = GeoPoint::new(57.7764, 12.7696).expect("valid");
    let mut s = base(TRACK_OCCLUSION, origin, 20_000, 1_500.0);
    s.rsus.push(rsu(origin, "rsu-field", 10.0, -30.0, 400.0));
    let start_x = -250.0;
    let car = entity(origin, "car", EntityKind::Vehicle, &[(start_x, 0.0), (150.0, 0.0)], TRACK_SPEED_MPS);
    let walk = 1.4;
    let meet_s = -start_x / TRACK_SPEED_MPS;
    let ped = entity(origin, "7", EntityKind::Pedestrian, &[(0.0, -walk * meet_s), (0.0, 15.0)], walk);
    let mut truck = entity(origin, "truck", EntityKind::Vehicle, &[(-7.0, -6.0)], 0.0);
    truck.obu = false;
    s.entities.extend([car, ped, truck]);
    s
}

/// A slow walk across a bridge with one network-positioning fallback fix
/// that lands 70 m away on the far side.
pub fn bridge_outlier() -> ScenarioSpec {
    let origin = GeoPoint::new(57.7095, 11.9450).expect("valid");
    let mut s = base(BRIDGE_OUTLIER, origin, 30_000, 2_000.0);
    s.rsus.push(rsu(origin, "rsu-quay", 0.0, 25.0, 500.0));
    s.entities.push(entity(origin, "201", EntityKind::Pedestrian, &[(0.0, 0.0), (30.0, 0.0)], 1.0));
    s.entities.push(entity(origin, "car", EntityKind::Vehicle, &[(20.0, 40.0)], 0.0));
    s.noise.scripted_jumps.push(crate::noise::ScriptedJump {
        entity: "201".into(),
        t_ms: 15_000,
        offset: EnuVector::new(0.0, 70.0),
    });
    s
}

pub fn reference_scenarios() -> Vec<ScenarioSpec> {
    vec![urban_coverage(), track_occlusion(), bridge_outlier()]
}

pub fn reference_scenario(name: &str) -> Option<ScenarioSpec> {
    reference_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vrulink_core::geo::haversine_distance;

    #[test]
    fn references_validate_and_round_trip() {
        for s in reference_scenarios() {
            s.validate().unwrap();
            let back = ScenarioSpec::from_json(&s.to_json_pretty()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn occlusion_paths_meet() {
        let s = track_occlusion();
        let car = &s.entities[0];
        let ped = &s.entities[1];
        let t_car = haversine_distance(car.waypoints[0], s.origin()) / car.speed_mps;
        let t_ped = haversine_distance(ped.waypoints[0], s.origin()) / ped.speed_mps;
        assert!((t_car - t_ped).abs() < 1e-3);
    }

    #[test]
    fn errors_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&track_occlusion().to_json_pretty()).unwrap();
        v["rsus"][0]["relevance_radius_m"] = (-1.0).into();
        let err = ScenarioSpec::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.field(), Some("rsus[0].relevance_radius_m"));

        let mut v: serde_json::Value = serde_json::from_str(&track_occlusion().to_json_pretty()).unwrap();
        v["entities"][1]["waypoints"][0]["lat_deg"] = 95.0.into();
        let err = ScenarioSpec::from_json(&v.to_string()).unwrap_err();
        assert!(err.field().unwrap().starts_with("entities[1].waypoints[0]"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&track_occlusion().to_json_pretty()).unwrap();
        v.as_object_mut().unwrap().remove("duration_ms");
        let err = ScenarioSpec::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("duration_ms"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&track_occlusion().to_json_pretty()).unwrap();
        v["step_ms"] = 0.into();
        assert_eq!(ScenarioSpec::from_json(&v.to_string()).unwrap_err().field(), Some("step_ms"));
    }

    #[test]
    fn zero_duration_is_allowed() {
        let mut s = track_occlusion();
        s.duration_ms = 0;
        assert!(s.validate().is_ok());
        s.duration_ms = 50;
        assert_eq!(s.validate().unwrap_err().field(), Some("duration_ms"));
    }
}
