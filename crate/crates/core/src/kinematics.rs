//! Stopping model and constant-velocity time-to-collision.

use core::fmt;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::geo::EnuVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KinematicsError {
    NegativeSpeed(f64),
    InvalidParam(&'static str),
}

impl fmt::Display for KinematicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KinematicsError::NegativeSpeed(v) => write!(f, "speed {v} m/s is negative"),
            KinematicsError::InvalidParam(name) => write!(f, "kinematics parameter `{name}` out of range"),
        }
    }
}

impl core::error::Error for KinematicsError {}

/// Driver reaction and braking constants.
///
/// The default deceleration makes braking from 64 km/h take 2.52 s, which
/// together with a 0.66 s reaction time gives a 3.18 s stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicsParams {
    pub t_think_s: f64,
    pub decel_mps2: f64,
    /// Separation at which contact is declared.
    pub collision_radius_m: f64,
}

impl Default for KinematicsParams {
    fn default() -> Self {
        KinematicsParams { t_think_s: 0.66, decel_mps2: 7.0547, collision_radius_m: 1.0 }
    }
}

impl KinematicsParams {
    /// Derive the deceleration from an observed braking time at `speed_mps`.
    pub fn from_braking_time(
        speed_mps: f64,
        t_think_s: f64,
        t_brake_s: f64,
        collision_radius_m: f64,
    ) -> Result<Self, KinematicsError> {
        if !(t_brake_s > 0.0 && speed_mps > 0.0) {
            return Err(KinematicsError::InvalidParam("t_brake_s"));
        }
        let k = KinematicsParams { t_think_s, decel_mps2: speed_mps / t_brake_s, collision_radius_m };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.t_think_s.is_finite() && self.t_think_s >= 0.0) {
            return Err(KinematicsError::InvalidParam("t_think_s"));
        }
        if !(self.decel_mps2.is_finite() && self.decel_mps2 > 0.0) {
            return Err(KinematicsError::InvalidParam("decel_mps2"));
        }
        if !(self.collision_radius_m.is_finite() && self.collision_radius_m >= 0.0) {
            return Err(KinematicsError::InvalidParam("collision_radius_m"));
        }
        Ok(())
    }
}

/// Position and velocity in a shared local frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyState {
    pub position: EnuVector,
    pub velocity_mps: EnuVector,
}

impl BodyState {
    pub fn new(position: EnuVector, velocity_mps: EnuVector) -> Self {
        BodyState { position, velocity_mps }
    }

    pub fn speed_mps(&self) -> f64 {
        self.velocity_mps.norm()
    }

    /// Constant-velocity extrapolation.
    pub fn advanced(&self, dt_s: f64) -> BodyState {
        BodyState { position: self.position + self.velocity_mps * dt_s, velocity_mps: self.velocity_mps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingProfile {
    pub stop_time_s: f64,
    pub stop_distance_m: f64,
}

pub fn stopping_profile(speed_mps: f64, k: &KinematicsParams) -> Result<StoppingProfile, KinematicsError> {
    if speed_mps.is_nan() || speed_mps < 0.0 {
        return Err(KinematicsError::NegativeSpeed(speed_mps));
    }
    Ok(StoppingProfile {
        stop_time_s: k.t_think_s + speed_mps / k.decel_mps2,
        stop_distance_m: speed_mps * k.t_think_s + speed_mps * speed_mps / (2.0 * k.decel_mps2),
    })
}

/// Time until the two bodies come within `k.collision_radius_m`, if ever.
///
/// Already-overlapping bodies return `Some(0.0)`.
pub fn ttc_cpa(vehicle: &BodyState, vru: &BodyState, k: &KinematicsParams) -> Option<f64> {
    ttc_with_radius(vehicle, vru, k.collision_radius_m)
}

pub fn ttc_with_radius(vehicle: &BodyState, vru: &BodyState, radius_m: f64) -> Option<f64> {
    let r = vru.position - vehicle.position;
    let u = vru.velocity_mps - vehicle.velocity_mps;
    // |r + u t|^2 = R^2  =>  a t^2 + 2 b t + c = 0
    let c = r.dot(r) - radius_m * radius_m;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = u.dot(u);
    let b = r.dot(u);
    if a == 0.0 || b >= 0.0 {
        return None;
    }
    // b^2 - a c rewritten as a R^2 - (r x u)^2, which is exact for collinear motion
    let cross = r.cross(u);
    let disc = a * radius_m * radius_m - cross * cross;
    if disc < 0.0 {
        return None;
    }
    // b < 0, so -b + sqrt(disc) has no cancellation; c / q is the nearer root.
    let q = -b + sqrt(disc);
    Some(c / q)
}

/// Whether a message with `ttc_s` to spare still leaves room to stop.
pub fn alert_deadline_met(ttc_s: f64, speed_mps: f64, k: &KinematicsParams) -> bool {
    match stopping_profile(speed_mps.max(0.0), k) {
        Ok(p) => ttc_s >= p.stop_time_s,
        Err(_) => false,
    }
}
