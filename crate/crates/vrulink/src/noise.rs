//! GNSS error injection: isotropic Gaussian per axis plus fallback jumps.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use vrulink_core::geo::EnuVector;

/// A jump forced onto one entity's fix at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedJump {
    pub entity: String,
    pub t_ms: u64,
    pub offset: EnuVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub sigma_m: f64,
    pub outlier_prob: f64,
    pub outlier_mag_m: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scripted_jumps: Vec<ScriptedJump>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { sigma_m: 3.0, outlier_prob: 0.0, outlier_mag_m: 72.28, scripted_jumps: Vec::new() }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        if !(self.sigma_m.is_finite() && self.sigma_m >= 0.0) {
            return Err(("sigma_m", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return Err(("outlier_prob", "must lie in [0, 1]"));
        }
        if !(self.outlier_mag_m.is_finite() && self.outlier_mag_m >= 0.0) {
            return Err(("outlier_mag_m", "must be non-negative"));
        }
        if self.scripted_jumps.iter().any(|j| !j.offset.is_finite()) {
            return Err(("scripted_jumps", "offset must be finite"));
        }
        Ok(())
    }

    fn scripted(&self, entity: &str, t_ms: u64) -> Option<EnuVector> {
        self.scripted_jumps.iter().find(|j| j.entity == entity && j.t_ms == t_ms).map(|j| j.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Gaussian,
    Outlier,
    Scripted,
}

/// Error vector to add to a true position.
///
/// Three uniforms and two normals are drawn on every call, whatever the
/// outcome, so toggles never shift later draws.
pub fn sample_error<R: Rng + ?Sized>(
    p: &NoiseParams,
    entity: &str,
    t_ms: u64,
    force_outlier: bool,
    rng: &mut R,
) -> (EnuVector, ErrorKind) {
    let normal = Normal::new(0.0, p.sigma_m).expect("validated sigma");
    let gauss = EnuVector::new(normal.sample(rng), normal.sample(rng));
    let u: f64 = rng.random();
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let mag = rng.random::<f64>() * p.outlier_mag_m;
    if let Some(offset) = p.scripted(entity, t_ms) {
        return (offset, ErrorKind::Scripted);
    }
    if force_outlier || u < p.outlier_prob {
        return (EnuVector::from_heading(angle.to_degrees(), mag), ErrorKind::Outlier);
    }
    (gauss, ErrorKind::Gaussian)
}
