//! Per-stage latency distributions for the cellular path.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyDist {
    Fixed {
        ms: u64,
    },
    Uniform {
        lo_ms: u64,
        hi_ms: u64,
    },
    /// Samples above `cap_ms` are clamped to it.
    Lognormal {
        median_ms: f64,
        sigma: f64,
        cap_ms: u64,
    },
}

impl Default for LatencyDist {
    fn default() -> Self {
        LatencyDist::Lognormal { median_ms: 60.0, sigma: 0.5, cap_ms: 1_000 }
    }
}

impl LatencyDist {
    pub fn validate(&self) -> Result<(), &'static str> {
        match *self {
            LatencyDist::Fixed { .. } => Ok(()),
            LatencyDist::Uniform { lo_ms, hi_ms } if lo_ms <= hi_ms => Ok(()),
            LatencyDist::Uniform { .. } => Err("lo_ms exceeds hi_ms"),
            LatencyDist::Lognormal { median_ms, sigma, .. } => {
                if !(median_ms.is_finite() && median_ms > 0.0) {
                    Err("median_ms must be positive")
                } else if !(sigma.is_finite() && sigma >= 0.0) {
                    Err("sigma must be non-negative")
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Largest value this distribution can return.
    pub fn bound_ms(&self) -> u64 {
        match *self {
            LatencyDist::Fixed { ms } => ms,
            LatencyDist::Uniform { hi_ms, .. } => hi_ms,
            LatencyDist::Lognormal { cap_ms, .. } => cap_ms,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            LatencyDist::Fixed { ms } => ms,
            LatencyDist::Uniform { lo_ms, hi_ms } => rng.random_range(lo_ms..=hi_ms),
            LatencyDist::Lognormal { median_ms, sigma, cap_ms } => {
                let d = LogNormal::new(median_ms.ln(), sigma).expect("validated");
                let v: f64 = d.sample(rng);
                (v.round() as u64).min(cap_ms)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LatencyParams {
    /// VRU device to broker.
    pub uplink_ms: LatencyDist,
    /// Broker to middleware.
    pub broker_ms: LatencyDist,
    /// Middleware processing until the RSU send command.
    pub middleware_ms: LatencyDist,
}

impl LatencyParams {
    pub fn fixed(ms: u64) -> Self {
        let d = LatencyDist::Fixed { ms };
        LatencyParams { uplink_ms: d, broker_ms: d, middleware_ms: d }
    }

    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        self.uplink_ms.validate().map_err(|e| ("uplink_ms", e))?;
        self.broker_ms.validate().map_err(|e| ("broker_ms", e))?;
        self.middleware_ms.validate().map_err(|e| ("middleware_ms", e))?;
        Ok(())
    }

    pub fn bound_ms(&self) -> u64 {
        self.uplink_ms.bound_ms() + self.broker_ms.bound_ms() + self.middleware_ms.bound_ms()
    }
}
