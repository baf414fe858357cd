//! WGS84 positions, a local east/north frame, and circular geofences.

use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use libm::{asin, atan2, cos, sin, sqrt};
use serde::{Deserialize, Serialize};

/// Mean Earth radius shared by every distance and projection in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest latitude offset for which [`enu_project`] is accepted.
pub const MAX_PROJECTION_SPAN_DEG: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeoError {
    Latitude(f64),
    Longitude(f64),
    Radius(f64),
    NonFinite,
    /// The point is too far from the origin for the planar approximation.
    ProjectionSpan(f64),
}

impl fmt::Display for GeoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeoError::Latitude(v) => write!(f, "latitude {v} outside [-90, 90]"),
            GeoError::Longitude(v) => write!(f, "longitude {v} outside [-180, 180)"),
            GeoError::Radius(v) => write!(f, "geofence radius {v} must be positive and finite"),
            GeoError::NonFinite => f.write_str("non-finite coordinate"),
            GeoError::ProjectionSpan(d) => {
                write!(f, "latitude offset {d} deg exceeds the {MAX_PROJECTION_SPAN_DEG} deg projection limit")
            }
        }
    }
}

impl core::error::Error for GeoError {}

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = GeoError;
    fn try_from(raw: RawGeoPoint) -> Result<Self, GeoError> {
        GeoPoint::new(raw.lat_deg, raw.lon_deg)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint { lat_deg: p.lat_deg, lon_deg: p.lon_deg }
    }
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::Latitude(lat_deg));
        }
        if !(-180.0..180.0).contains(&lon_deg) {
            return Err(GeoError::Longitude(lon_deg));
        }
        Ok(GeoPoint { lat_deg, lon_deg })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.7}, {:.7})", self.lat_deg, self.lon_deg)
    }
}

/// Planar displacement in a local east/north frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuVector {
    pub east_m: f64,
    pub north_m: f64,
}

impl EnuVector {
    pub const ZERO: EnuVector = EnuVector { east_m: 0.0, north_m: 0.0 };

    pub const fn new(east_m: f64, north_m: f64) -> Self {
        EnuVector { east_m, north_m }
    }

    /// Unit vector for a compass heading (0 = north, 90 = east) scaled by `len`.
    pub fn from_heading(heading_deg: f64, len: f64) -> Self {
        let h = heading_deg.to_radians();
        EnuVector::new(len * sin(h), len * cos(h))
    }

    pub fn dot(self, other: EnuVector) -> f64 {
        self.east_m * other.east_m + self.north_m * other.north_m
    }

    pub fn cross(self, other: EnuVector) -> f64 {
        self.east_m * other.north_m - self.north_m * other.east_m
    }

    pub fn norm(self) -> f64 {
        sqrt(self.dot(self))
    }

    /// Compass heading of the vector in `[0, 360)`; zero vector maps to 0.
    pub fn heading_deg(self) -> f64 {
        if self.east_m == 0.0 && self.north_m == 0.0 {
            return 0.0;
        }
        let h = atan2(self.east_m, self.north_m).to_degrees();
        let h = if h < 0.0 { h + 360.0 } else { h };
        if h >= 360.0 {
            0.0
        } else {
            h
        }
    }

    /// Rotate counter-clockwise by `angle_rad`.
    pub fn rotated(self, angle_rad: f64) -> Self {
        let (s, c) = (sin(angle_rad), cos(angle_rad));
        EnuVector::new(c * self.east_m - s * self.north_m, s * self.east_m + c * self.north_m)
    }

    pub fn is_finite(self) -> bool {
        self.east_m.is_finite() && self.north_m.is_finite()
    }
}

impl Add for EnuVector {
    type Output = EnuVector;
    fn add(self, rhs: EnuVector) -> EnuVector {
        EnuVector::new(self.east_m + rhs.east_m, self.north_m + rhs.north_m)
    }
}

impl Sub for EnuVector {
    type Output = EnuVector;
    fn sub(self, rhs: EnuVector) -> EnuVector {
        EnuVector::new(self.east_m - rhs.east_m, self.north_m - rhs.north_m)
    }
}

impl Mul<f64> for EnuVector {
    type Output = EnuVector;
    fn mul(self, k: f64) -> EnuVector {
        EnuVector::new(self.east_m * k, self.north_m * k)
    }
}

impl Neg for EnuVector {
    type Output = EnuVector;
    fn neg(self) -> EnuVector {
        EnuVector::new(-self.east_m, -self.north_m)
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon_deg - a.lon_deg).to_radians();
    let s_lat = sin(dlat / 2.0);
    let s_lon = sin(dlon / 2.0);
    let h = s_lat * s_lat + cos(lat1) * cos(lat2) * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * asin(sqrt(h.clamp(0.0, 1.0)))
}

fn wrap_lon_delta(d: f64) -> f64 {
    let mut d = d % 360.0;
    if d >= 180.0 {
        d -= 360.0;
    } else if d < -180.0 {
        d += 360.0;
    }
    d
}

/// Equirectangular projection of `p` into the east/north frame at `origin`.
pub fn enu_project(origin: GeoPoint, p: GeoPoint) -> Result<EnuVector, GeoError> {
    let dlat = p.lat_deg - origin.lat_deg;
    if libm::fabs(dlat) >= MAX_PROJECTION_SPAN_DEG {
        return Err(GeoError::ProjectionSpan(dlat));
    }
    let dlon = wrap_lon_delta(p.lon_deg - origin.lon_deg);
    Ok(EnuVector::new(
        EARTH_RADIUS_M * dlon.to_radians() * cos(origin.lat_deg.to_radians()),
        EARTH_RADIUS_M * dlat.to_radians(),
    ))
}

/// Inverse of [`enu_project`].
pub fn enu_unproject(origin: GeoPoint, v: EnuVector) -> Result<GeoPoint, GeoError> {
    if !v.is_finite() {
        return Err(GeoError::NonFinite);
    }
    let lat = origin.lat_deg + (v.north_m / EARTH_RADIUS_M).to_degrees();
    let coslat = cos(origin.lat_deg.to_radians());
    let lon = origin.lon_deg + (v.east_m / (EARTH_RADIUS_M * coslat)).to_degrees();
    GeoPoint::new(lat, wrap_lon_delta(lon))
}

/// Closed circular area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeofence", into = "RawGeofence")]
pub struct Geofence {
    center: GeoPoint,
    radius_m: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeofence {
    center: GeoPoint,
    radius_m: f64,
}

impl TryFrom<RawGeofence> for Geofence {
    type Error = GeoError;
    fn try_from(raw: RawGeofence) -> Result<Self, GeoError> {
        Geofence::new(raw.center, raw.radius_m)
    }
}

impl From<Geofence> for RawGeofence {
    fn from(g: Geofence) -> Self {
        RawGeofence { center: g.center, radius_m: g.radius_m }
    }
}

impl Geofence {
    pub fn new(center: GeoPoint, radius_m: f64) -> Result<Self, GeoError> {
        if !(radius_m.is_finite() && radius_m > 0.0) {
            return Err(GeoError::Radius(radius_m));
        }
        Ok(Geofence { center, radius_m })
    }

    pub fn center(&self) -> GeoPoint {
        self.center
    }

    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    /// Points exactly on the boundary are inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        geofence_contains(self, p)
    }
}

pub fn geofence_contains(f: &Geofence, p: GeoPoint) -> bool {
    haversine_distance(f.center, p) <= f.radius_m
}
