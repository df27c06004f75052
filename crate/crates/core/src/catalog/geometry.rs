//! Spherical-earth geometry for track points.
//!
//! Coordinates are degrees; angles returned to callers are radians. Bearings
//! are measured clockwise from north, so `0` is due north and `π/2` due east.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Time between consecutive track points (3 hours) in seconds.
pub const STEP_SECONDS: f64 = 10_800.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Self {
        LonLat { lon, lat }
    }
}

/// Wrap a longitude into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Wrap an angle into `[-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..=PI).contains(&theta) {
        return theta;
    }
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w < -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Great-circle distance in metres.
///
/// Uses the atan2 form of the central angle, which stays accurate for both
/// tiny and near-antipodal separations.
pub fn great_circle_distance(p: LonLat, q: LonLat) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dlambda = (q.lon - p.lon).to_radians();
    let (s1, c1) = phi1.sin_cos();
    let (s2, c2) = phi2.sin_cos();
    let (sdl, cdl) = dlambda.sin_cos();
    let y = ((c2 * sdl).powi(2) + (c1 * s2 - s1 * c2 * cdl).powi(2)).sqrt();
    let x = s1 * s2 + c1 * c2 * cdl;
    EARTH_RADIUS_M * y.atan2(x)
}

/// Initial bearing from `p` towards `q`, radians in `[-π, π]`.
pub fn initial_bearing(p: LonLat, q: LonLat) -> Result<f64> {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dlambda = (q.lon - p.lon).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    if y.abs() < 1e-15 && x.abs() < 1e-15 {
        return Err(Error::UndefinedBearing);
    }
    Ok(y.atan2(x))
}

/// Point reached after travelling at `speed` m/s along initial `bearing` for
/// `dt` seconds.
pub fn destination_point(p: LonLat, speed: f64, bearing: f64, dt: f64) -> Result<LonLat> {
    if speed < 0.0 || !speed.is_finite() {
        return Err(Error::Argument(format!("speed must be >= 0, got {speed}")));
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::Argument(format!("dt must be > 0, got {dt}")));
    }
    if speed == 0.0 {
        return Ok(p);
    }
    let delta = speed * dt / EARTH_RADIUS_M;
    let phi1 = p.lat.to_radians();
    let (sd, cd) = delta.sin_cos();
    let (s1, c1) = phi1.sin_cos();
    let sin_phi2 = (s1 * cd + c1 * sd * bearing.cos()).clamp(-1.0, 1.0);
    let phi2 = sin_phi2.asin();
    if phi2.cos() < 1e-12 {
        return Err(Error::PoleDegeneracy);
    }
    let dlambda = (bearing.sin() * sd * c1).atan2(cd - s1 * sin_phi2);
    Ok(LonLat {
        lon: normalize_lon(p.lon + dlambda.to_degrees()),
        lat: phi2.to_degrees(),
    })
}
