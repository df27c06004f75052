//! Parametric toy storm catalogs for tests and demonstrations.
//!
//! Bearing and log-speed follow AR(1) processes, log-vorticity an AR(1)
//! process, and termination a logistic hazard in vorticity and age once a
//! storm has eight points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::catalog::{destination_point, Catalog, LonLat, StormTrack, TrackPoint, MIN_TRACK_POINTS, STEP_SECONDS};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub storms: usize,
    pub years: f64,
    pub seed: u64,
    pub genesis_lon: (f64, f64),
    pub genesis_lat: (f64, f64),
    /// Mean bearing (radians), AR coefficient, innovation sd.
    pub bearing: (f64, f64, f64),
    /// Mean log speed (m/s), AR coefficient, innovation sd.
    pub log_speed: (f64, f64, f64),
    /// Mean log vorticity, AR coefficient, innovation sd.
    pub log_vorticity: (f64, f64, f64),
    /// Hazard logit: intercept, vorticity slope, age slope.
    pub hazard: (f64, f64, f64),
    pub max_points: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            storms: 600,
            years: 20.0,
            seed: 1,
            genesis_lon: (-65.0, -25.0),
            genesis_lat: (38.0, 55.0),
            bearing: (1.1, 0.7, 0.25),
            log_speed: (2.5, 0.8, 0.15),
            log_vorticity: (1.3, 0.85, 0.2),
            hazard: (-3.0, -0.5, 0.03),
            max_points: 120,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Catalog of `config.storms` tracks, all at least eight points long.
pub fn toy_catalog(config: &ToyConfig) -> Result<Catalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mb, pb, sb) = config.bearing;
    let (ms, ps, ss) = config.log_speed;
    let (mw, pw, sw) = config.log_vorticity;
    let nb = Normal::new(0.0, sb).expect("valid sd");
    let ns = Normal::new(0.0, ss).expect("valid sd");
    let nw = Normal::new(0.0, sw).expect("valid sd");
    let stat = |p: f64, s: f64| s / (1.0 - p * p).sqrt();
    let nb0 = Normal::new(0.0, stat(pb, sb)).expect("valid sd");
    let ns0 = Normal::new(0.0, stat(ps, ss)).expect("valid sd");
    let nw0 = Normal::new(0.0, stat(pw, sw)).expect("valid sd");
    let (h0, hw, ha) = config.hazard;

    let mut storms = Vec::with_capacity(config.storms);
    while storms.len() < config.storms {
        let mut x = LonLat::new(
            rng.random_range(config.genesis_lon.0..config.genesis_lon.1),
            rng.random_range(config.genesis_lat.0..config.genesis_lat.1),
        );
        let (mut b, mut s, mut w) = (nb0.sample(&mut rng), ns0.sample(&mut rng), nw0.sample(&mut rng));
        let mut points = Vec::new();
        loop {
            let omega = (mw + w).exp();
            points.push(TrackPoint {
                lon: x.lon,
                lat: x.lat,
                time_index: points.len() as i64,
                vorticity: omega,
            });
            let age = points.len();
            if age >= MIN_TRACK_POINTS {
                let p = logistic(h0 + hw * (omega - mw.exp()) + ha * (age - MIN_TRACK_POINTS) as f64);
                if rng.random::<f64>() < p || age >= config.max_points {
                    break;
                }
            }
            let Ok(next) = destination_point(x, (ms + s).exp(), mb + b, STEP_SECONDS) else { break };
            if next.lat > 80.0 {
                break;
            }
            x = next;
            b = pb * b + nb.sample(&mut rng);
            s = ps * s + ns.sample(&mut rng);
            w = pw * w + nw.sample(&mut rng);
        }
        if points.len() >= MIN_TRACK_POINTS {
            let id = format!("toy{:05}", storms.len() + 1);
            storms.push(StormTrack::new(id, points)?);
        }
    }
    Catalog::new(storms, config.years)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_admissible() {
        let c = ToyConfig {
            storms: 50,
            ..ToyConfig::default()
        };
        let a = toy_catalog(&c).unwrap();
        let b = toy_catalog(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.storms.len(), 50);
        assert!(a.storms.iter().all(|s| s.len() >= MIN_TRACK_POINTS));
        assert!(a.points().all(|p| p.vorticity > 0.0));
    }
}
