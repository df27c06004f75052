//! Track catalogs: storm tracks, derived kinematics, geometry and gridding.

mod geometry;
mod grid;
mod io;
mod pacf;

pub use geometry::{
    destination_point, great_circle_distance, initial_bearing, normalize_lon, wrap_angle, LonLat,
    EARTH_RADIUS_M, STEP_SECONDS,
};
pub use grid::{grid_cell, CellIndex, GridSpec};
pub use io::{header_comments, load_catalog, read_catalog, write_catalog, LoadReport, CATALOG_HEADER};
pub(crate) use io::write_comments;
pub use pacf::{pacf, pooled_pacf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest admissible track: 24 hours of 3-hourly points.
pub const MIN_TRACK_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub lon: f64,
    pub lat: f64,
    pub time_index: i64,
    /// Relative vorticity in units of 1e-5 s^-1.
    pub vorticity: f64,
}

impl TrackPoint {
    pub fn position(&self) -> LonLat {
        LonLat::new(self.lon, self.lat)
    }
}

/// A single storm: time-ordered points plus per-segment speed and bearing.
#[derive(Clone, Debug, PartialEq)]
pub struct StormTrack {
    pub id: String,
    points: Vec<TrackPoint>,
    speed: Vec<f64>,
    bearing: Vec<f64>,
}

impl StormTrack {
    /// Validate and derive kinematics. Points must already be in time order.
    pub fn new(id: impl Into<String>, mut points: Vec<TrackPoint>) -> Result<Self> {
        let id = id.into();
        if points.len() < MIN_TRACK_POINTS {
            return Err(Error::Validation(format!(
                "storm {id}: {} points, lifespan below the {MIN_TRACK_POINTS}-step minimum",
                points.len()
            )));
        }
        for w in points.windows(2) {
            if w[1].time_index != w[0].time_index + 1 {
                return Err(Error::Validation(format!(
                    "storm {id}: time_index not contiguous ({} -> {})",
                    w[0].time_index, w[1].time_index
                )));
            }
        }
        for p in points.iter_mut() {
            if !(p.lat > -90.0 && p.lat < 90.0) || !p.lon.is_finite() {
                return Err(Error::Validation(format!(
                    "storm {id}: invalid coordinate ({}, {})",
                    p.lon, p.lat
                )));
            }
            if !p.vorticity.is_finite() {
                return Err(Error::Validation(format!("storm {id}: non-finite vorticity")));
            }
            p.lon = normalize_lon(p.lon);
        }
        let mut speed = Vec::with_capacity(points.len() - 1);
        let mut bearing = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            let (a, b) = (w[0].position(), w[1].position());
            speed.push(great_circle_distance(a, b) / STEP_SECONDS);
            // stationary segments inherit the previous heading
            let prev = bearing.last().copied().unwrap_or(0.0);
            bearing.push(initial_bearing(a, b).unwrap_or(prev));
        }
        Ok(StormTrack {
            id,
            points,
            speed,
            bearing,
        })
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Speed in m/s of segment `t -> t+1`.
    pub fn speed(&self) -> &[f64] {
        &self.speed
    }

    /// Initial bearing (radians) of segment `t -> t+1`.
    pub fn bearing(&self) -> &[f64] {
        &self.bearing
    }

    pub fn vorticity(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.vorticity)
    }

    /// Motion associated with point `t`: the segment arriving at `t`, or the
    /// departing segment for the genesis point.
    pub fn motion_at(&self, t: usize) -> (f64, f64) {
        let s = if t == 0 { 0 } else { t - 1 };
        (self.speed[s], self.bearing[s])
    }

    pub fn genesis(&self) -> &TrackPoint {
        &self.points[0]
    }

    pub fn lysis(&self) -> &TrackPoint {
        &self.points[self.points.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub storms: Vec<StormTrack>,
    pub years_of_record: f64,
}

impl Catalog {
    pub fn new(storms: Vec<StormTrack>, years_of_record: f64) -> Result<Self> {
        if storms.is_empty() {
            return Err(Error::Validation("catalog contains no storms".into()));
        }
        if !(years_of_record.is_finite() && years_of_record > 0.0) {
            return Err(Error::Validation(format!(
                "years_of_record must be positive, got {years_of_record}"
            )));
        }
        Ok(Catalog {
            storms,
            years_of_record,
        })
    }

    pub fn storms_per_year(&self) -> f64 {
        self.storms.len() as f64 / self.years_of_record
    }

    pub fn n_points(&self) -> usize {
        self.storms.iter().map(StormTrack::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &TrackPoint> + '_ {
        self.storms.iter().flat_map(|s| s.points().iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<TrackPoint> {
        (0..n)
            .map(|t| TrackPoint {
                lon: -40.0 + t as f64,
                lat: 45.0 + 0.5 * t as f64,
                time_index: t as i64,
                vorticity: 3.0,
            })
            .collect()
    }

    #[test]
    fn derived_lengths() {
        let s = StormTrack::new("a", line(10)).unwrap();
        assert_eq!(s.speed().len(), 9);
        assert_eq!(s.bearing().len(), 9);
        assert_eq!(s.motion_at(0), (s.speed()[0], s.bearing()[0]));
        assert_eq!(s.motion_at(5), (s.speed()[4], s.bearing()[4]));
    }

    #[test]
    fn kinematics_reproduce_next_point() {
        let s = StormTrack::new("a", line(12)).unwrap();
        for t in 0..s.len() - 1 {
            let p = s.points()[t].position();
            let q = destination_point(p, s.speed()[t], s.bearing()[t], STEP_SECONDS).unwrap();
            let target = s.points()[t + 1].position();
            let step = great_circle_distance(p, target);
            assert!(great_circle_distance(q, target) <= 1e-6 * step);
        }
    }

    #[test]
    fn rejects_short_and_gapped_tracks() {
        assert!(StormTrack::new("a", line(3)).is_err());
        let mut pts = line(9);
        pts[4].time_index += 1;
        for p in pts.iter_mut().skip(5) {
            p.time_index += 1;
        }
        let err = StormTrack::new("gap", pts).unwrap_err().to_string();
        assert!(err.contains("gap"), "{err}");
    }

    #[test]
    fn catalog_rate() {
        let s = StormTrack::new("a", line(8)).unwrap();
        let c = Catalog::new(vec![s.clone(), s], 4.0).unwrap();
        assert_eq!(c.storms_per_year(), 0.5);
        assert!(Catalog::new(vec![], 1.0).is_err());
    }
}
