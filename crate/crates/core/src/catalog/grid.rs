use serde::{Deserialize, Serialize};

use super::{great_circle_distance, Catalog, LonLat};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

/// Regular lon/lat grid with half-open cells `[lon, lon + dlon) × [lat, lat + dlat)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lon0: f64,
    pub lat0: f64,
    pub dlon: f64,
    pub dlat: f64,
    pub nlon: usize,
    pub nlat: usize,
    /// Row-major (`iy * nlon + ix`) activity mask.
    pub active: Vec<bool>,
}

impl GridSpec {
    /// Grid with every cell active.
    pub fn new(lon0: f64, lat0: f64, dlon: f64, dlat: f64, nlon: usize, nlat: usize) -> Result<Self> {
        if !(dlon > 0.0 && dlat > 0.0) {
            return Err(Error::Validation(format!(
                "grid cell size must be positive, got {dlon} x {dlat}"
            )));
        }
        if nlon == 0 || nlat == 0 {
            return Err(Error::Validation("grid must have at least one cell".into()));
        }
        Ok(GridSpec {
            lon0,
            lat0,
            dlon,
            dlat,
            nlon,
            nlat,
            active: vec![true; nlon * nlat],
        })
    }

    /// Smallest grid aligned to multiples of the cell size that covers every
    /// catalog point; cells with fewer than `min_count` points are inactive.
    pub fn covering(catalog: &Catalog, dlon: f64, dlat: f64, min_count: usize) -> Result<Self> {
        if !(dlon > 0.0 && dlat > 0.0) {
            return Err(Error::Validation(format!(
                "grid cell size must be positive, got {dlon} x {dlat}"
            )));
        }
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in catalog.points() {
            lo_x = lo_x.min(p.lon);
            hi_x = hi_x.max(p.lon);
            lo_y = lo_y.min(p.lat);
            hi_y = hi_y.max(p.lat);
        }
        let lon0 = (lo_x / dlon).floor() * dlon;
        let lat0 = (lo_y / dlat).floor() * dlat;
        let nlon = ((hi_x - lon0) / dlon).floor() as usize + 1;
        let nlat = ((hi_y - lat0) / dlat).floor() as usize + 1;
        let mut grid = GridSpec::new(lon0, lat0, dlon, dlat, nlon, nlat)?;
        let counts = grid.counts(catalog.points().map(|p| p.position()));
        grid.active = counts.iter().map(|&c| c >= min_count.max(1)).collect();
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.nlon * self.nlat
    }

    pub fn flat(&self, c: CellIndex) -> usize {
        c.iy * self.nlon + c.ix
    }

    pub fn unflat(&self, i: usize) -> CellIndex {
        CellIndex {
            ix: i % self.nlon,
            iy: i / self.nlon,
        }
    }

    pub fn is_active(&self, c: CellIndex) -> bool {
        self.active[self.flat(c)]
    }

    /// Active cell containing `p`, if any.
    pub fn active_cell(&self, p: LonLat) -> Option<CellIndex> {
        grid_cell(p, self).filter(|&c| self.is_active(c))
    }

    pub fn center(&self, c: CellIndex) -> LonLat {
        LonLat::new(
            self.lon0 + (c.ix as f64 + 0.5) * self.dlon,
            self.lat0 + (c.iy as f64 + 0.5) * self.dlat,
        )
    }

    pub fn active_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.n_cells())
            .filter(|&i| self.active[i])
            .map(|i| self.unflat(i))
    }

    /// Point counts per cell (flat index); points outside the grid are dropped.
    pub fn counts(&self, points: impl Iterator<Item = LonLat>) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_cells()];
        for p in points {
            if let Some(c) = grid_cell(p, self) {
                counts[self.flat(c)] += 1;
            }
        }
        counts
    }

    /// Nearest cell (by great-circle distance between centres) among those
    /// accepted by `eligible`. Ties resolve to the lowest flat index.
    pub fn nearest(&self, from: CellIndex, eligible: impl Fn(CellIndex) -> bool) -> Option<CellIndex> {
        let origin = self.center(from);
        let mut best: Option<(f64, CellIndex)> = None;
        for i in 0..self.n_cells() {
            let c = self.unflat(i);
            if !eligible(c) {
                continue;
            }
            let d = great_circle_distance(origin, self.center(c));
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        best.map(|(_, c)| c)
    }
}

/// Cell containing `p`, or `None` when `p` lies outside the grid.
pub fn grid_cell(p: LonLat, g: &GridSpec) -> Option<CellIndex> {
    let fx = ((p.lon - g.lon0) / g.dlon).floor();
    let fy = ((p.lat - g.lat0) / g.dlat).floor();
    if !(fx >= 0.0 && fy >= 0.0) {
        return None;
    }
    let (ix, iy) = (fx as usize, fy as usize);
    (ix < g.nlon && iy < g.nlat).then_some(CellIndex { ix, iy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(-80.0, 20.0, 8.0, 4.0, 10, 10).unwrap()
    }

    #[test]
    fn origin_cell() {
        assert_eq!(
            grid_cell(LonLat::new(-80.0, 20.0), &grid()),
            Some(CellIndex { ix: 0, iy: 0 })
        );
    }

    #[test]
    fn shared_edges_go_east_and_north() {
        let g = grid();
        assert_eq!(grid_cell(LonLat::new(-72.0, 22.0), &g), Some(CellIndex { ix: 1, iy: 0 }));
        assert_eq!(grid_cell(LonLat::new(-75.0, 24.0), &g), Some(CellIndex { ix: 0, iy: 1 }));
    }

    #[test]
    fn outside_is_none() {
        let g = grid();
        assert_eq!(grid_cell(LonLat::new(-80.1, 25.0), &g), None);
        assert_eq!(grid_cell(LonLat::new(0.0, 25.0), &g), None);
        assert_eq!(grid_cell(LonLat::new(-50.0, 60.0), &g), None);
        assert_eq!(grid_cell(LonLat::new(f64::NAN, 25.0), &g), None);
    }

    #[test]
    fn nearest_prefers_closest_centre() {
        let mut g = grid();
        g.active.iter_mut().for_each(|a| *a = false);
        let far = CellIndex { ix: 9, iy: 9 };
        let near = CellIndex { ix: 2, iy: 1 };
        let (i, j) = (g.flat(far), g.flat(near));
        g.active[i] = true;
        g.active[j] = true;
        let got = g.nearest(CellIndex { ix: 0, iy: 0 }, |c| g.is_active(c));
        assert_eq!(got, Some(near));
    }
}
