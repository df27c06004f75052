//! Fitting of all submodels into a [`ModelBundle`] and storm simulation.
//!
//! Conditioning conventions: the motion pair `(θ_j, v_j)` is the segment
//! leaving point `j`; vorticity at point `j` is conditioned on the bearing of
//! the segment arriving at `j`. Every per-cell kernel model is keyed by the
//! cell of the point the drawn quantity belongs to.

mod output;
mod sim;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{grid_cell, Catalog, GridSpec, StormTrack};
use crate::condex::{fit_condex, CondExFit};
use crate::error::{Error, Result};
use crate::evt::{mean_residual_life, GpdOptions, MixtureMarginal, MrlRow};
use crate::gam::{build_design, fit_gam, GamConfig, GamFit};
use crate::kde::{fit_kde, KdeModel, KdeStructure};
use crate::preprocess::{fit_preprocess, track_covariates, PreprocFit, Window};

pub use output::{read_censoring, write_synthetic};
pub use sim::{
    simulate_catalog, storm_seed, SamplerTag, SimulationOptions, Simulator, SyntheticCatalog,
    SyntheticTrack, TerminationCause,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandwidthScales {
    pub genesis_location: f64,
    pub genesis_conditions: f64,
    pub bearing: f64,
    pub speed: f64,
    pub vorticity: f64,
    pub marginal: f64,
}

impl Default for BandwidthScales {
    fn default() -> Self {
        BandwidthScales {
            genesis_location: 1.0,
            genesis_conditions: 1.0,
            bearing: 1.0,
            speed: 1.0,
            vorticity: 1.0,
            marginal: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Markov order `k`.
    pub order: usize,
    pub cell_lon: f64,
    pub cell_lat: f64,
    /// Points needed for a grid cell to be active.
    pub min_cell_points: usize,
    /// Tuples needed for a cell to carry its own kernel model.
    pub min_cell_tuples: usize,
    /// GPD threshold `u` on the preprocessed scale.
    pub gpd_threshold: f64,
    /// Laplace-scale threshold; defaults to the transform of `u`.
    pub laplace_threshold: Option<f64>,
    pub window: Window,
    pub bandwidth: BandwidthScales,
    pub gam: GamConfig,
    pub gpd_restarts: usize,
    /// Shrink kernel noise in the propagation and vorticity conditionals so
    /// that simulated conditional variances match the data.
    pub variance_matched: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            order: 3,
            cell_lon: 8.0,
            cell_lat: 4.0,
            min_cell_points: 1,
            min_cell_tuples: 10,
            gpd_threshold: 1.5,
            laplace_threshold: None,
            window: Window::default(),
            bandwidth: BandwidthScales::default(),
            gam: GamConfig::default(),
            gpd_restarts: 20,
            variance_matched: true,
        }
    }
}

/// Kernel models for the cells with enough data, plus the nearest such cell
/// for every other active cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellModels {
    pub models: BTreeMap<usize, KdeModel>,
    pub fallback: BTreeMap<usize, usize>,
}

impl CellModels {
    /// Flat index of the cell whose model serves `cell`.
    pub fn resolve(&self, cell: usize) -> Option<usize> {
        if self.models.contains_key(&cell) {
            Some(cell)
        } else {
            self.fallback.get(&cell).copied()
        }
    }

    pub fn get(&self, cell: usize) -> Option<&KdeModel> {
        self.resolve(cell).and_then(|c| self.models.get(&c))
    }

    fn fit(
        name: &str,
        tuples: BTreeMap<usize, Vec<Vec<f64>>>,
        grid: &GridSpec,
        structure: KdeStructure,
        scale: f64,
        circular: &[usize],
        min_tuples: usize,
    ) -> Result<Self> {
        let mut models = BTreeMap::new();
        for (cell, rows) in tuples {
            if rows.len() < min_tuples {
                continue;
            }
            match fit_kde(&rows, structure.clone(), scale, circular) {
                Ok(m) => {
                    models.insert(cell, m);
                }
                Err(e) => log::warn!("engine: {name} model for cell {cell} not fitted ({e})"),
            }
        }
        if models.is_empty() {
            return Err(Error::insufficient(
                "engine",
                format!("no grid cell has {min_tuples} {name} tuples"),
            ));
        }
        let mut fallback = BTreeMap::new();
        for c in grid.active_cells() {
            let flat = grid.flat(c);
            if models.contains_key(&flat) {
                continue;
            }
            let near = grid
                .nearest(c, |d| models.contains_key(&grid.flat(d)))
                .expect("at least one fitted cell");
            fallback.insert(flat, grid.flat(near));
        }
        Ok(CellModels { models, fallback })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub config: EngineConfig,
    pub grid: GridSpec,
    pub genesis_location: KdeModel,
    /// `(lon, lat, v₀, ω₀, θ₀)` per genesis cell.
    pub genesis_conditions: CellModels,
    /// Unwrapped `(θ_{j-k}, …, θ_j)`.
    pub bearing: CellModels,
    /// `(v_{j-k}, …, v_{j-1}, θ_j, v_j)`.
    pub speed: CellModels,
    /// `(ω_{j-k}, …, ω_{j-1}, θ_{j-1}, ω_j)`.
    pub vorticity: CellModels,
    pub preproc: PreprocFit,
    pub marginal: MixtureMarginal,
    pub condex: CondExFit,
    pub gam: GamFit,
    pub training_storms: usize,
    pub storms_per_year: f64,
}

impl ModelBundle {
    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                expected: SCHEMA_VERSION,
                found: v.schema_version,
            });
        }
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub storms: usize,
    pub points: usize,
    pub active_cells: usize,
    pub order: usize,
    /// Fitted cells and fallback cells per kernel model.
    pub cell_models: BTreeMap<String, (usize, usize)>,
    pub gpd_threshold: f64,
    pub gpd_threshold_quantile: f64,
    pub gpd_scale: f64,
    pub gpd_shape: f64,
    pub exceed_rate: f64,
    pub empirical_rate: f64,
    pub box_cox_lambda: f64,
    pub quadratic_terms: bool,
    pub laplace_threshold: f64,
    pub condex_events: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gam_rows: usize,
    pub gam_gcv: f64,
    pub gam_aic: f64,
    pub gam_smoothing: Vec<f64>,
    pub mrl: Vec<MrlRow>,
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "storms: {}  points: {}  active cells: {}", self.storms, self.points, self.active_cells)?;
        writeln!(f, "markov order k: {}", self.order)?;
        for (name, (own, fb)) in &self.cell_models {
            writeln!(f, "{name} kernels: {own} cells fitted, {fb} cells on fallback")?;
        }
        writeln!(
            f,
            "box-cox lambda: {:.4} (quadratic lon/lat terms: {})",
            self.box_cox_lambda, self.quadratic_terms
        )?;
        writeln!(
            f,
            "gpd: u = {} (quantile {:.4}), psi = {:.4}, xi = {:.4}, lambda_u = {:.5} (empirical {:.5})",
            self.gpd_threshold, self.gpd_threshold_quantile, self.gpd_scale, self.gpd_shape, self.exceed_rate,
            self.empirical_rate
        )?;
        writeln!(f, "conditional extremes: u_L = {:.4}, {} events", self.laplace_threshold, self.condex_events)?;
        for (j, (a, b)) in self.alpha.iter().zip(&self.beta).enumerate() {
            writeln!(f, "  lag {}: alpha = {a:.4}, beta = {b:.4}", j + 1)?;
        }
        writeln!(
            f,
            "hazard gam: {} rows, gcv = {:.6}, aic = {:.2}, smoothing = {:?}",
            self.gam_rows, self.gam_gcv, self.gam_aic, self.gam_smoothing
        )?;
        writeln!(f, "mean residual life (u, mean excess, lo, hi, n):")?;
        for r in &self.mrl {
            writeln!(
                f,
                "  {:.3} {:.4} {:.4} {:.4} {}",
                r.threshold, r.mean_excess, r.ci_lo, r.ci_hi, r.n_exceed
            )?;
        }
        Ok(())
    }
}

/// Consecutively unwrapped angles, shifted so that element `anchor` lies in
/// `[-π, π)`.
pub(crate) fn unwrap_angles(raw: &[f64], anchor: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    out.push(raw[0]);
    for w in raw.windows(2) {
        let prev = *out.last().expect("non-empty");
        out.push(prev + crate::catalog::wrap_angle(w[1] - w[0]));
    }
    let a = out[anchor];
    let shift = (a + PI).div_euclid(2.0 * PI) * 2.0 * PI;
    out.iter().map(|v| v - shift).collect()
}

/// Training tuples for the kernel models, keyed by flat cell index.
struct Tuples {
    genesis: BTreeMap<usize, Vec<Vec<f64>>>,
    bearing: BTreeMap<usize, Vec<Vec<f64>>>,
    speed: BTreeMap<usize, Vec<Vec<f64>>>,
    vorticity: BTreeMap<usize, Vec<Vec<f64>>>,
}

fn collect_tuples(catalog: &Catalog, grid: &GridSpec, k: usize) -> Tuples {
    let mut t = Tuples {
        genesis: BTreeMap::new(),
        bearing: BTreeMap::new(),
        speed: BTreeMap::new(),
        vorticity: BTreeMap::new(),
    };
    let cell_of = |s: &StormTrack, j: usize| grid_cell(s.points()[j].position(), grid).map(|c| grid.flat(c));
    for s in &catalog.storms {
        let pts = s.points();
        let (v, th) = (s.speed(), s.bearing());
        let w: Vec<f64> = s.vorticity().collect();
        if let Some(c) = cell_of(s, 0) {
            t.genesis
                .entry(c)
                .or_default()
                .push(vec![pts[0].lon, pts[0].lat, v[0], w[0], th[0]]);
        }
        for j in k..pts.len() {
            let Some(c) = cell_of(s, j) else { continue };
            if j < v.len() {
                t.bearing.entry(c).or_default().push(unwrap_angles(&th[j - k..=j], k - 1));
                let mut row = v[j - k..j].to_vec();
                row.push(th[j]);
                row.push(v[j]);
                t.speed.entry(c).or_default().push(row);
            }
            let mut row = w[j - k..j].to_vec();
            row.push(th[j - 1]);
            row.push(w[j]);
            t.vorticity.entry(c).or_default().push(row);
        }
    }
    t
}

/// Preprocessed vorticity per storm point; `None` outside the window or where
/// the transform is undefined.
pub fn residual_series(catalog: &Catalog, preproc: &PreprocFit, window: &Window) -> Vec<Vec<Option<f64>>> {
    catalog
        .storms
        .iter()
        .map(|s| {
            s.points()
                .iter()
                .zip(track_covariates(s))
                .map(|(p, c)| {
                    if window.contains(p.lon, p.lat) {
                        preproc.to_residual(p.vorticity, &c).ok()
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect()
}

/// 21 equally spaced thresholds from the 0.8 to the 0.995 sample quantile.
pub fn mrl_thresholds(data: &[f64]) -> Vec<f64> {
    if data.is_empty() {
        return Vec::new();
    }
    let sorted = crate::numeric::sorted(data);
    let lo = crate::numeric::quantile_sorted(&sorted, 0.8);
    let hi = crate::numeric::quantile_sorted(&sorted, 0.995);
    (0..=20).map(|i| lo + (hi - lo) * i as f64 / 20.0).collect()
}

/// Fit every submodel. `censored` marks storms whose end was not a natural
/// termination (their final row is not counted as an event).
pub fn fit_all(catalog: &Catalog, config: &EngineConfig) -> Result<(ModelBundle, FitReport)> {
    fit_all_censored(catalog, &[], config)
}

pub fn fit_all_censored(
    catalog: &Catalog,
    censored: &[bool],
    config: &EngineConfig,
) -> Result<(ModelBundle, FitReport)> {
    let k = config.order;
    if k == 0 {
        return Err(Error::Validation("markov order must be at least 1".into()));
    }
    let grid = GridSpec::covering(catalog, config.cell_lon, config.cell_lat, config.min_cell_points)?;
    let bw = &config.bandwidth;

    let genesis_points: Vec<Vec<f64>> = catalog
        .storms
        .iter()
        .map(|s| vec![s.genesis().lon, s.genesis().lat])
        .collect();
    let genesis_location = fit_kde(&genesis_points, KdeStructure::Oriented, bw.genesis_location, &[])?;

    let tuples = collect_tuples(catalog, &grid, k);
    let min = config.min_cell_tuples;
    let genesis_conditions = CellModels::fit(
        "genesis",
        tuples.genesis,
        &grid,
        KdeStructure::Partial(vec![0, 1, 2, 3]),
        bw.genesis_conditions,
        &[4],
        min,
    )?;
    let all_circular: Vec<usize> = (0..=k).collect();
    let bearing = CellModels::fit(
        "bearing",
        tuples.bearing,
        &grid,
        KdeStructure::Diagonal,
        bw.bearing,
        &all_circular,
        min,
    )?;
    let mut coupled: Vec<usize> = (0..k).collect();
    coupled.push(k + 1);
    let speed = CellModels::fit(
        "speed",
        tuples.speed,
        &grid,
        KdeStructure::Partial(coupled.clone()),
        bw.speed,
        &[k],
        min,
    )?;
    let vorticity = CellModels::fit(
        "vorticity",
        tuples.vorticity,
        &grid,
        KdeStructure::Partial(coupled),
        bw.vorticity,
        &[k],
        min,
    )?;

    let mut pre_data = Vec::with_capacity(catalog.n_points());
    for s in &catalog.storms {
        for (p, c) in s.points().iter().zip(track_covariates(s)) {
            pre_data.push((p.vorticity, c));
        }
    }
    let preproc = fit_preprocess(&pre_data, config.window)?;

    let w_series = residual_series(catalog, &preproc, &config.window);
    let pooled: Vec<f64> = w_series.iter().flatten().flatten().copied().collect();
    let u = config.gpd_threshold;
    let gpd_opts = GpdOptions {
        restarts: config.gpd_restarts,
        ..GpdOptions::default()
    };
    let marginal = MixtureMarginal::fit(&pooled, u, bw.marginal, &gpd_opts)?;
    let u_l = config.laplace_threshold.unwrap_or_else(|| marginal.to_laplace(u));

    let mut runs: Vec<Vec<f64>> = Vec::new();
    for series in &w_series {
        let mut run = Vec::new();
        for w in series {
            match w {
                Some(w) => run.push(marginal.to_laplace(*w)),
                None => {
                    if run.len() > k {
                        runs.push(std::mem::take(&mut run));
                    }
                    run.clear();
                }
            }
        }
        if run.len() > k {
            runs.push(run);
        }
    }
    let condex = fit_condex(&runs, k, u_l)?;

    let design = build_design(&catalog.storms, censored, &config.gam);
    let gam = fit_gam(&design, &config.gam)?;

    let quantile = pooled.iter().filter(|&&w| w <= u).count() as f64 / pooled.len() as f64;
    let mrl = mean_residual_life(&pooled, &mrl_thresholds(&pooled))?;

    let mut cell_models = BTreeMap::new();
    for (name, m) in [
        ("genesis", &genesis_conditions),
        ("bearing", &bearing),
        ("speed", &speed),
        ("vorticity", &vorticity),
    ] {
        cell_models.insert(name.to_string(), (m.models.len(), m.fallback.len()));
    }
    let report = FitReport {
        storms: catalog.storms.len(),
        points: catalog.n_points(),
        active_cells: grid.active_cells().count(),
        order: k,
        cell_models,
        gpd_threshold: u,
        gpd_threshold_quantile: quantile,
        gpd_scale: marginal.gpd.scale,
        gpd_shape: marginal.gpd.shape,
        exceed_rate: marginal.gpd.exceed_rate,
        empirical_rate: marginal.gpd.empirical_rate,
        box_cox_lambda: preproc.lambda,
        quadratic_terms: preproc.covariates.quadratic,
        laplace_threshold: u_l,
        condex_events: condex.residuals.len(),
        alpha: condex.alpha.clone(),
        beta: condex.beta.clone(),
        gam_rows: gam.n_rows,
        gam_gcv: gam.gcv_score,
        gam_aic: gam.aic,
        gam_smoothing: gam.smoothing.clone(),
        mrl,
    };
    let bundle = ModelBundle {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        grid,
        genesis_location,
        genesis_conditions,
        bearing,
        speed,
        vorticity,
        preproc,
        marginal,
        condex,
        gam,
        training_storms: catalog.storms.len(),
        storms_per_year: catalog.storms_per_year(),
    };
    Ok((bundle, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unwrap_keeps_anchor_in_range() {
        let raw = [3.0, -3.1, 3.05, -3.0];
        let u = unwrap_angles(&raw, 2);
        assert!((-PI..PI).contains(&u[2]));
        for w in u.windows(2) {
            assert!((w[1] - w[0]).abs() < PI);
        }
        for (a, b) in u.iter().zip(&raw) {
            assert!((crate::catalog::wrap_angle(a - b)).abs() < 1e-12);
        }
    }
}
