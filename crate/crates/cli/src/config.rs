use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stormsim::engine::{EngineConfig, SimulationOptions};
use stormsim::risk::{BootstrapOptions, EnvelopeOptions, Region};

use crate::CliError;

/// Everything a command needs, loaded from one JSON document and then
/// overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub engine: EngineConfig,
    pub simulation: SimulationConfig,
    pub risk: RiskConfig,
    pub diagnose: DiagnoseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Observed (or synthetic) track catalog.
    pub catalog: Option<PathBuf>,
    /// Overrides the `years_of_record` header of the catalog.
    pub years_of_record: Option<f64>,
    /// Model bundle, written by `fit` and read by `simulate` and `diagnose`.
    pub bundle: Option<PathBuf>,
    /// Synthetic catalog compared against the observed one by `diagnose`.
    pub synthetic: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            catalog: None,
            years_of_record: None,
            bundle: None,
            synthetic: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub storms: usize,
    pub seed: Option<u64>,
    pub workers: usize,
    /// Years represented by the synthetic catalog; derived from the training
    /// storm rate when unset.
    pub years: Option<f64>,
    pub max_age: usize,
    /// Polygon of `[lon, lat]` vertices outside which the hazard is off.
    pub hazard_region: Option<Vec<[f64; 2]>>,
    pub forced_hazard: Option<f64>,
    pub max_attempts: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let d = SimulationOptions::default();
        SimulationConfig {
            storms: 1000,
            seed: None,
            workers: 1,
            years: None,
            max_age: d.max_age,
            hazard_region: d.hazard_region,
            forced_hazard: d.forced_hazard,
            max_attempts: d.max_attempts,
        }
    }
}

impl SimulationConfig {
    pub fn options(&self) -> SimulationOptions {
        SimulationOptions {
            max_age: self.max_age,
            hazard_region: self.hazard_region.clone(),
            forced_hazard: self.forced_hazard,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub regions: Vec<Region>,
    pub return_periods: Vec<f64>,
    /// Vorticity levels for exceedance probabilities and return periods.
    pub omegas: Vec<f64>,
    pub bootstrap: BootstrapOptions,
    /// Grid for the return-level map.
    pub map_cell_lon: f64,
    pub map_cell_lat: f64,
    /// Bootstrap every map cell as well (slow on fine grids).
    pub map_bootstrap: bool,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            regions: vec![Region::default()],
            return_periods: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            omegas: vec![6.0, 8.0, 10.0, 12.0, 14.0],
            bootstrap: BootstrapOptions::default(),
            map_cell_lon: 4.0,
            map_cell_lat: 3.0,
            map_bootstrap: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub max_lag: usize,
    /// Number of equally spaced quantile levels in QQ tables.
    pub quantiles: usize,
    pub envelope: EnvelopeOptions,
    pub density_cell_lon: f64,
    pub density_cell_lat: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            max_lag: 10,
            quantiles: 99,
            envelope: EnvelopeOptions::default(),
            density_cell_lon: 4.0,
            density_cell_lat: 3.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// Single-line JSON of the effective configuration.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn catalog(&self) -> Result<&Path, CliError> {
        existing(self.paths.catalog.as_deref(), "catalog")
    }

    pub fn bundle_in(&self) -> Result<&Path, CliError> {
        existing(self.paths.bundle.as_deref(), "bundle")
    }

    pub fn validate_engine(&self) -> Result<(), CliError> {
        let e = &self.engine;
        let finite = e.gpd_threshold.is_finite() && e.laplace_threshold.is_none_or(f64::is_finite);
        if !finite {
            return Err(CliError::Validation("thresholds must be finite".into()));
        }
        if e.order == 0 {
            return Err(CliError::Validation("markov order must be at least 1".into()));
        }
        if !(e.cell_lon > 0.0 && e.cell_lat > 0.0) {
            return Err(CliError::Validation("grid cell size must be positive".into()));
        }
        Ok(())
    }

    pub fn validate_simulation(&self) -> Result<u64, CliError> {
        let s = &self.simulation;
        if s.storms == 0 {
            return Err(CliError::Validation("number of storms must be at least 1".into()));
        }
        if s.workers == 0 {
            return Err(CliError::Validation("workers must be at least 1".into()));
        }
        if s.years.is_some_and(|y| !(y > 0.0 && y.is_finite())) {
            return Err(CliError::Validation("simulated years must be positive".into()));
        }
        s.seed
            .ok_or_else(|| CliError::Validation("simulate needs an explicit --seed".into()))
    }

    pub fn validate_risk(&self) -> Result<(), CliError> {
        let r = &self.risk;
        for region in &r.regions {
            region.validate()?;
        }
        if let Some(p) = r.return_periods.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(CliError::Validation(format!("return period {p} must be positive")));
        }
        if let Some(w) = r.omegas.iter().find(|w| !w.is_finite()) {
            return Err(CliError::Validation(format!("vorticity level {w} is not finite")));
        }
        if !(r.map_cell_lon > 0.0 && r.map_cell_lat > 0.0) {
            return Err(CliError::Validation("map cell size must be positive".into()));
        }
        Ok(())
    }
}

fn existing<'a>(path: Option<&'a Path>, what: &str) -> Result<&'a Path, CliError> {
    let path = path.ok_or_else(|| CliError::Validation(format!("no {what} path given")))?;
    if !path.is_file() {
        return Err(CliError::Validation(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}

/// Parse `lon_min,lon_max,lat_min,lat_max`.
pub fn parse_region(s: &str) -> Result<Region, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [a, b, c, d] = v[..] else {
        return Err(format!("expected four comma-separated numbers, got `{s}`"));
    };
    Region::new(a, b, c, d).map_err(|e| e.to_string())
}
