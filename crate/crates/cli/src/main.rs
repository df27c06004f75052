//! `stormsim`: fit, simulate, and analyse extratropical cyclone track models.

mod commands;
mod config;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stormsim::risk::Region;

use config::{parse_region, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] stormsim::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "stormsim", version, about = "Stochastic extratropical cyclone track model")]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model bundle to an observed catalog.
    Fit(FitArgs),
    /// Simulate a synthetic catalog from a bundle.
    Simulate(SimulateArgs),
    /// Exceedance probabilities, return periods and return levels.
    Risk(RiskArgs),
    /// QQ, PACF, spatial density and mean residual life tables.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct CatalogArgs {
    /// Track catalog CSV.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Years of record, overriding the catalog header.
    #[arg(long)]
    years: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Where to write the bundle (default `<out>/bundle.json`).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Markov order k.
    #[arg(long)]
    order: Option<usize>,
    /// GPD threshold on the preprocessed scale.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Laplace-scale threshold for the dependence model.
    #[arg(long, allow_negative_numbers = true)]
    laplace_threshold: Option<f64>,
    /// Grid cell width and height in degrees.
    #[arg(long, num_args = 2, value_names = ["DLON", "DLAT"])]
    cell: Option<Vec<f64>>,
    /// Multiply every kernel bandwidth by this factor.
    #[arg(long)]
    bandwidth_scale: Option<f64>,
    /// Censoring information: storms whose `termination_cause` column is not
    /// `hazard` do not count as terminations.
    #[arg(long)]
    censored: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Model bundle JSON.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Base seed; every storm gets its own derived stream.
    #[arg(long)]
    seed: u64,
    /// Number of storms.
    #[arg(long, short = 'n')]
    storms: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_age: Option<usize>,
    /// Years represented by the output (default: storms / training rate).
    #[arg(long)]
    years: Option<f64>,
}

#[derive(Args, Debug)]
struct RiskArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Region `lon_min,lon_max,lat_min,lat_max`; repeatable.
    #[arg(long = "region", value_parser = parse_region, allow_hyphen_values = true)]
    regions: Vec<Region>,
    /// Return periods in years, comma separated.
    #[arg(long, value_delimiter = ',')]
    return_periods: Option<Vec<f64>>,
    /// Vorticity levels, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    omegas: Option<Vec<f64>>,
    /// Bootstrap replicates (at least 200).
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    catalog: CatalogArgs,
    /// Synthetic catalog to compare with.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Bundle whose preprocessing feeds the mean residual life table.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn apply_catalog(cfg: &mut RunConfig, a: &CatalogArgs) {
    if let Some(p) = &a.catalog {
        cfg.paths.catalog = Some(p.clone());
    }
    if let Some(y) = a.years {
        cfg.paths.years_of_record = Some(y);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.paths.output_dir = out;
    }
    match cli.command {
        Command::Fit(a) => {
            apply_catalog(&mut cfg, &a.catalog);
            let e = &mut cfg.engine;
            if let Some(v) = a.order {
                e.order = v;
            }
            if let Some(v) = a.threshold {
                e.gpd_threshold = v;
            }
            if a.laplace_threshold.is_some() {
                e.laplace_threshold = a.laplace_threshold;
            }
            if let Some(c) = a.cell {
                (e.cell_lon, e.cell_lat) = (c[0], c[1]);
            }
            if let Some(s) = a.bandwidth_scale {
                let b = &mut e.bandwidth;
                for v in [
                    &mut b.genesis_location,
                    &mut b.genesis_conditions,
                    &mut b.bearing,
                    &mut b.speed,
                    &mut b.vorticity,
                    &mut b.marginal,
                ] {
                    *v *= s;
                }
            }
            if a.bundle.is_some() {
                cfg.paths.bundle = a.bundle;
            }
            commands::fit(&cfg, a.censored)
        }
        Command::Simulate(a) => {
            if a.bundle.is_some() {
                cfg.paths.bundle = a.bundle;
            }
            let s = &mut cfg.simulation;
            s.seed = Some(a.seed);
            if let Some(v) = a.storms {
                s.storms = v;
            }
            if let Some(v) = a.workers {
                s.workers = v;
            }
            if let Some(v) = a.max_age {
                s.max_age = v;
            }
            if a.years.is_some() {
                s.years = a.years;
            }
            commands::simulate(&cfg)
        }
        Command::Risk(a) => {
            apply_catalog(&mut cfg, &a.catalog);
            let r = &mut cfg.risk;
            if !a.regions.is_empty() {
                r.regions = a.regions;
            }
            if let Some(v) = a.return_periods {
                r.return_periods = v;
            }
            if let Some(v) = a.omegas {
                r.omegas = v;
            }
            if let Some(v) = a.replicates {
                r.bootstrap.replicates = v;
            }
            if let Some(v) = a.seed {
                r.bootstrap.seed = v;
            }
            if let Some(v) = a.workers {
                r.bootstrap.workers = v;
            }
            commands::risk(&cfg)
        }
        Command::Diagnose(a) => {
            apply_catalog(&mut cfg, &a.catalog);
            if a.synthetic.is_some() {
                cfg.paths.synthetic = a.synthetic;
            }
            if a.bundle.is_some() {
                cfg.paths.bundle = a.bundle;
            }
            if let Some(v) = a.max_lag {
                cfg.diagnose.max_lag = v;
            }
            if let Some(v) = a.seed {
                cfg.diagnose.envelope.seed = v;
            }
            commands::diagnose(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
