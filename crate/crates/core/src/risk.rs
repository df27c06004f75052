//! Risk summaries over track catalogs: exceedance probabilities, return
//! periods and levels, spatial densities, storm-level bootstrap intervals and
//! QQ tolerance envelopes.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{grid_cell, Catalog, GridSpec, StormTrack, TrackPoint};
use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, sorted};

/// Attempts at redrawing a bootstrap resample on which the statistic is undefined.
const REDRAWS: usize = 10;
const MIN_REPLICATES: usize = 200;

/// Open lon/lat box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Default for Region {
    /// The British Isles box.
    fn default() -> Self {
        Region {
            lon_min: -11.0,
            lon_max: 2.0,
            lat_min: 50.0,
            lat_max: 60.0,
        }
    }
}

impl Region {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        let r = Region {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lon_min < self.lon_max && self.lat_min < self.lat_max {
            Ok(())
        } else {
            Err(Error::Validation(format!("region {self} has an empty extent")))
        }
    }

    pub fn contains(&self, p: &TrackPoint) -> bool {
        p.lon > self.lon_min && p.lon < self.lon_max && p.lat > self.lat_min && p.lat < self.lat_max
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}) x ({}, {})",
            self.lon_min, self.lon_max, self.lat_min, self.lat_max
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// No exceedance in the record: the return period is unbounded.
    InfinitePeriod,
    /// Fewer than one exceedance expected over the record.
    ExtrapolationUnsupported,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::InfinitePeriod => "infinite-period",
            Status::ExtrapolationUnsupported => "extrapolation-unsupported",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskResult {
    pub estimate: f64,
    pub ci: Option<(f64, f64)>,
    /// Counts entering the estimate: exceedances (or storms with one) and
    /// in-region points (or storms).
    pub numerator: usize,
    pub denominator: usize,
    pub status: Status,
}

impl RiskResult {
    /// Attach an interval, widened if needed so that it contains the estimate.
    pub fn with_ci(mut self, ci: Option<(f64, f64)>) -> Self {
        self.ci = ci.map(|(lo, hi)| (lo.min(self.estimate), hi.max(self.estimate)));
        self
    }
}

fn in_region<'a>(
    storms: impl IntoIterator<Item = &'a StormTrack>,
    region: Region,
) -> impl Iterator<Item = &'a TrackPoint> {
    storms
        .into_iter()
        .flat_map(move |s| s.points().iter().filter(move |p| region.contains(p)))
}

/// In-region vorticity values.
pub fn region_values<'a>(storms: impl IntoIterator<Item = &'a StormTrack>, region: &Region) -> Vec<f64> {
    in_region(storms, *region).map(|p| p.vorticity).collect()
}

/// `(exceedances of omega, in-region points)`.
pub fn exceedance_counts<'a>(
    storms: impl IntoIterator<Item = &'a StormTrack>,
    region: &Region,
    omega: f64,
) -> (usize, usize) {
    in_region(storms, *region).fold((0, 0), |(e, n), p| (e + usize::from(p.vorticity > omega), n + 1))
}

/// `(storms with an in-region exceedance, storms entering the region)`.
pub fn max_exceedance_counts<'a>(
    storms: impl IntoIterator<Item = &'a StormTrack>,
    region: &Region,
    omega: f64,
) -> (usize, usize) {
    let mut out = (0, 0);
    for s in storms {
        let mut inside = s.points().iter().filter(|p| region.contains(p)).peekable();
        if inside.peek().is_none() {
            continue;
        }
        out.1 += 1;
        if inside.any(|p| p.vorticity > omega) {
            out.0 += 1;
        }
    }
    out
}

fn ratio(num: usize, den: usize, region: &Region) -> Result<RiskResult> {
    if den == 0 {
        return Err(Error::UndefinedRegion(region.to_string()));
    }
    Ok(RiskResult {
        estimate: num as f64 / den as f64,
        ci: None,
        numerator: num,
        denominator: den,
        status: Status::Ok,
    })
}

/// Fraction of in-region track points whose vorticity exceeds `omega`.
pub fn exceedance_prob(catalog: &Catalog, region: &Region, omega: f64) -> Result<RiskResult> {
    let (e, n) = exceedance_counts(&catalog.storms, region, omega);
    ratio(e, n, region)
}

/// Fraction of storms entering the region whose in-region maximum vorticity
/// exceeds `omega_max`.
pub fn max_exceedance_prob(catalog: &Catalog, region: &Region, omega_max: f64) -> Result<RiskResult> {
    let (e, n) = max_exceedance_counts(&catalog.storms, region, omega_max);
    ratio(e, n, region)
}

/// Years between exceedances of `omega` given the in-region values.
fn period_from(values: &[f64], years: f64, omega: f64) -> (f64, usize, Status) {
    let m = values.iter().filter(|&&v| v > omega).count();
    if m == 0 {
        (f64::INFINITY, 0, Status::InfinitePeriod)
    } else {
        (years / m as f64, m, Status::Ok)
    }
}

/// Smallest level exceeded at most `years / r` times: the lower envelope of
/// the inverse of the step-function exceedance count.
fn level_from(values: &[f64], years: f64, r: f64) -> (f64, usize, Status) {
    let target = years / r;
    if target < 1.0 || values.is_empty() {
        return (f64::NAN, 0, Status::ExtrapolationUnsupported);
    }
    let mut desc = values.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let m = target.floor() as usize;
    let level = if m >= desc.len() {
        desc[desc.len() - 1]
    } else {
        desc[m]
    };
    (level, m, Status::Ok)
}

pub fn return_period(catalog: &Catalog, region: &Region, omega: f64) -> Result<RiskResult> {
    let values = region_values(&catalog.storms, region);
    if values.is_empty() {
        return Err(Error::UndefinedRegion(region.to_string()));
    }
    let (estimate, m, status) = period_from(&values, catalog.years_of_record, omega);
    Ok(RiskResult {
        estimate,
        ci: None,
        numerator: m,
        denominator: values.len(),
        status,
    })
}

pub fn return_level(catalog: &Catalog, region: &Region, r_years: f64) -> Result<RiskResult> {
    if !(r_years > 0.0) {
        return Err(Error::Argument(format!("return period must be positive, got {r_years}")));
    }
    let values = region_values(&catalog.storms, region);
    if values.is_empty() {
        return Err(Error::UndefinedRegion(region.to_string()));
    }
    let (estimate, m, status) = level_from(&values, catalog.years_of_record, r_years);
    Ok(RiskResult {
        estimate,
        ci: None,
        numerator: m,
        denominator: values.len(),
        status,
    })
}

/// A scalar risk statistic, evaluable on bootstrap resamples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Statistic {
    Exceedance(f64),
    MaxExceedance(f64),
    ReturnPeriod(f64),
    ReturnLevel(f64),
}

impl Statistic {
    /// Value on a set of storms with `years` of record; `None` when undefined.
    pub fn evaluate(&self, storms: &[&StormTrack], years: f64, region: &Region) -> Option<f64> {
        let it = storms.iter().copied();
        match *self {
            Statistic::Exceedance(w) => {
                let (e, n) = exceedance_counts(it, region, w);
                (n > 0).then(|| e as f64 / n as f64)
            }
            Statistic::MaxExceedance(w) => {
                let (e, n) = max_exceedance_counts(it, region, w);
                (n > 0).then(|| e as f64 / n as f64)
            }
            Statistic::ReturnPeriod(w) => {
                let v = region_values(it, region);
                (!v.is_empty()).then(|| period_from(&v, years, w).0)
            }
            Statistic::ReturnLevel(r) => {
                let (level, _, status) = level_from(&region_values(it, region), years, r);
                (status == Status::Ok).then_some(level)
            }
        }
    }
}

/// Point estimate with a storm-level bootstrap interval.
pub fn estimate(
    catalog: &Catalog,
    region: &Region,
    stat: Statistic,
    bootstrap: Option<&BootstrapOptions>,
) -> Result<RiskResult> {
    let result = match stat {
        Statistic::Exceedance(w) => exceedance_prob(catalog, region, w)?,
        Statistic::MaxExceedance(w) => max_exceedance_prob(catalog, region, w)?,
        Statistic::ReturnPeriod(w) => return_period(catalog, region, w)?,
        Statistic::ReturnLevel(r) => return_level(catalog, region, r)?,
    };
    let Some(opts) = bootstrap else { return Ok(result) };
    if result.status == Status::ExtrapolationUnsupported {
        return Ok(result);
    }
    let years = catalog.years_of_record;
    let ci = bootstrap_ci(&catalog.storms, |s| stat.evaluate(s, years, region), opts)?;
    Ok(result.with_ci(ci))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    All,
    Genesis,
    Lysis,
}

/// Share of points per grid cell (flat index), summing to one over the grid.
/// With `area_correction` counts are divided by the cosine of the cell-centre
/// latitude before normalising.
pub fn spatial_density<'a>(
    storms: impl IntoIterator<Item = &'a StormTrack>,
    grid: &GridSpec,
    subset: Subset,
    area_correction: bool,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; grid.n_cells()];
    let mut add = |p: &TrackPoint| {
        if let Some(c) = grid_cell(p.position(), grid) {
            counts[grid.flat(c)] += 1.0;
        }
    };
    for s in storms {
        match subset {
            Subset::All => s.points().iter().for_each(&mut add),
            Subset::Genesis => add(s.genesis()),
            Subset::Lysis => add(s.lysis()),
        }
    }
    if area_correction {
        for (i, c) in counts.iter_mut().enumerate() {
            *c /= grid.center(grid.unflat(i)).lat.to_radians().cos().max(1e-12);
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::Validation("no catalog point lies inside the grid".into()));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 1000,
            level: 0.95,
            seed: 0,
            workers: 1,
        }
    }
}

impl BootstrapOptions {
    fn validate(&self) -> Result<()> {
        if self.replicates < MIN_REPLICATES {
            return Err(Error::Argument(format!(
                "at least {MIN_REPLICATES} bootstrap replicates needed, got {}",
                self.replicates
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Argument(format!("level must be in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Stream for replicate `index` of a resampling run seeded by `seed`.
fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Component-wise percentile intervals of a vector statistic under
/// resampling of whole storms. `None` when the statistic stayed undefined
/// on some replicate after the allowed redraws.
pub fn bootstrap_intervals<F>(
    storms: &[StormTrack],
    stat: F,
    opts: &BootstrapOptions,
) -> Result<Option<Vec<(f64, f64)>>>
where
    F: Fn(&[&StormTrack]) -> Option<Vec<f64>> + Sync,
{
    opts.validate()?;
    if storms.is_empty() {
        return Err(Error::Argument("bootstrap needs at least one storm".into()));
    }
    let n = storms.len();
    let reps: Vec<Option<Vec<f64>>> = run_pool(opts.workers, || {
        (0..opts.replicates)
            .into_par_iter()
            .map(|b| {
                let mut rng = replicate_rng(opts.seed, b);
                let mut sample: Vec<&StormTrack> = Vec::with_capacity(n);
                for _ in 0..=REDRAWS {
                    sample.clear();
                    sample.extend((0..n).map(|_| &storms[rng.random_range(0..n)]));
                    if let Some(v) = stat(&sample) {
                        return Some(v);
                    }
                }
                None
            })
            .collect()
    })?;
    let Some(reps) = reps.into_iter().collect::<Option<Vec<_>>>() else {
        log::warn!("risk: statistic undefined on a bootstrap replicate after {REDRAWS} redraws");
        return Ok(None);
    };
    let d = reps[0].len();
    if reps.iter().any(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: d,
            got: reps.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
        });
    }
    let a = (1.0 - opts.level) / 2.0;
    Ok(Some(
        (0..d)
            .map(|j| {
                let col = sorted(&reps.iter().map(|r| r[j]).collect::<Vec<_>>());
                (quantile_sorted(&col, a), quantile_sorted(&col, 1.0 - a))
            })
            .collect(),
    ))
}

/// Percentile interval of a scalar statistic under storm-level resampling.
pub fn bootstrap_ci<F>(storms: &[StormTrack], stat: F, opts: &BootstrapOptions) -> Result<Option<(f64, f64)>>
where
    F: Fn(&[&StormTrack]) -> Option<f64> + Sync,
{
    Ok(bootstrap_intervals(storms, |s| stat(s).map(|v| vec![v]), opts)?.map(|v| v[0]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub prob: f64,
    pub observed: f64,
    pub simulated: f64,
    pub lo: f64,
    pub hi: f64,
    pub inside: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions {
            replicates: 500,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Plotting positions `(i - 0.5) / m`.
pub fn plotting_positions(m: usize) -> Vec<f64> {
    (1..=m).map(|i| (i as f64 - 0.5) / m as f64).collect()
}

fn envelope_rows(
    observed: &[f64],
    simulated: &[f64],
    probs: &[f64],
    opts: &EnvelopeOptions,
    resample: impl Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
) -> Result<Vec<QqRow>> {
    if observed.is_empty() || simulated.is_empty() {
        return Err(Error::Argument("QQ envelope needs non-empty samples".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) || opts.replicates == 0 {
        return Err(Error::Argument("invalid envelope level or replicate count".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("quantile level {p} outside [0, 1]")));
    }
    let reps: Vec<Vec<f64>> = (0..opts.replicates)
        .map(|b| {
            let s = sorted(&resample(&mut replicate_rng(opts.seed, b)));
            probs.iter().map(|&p| quantile_sorted(&s, p)).collect()
        })
        .collect();
    let obs = sorted(observed);
    let sim = sorted(simulated);
    let a = (1.0 - opts.level) / 2.0;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let col = sorted(&reps.iter().map(|r| r[j]).collect::<Vec<_>>());
            let (lo, hi) = (quantile_sorted(&col, a), quantile_sorted(&col, 1.0 - a));
            let o = quantile_sorted(&obs, p);
            QqRow {
                prob: p,
                observed: o,
                simulated: quantile_sorted(&sim, p),
                lo,
                hi,
                inside: lo <= o && o <= hi,
            }
        })
        .collect())
}

/// Pointwise tolerance bands for observed quantiles: the simulated sample is
/// resampled with replacement at the observed size.
pub fn qq_envelope(
    observed: &[f64],
    simulated: &[f64],
    probs: &[f64],
    opts: &EnvelopeOptions,
) -> Result<Vec<QqRow>> {
    let m = observed.len();
    envelope_rows(observed, simulated, probs, opts, |rng| {
        (0..m)
            .map(|_| simulated[rng.random_range(0..simulated.len())])
            .collect()
    })
}

/// As [`qq_envelope`] for clustered data: whole simulated groups (storms)
/// are resampled, as many as there are observed groups.
pub fn qq_envelope_grouped(
    observed: &[Vec<f64>],
    simulated: &[Vec<f64>],
    probs: &[f64],
    opts: &EnvelopeOptions,
) -> Result<Vec<QqRow>> {
    let obs: Vec<f64> = observed.iter().flatten().copied().collect();
    let sim: Vec<f64> = simulated.iter().flatten().copied().collect();
    let g = observed.len();
    envelope_rows(&obs, &sim, probs, opts, |rng| {
        let mut out = Vec::new();
        for _ in 0..g {
            out.extend_from_slice(&simulated[rng.random_range(0..simulated.len())]);
        }
        out
    })
}

pub fn fraction_inside(rows: &[QqRow]) -> f64 {
    rows.iter().filter(|r| r.inside).count() as f64 / rows.len().max(1) as f64
}
