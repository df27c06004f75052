//! Univariate extreme-value machinery.
//!
//! Excesses of a threshold `u` follow a generalised Pareto distribution (GPD)
//! with survival function `(1 + ξz/ψ)_+^(-1/ξ)`. Below the threshold the
//! marginal distribution is a Gaussian kernel estimate; above it the GPD tail
//! is spliced on with rate `λ_u = 1 - F̂(u)`. Values are moved to Laplace
//! margins for dependence modelling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{fit_kde, KdeModel, KdeStructure};
use crate::numeric::{bisect_increasing, nelder_mead, normal_cdf, quantile_sorted, sorted};

/// Below this `|ξ|` the exponential limit is used.
pub const XI_ZERO: f64 = 1e-8;

/// Laplace values are clamped to `±LAPLACE_LIMIT` when `F` reaches 0 or 1.
pub const LAPLACE_LIMIT: f64 = 700.0;

const MIN_EXCEEDANCES: usize = 30;

/// GPD survival `Pr(Z - u > z | Z > u)`.
pub fn gpd_survival(scale: f64, shape: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if shape.abs() < XI_ZERO {
        return (-z / scale).exp();
    }
    let t = 1.0 + shape * z / scale;
    if t <= 0.0 {
        0.0
    } else {
        t.powf(-1.0 / shape)
    }
}

/// Excess `z` with `gpd_survival(z) = tail`.
pub fn gpd_survival_inverse(scale: f64, shape: f64, tail: f64) -> f64 {
    if shape.abs() < XI_ZERO {
        -scale * tail.ln()
    } else {
        scale / shape * (tail.powf(-shape) - 1.0)
    }
}

fn gpd_log_density(scale: f64, shape: f64, z: f64) -> f64 {
    if shape.abs() < XI_ZERO {
        return -scale.ln() - z / scale;
    }
    let t = 1.0 + shape * z / scale;
    if t <= 0.0 {
        f64::NEG_INFINITY
    } else {
        -scale.ln() - (1.0 + 1.0 / shape) * t.ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub threshold: f64,
    pub scale: f64,
    pub shape: f64,
    /// `1 - F̂(u)` from the kernel CDF.
    pub exceed_rate: f64,
    /// Observed proportion of values above `u`, for diagnostics.
    pub empirical_rate: f64,
    pub n_exceed: usize,
    pub log_likelihood: f64,
    pub converged: bool,
}

impl GpdFit {
    /// Finite upper endpoint `u - ψ/ξ` when `ξ < 0`.
    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.shape < -XI_ZERO).then(|| self.threshold - self.scale / self.shape)
    }

    pub fn survival(&self, excess: f64) -> f64 {
        gpd_survival(self.scale, self.shape, excess)
    }
}

#[derive(Clone, Debug)]
pub struct GpdOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Treat excesses as interval-censored to this recording resolution.
    pub resolution: Option<f64>,
}

impl Default for GpdOptions {
    fn default() -> Self {
        GpdOptions {
            restarts: 20,
            seed: 0x5EED_6FD0,
            resolution: None,
        }
    }
}

/// Maximum-likelihood GPD parameters for a sample of excesses.
#[derive(Clone, Debug, PartialEq)]
pub struct GpdEstimate {
    pub scale: f64,
    pub shape: f64,
    pub log_likelihood: f64,
    pub converged: bool,
}

pub fn gpd_log_likelihood(excesses: &[f64], scale: f64, shape: f64, resolution: Option<f64>) -> f64 {
    if !(scale > 0.0) || shape <= -1.0 {
        return f64::NEG_INFINITY;
    }
    match resolution {
        None => excesses.iter().map(|&z| gpd_log_density(scale, shape, z)).sum(),
        Some(delta) => excesses
            .iter()
            .map(|&z| {
                let lo = (z - 0.5 * delta).max(0.0);
                let p = gpd_survival(scale, shape, lo) - gpd_survival(scale, shape, z + 0.5 * delta);
                if p > 0.0 {
                    p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .sum(),
    }
}

/// Simplex search over `(log ψ, ξ)` with seeded random restarts.
pub fn fit_gpd_excesses(excesses: &[f64], opts: &GpdOptions) -> Result<GpdEstimate> {
    if excesses.len() < MIN_EXCEEDANCES {
        return Err(Error::insufficient(
            "evt",
            format!("{} exceedances, need at least {MIN_EXCEEDANCES}", excesses.len()),
        ));
    }
    if excesses.iter().any(|&z| !(z >= 0.0) || !z.is_finite()) {
        return Err(Error::Argument("GPD excesses must be finite and non-negative".into()));
    }
    let nll = |p: &[f64]| {
        let v = gpd_log_likelihood(excesses, p[0].exp(), p[1], opts.resolution);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let max = excesses.iter().copied().fold(0.0, f64::max);
    // method-of-moments start, pulled inside the support if needed
    let mut xi0 = (0.5 * (1.0 - mean * mean / var)).clamp(-0.9, 0.9);
    let mut psi0 = mean * (1.0 - xi0);
    if xi0 < 0.0 && psi0 <= -xi0 * max {
        xi0 = 0.0;
        psi0 = mean;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<crate::numeric::Minimum> = None;
    for r in 0..opts.restarts.max(1) {
        let start = if r == 0 {
            [psi0.ln(), xi0]
        } else {
            [
                psi0.ln() + rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
            ]
        };
        if !nll(&start).is_finite() {
            continue;
        }
        let m = nelder_mead(nll, &start, &[0.2, 0.1], 1e-10, 4000);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::fit("evt", "no feasible GPD starting point"))?;
    if !best.value.is_finite() {
        return Err(Error::fit("evt", "GPD likelihood not finite at optimum"));
    }
    Ok(GpdEstimate {
        scale: best.x[0].exp(),
        shape: best.x[1],
        log_likelihood: -best.value,
        converged: best.converged,
    })
}

/// Fit the GPD tail of `data` above `u`, with `λ_u` taken from a Gaussian
/// kernel CDF of the full sample.
pub fn fit_gpd(data: &[f64], u: f64, bandwidth_scale: f64, opts: &GpdOptions) -> Result<GpdFit> {
    let body = fit_body(data, bandwidth_scale)?;
    fit_gpd_with_body(data, u, &body, opts)
}

fn fit_body(data: &[f64], bandwidth_scale: f64) -> Result<KdeModel> {
    let rows: Vec<Vec<f64>> = data.iter().map(|&x| vec![x]).collect();
    fit_kde(&rows, KdeStructure::Oriented, bandwidth_scale, &[])
}

fn fit_gpd_with_body(data: &[f64], u: f64, body: &KdeModel, opts: &GpdOptions) -> Result<GpdFit> {
    let excesses: Vec<f64> = data.iter().filter(|&&x| x > u).map(|&x| x - u).collect();
    let est = fit_gpd_excesses(&excesses, opts)?;
    if !est.converged {
        log::warn!("evt: GPD simplex did not reach tolerance; using best point found");
    }
    Ok(GpdFit {
        threshold: u,
        scale: est.scale,
        shape: est.shape,
        exceed_rate: 1.0 - BodyTable::build(body, u).last_value(),
        empirical_rate: excesses.len() as f64 / data.len() as f64,
        n_exceed: excesses.len(),
        log_likelihood: est.log_likelihood,
        converged: est.converged,
    })
}

/// Tabulated kernel CDF on `[lo, u]`.
///
/// Samples are linearly binned onto the table grid and convolved with the
/// Gaussian CDF; queries interpolate linearly, which keeps the CDF and its
/// inverse exact inverses of each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BodyTable {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

const TABLE_NODES: usize = 8192;

impl BodyTable {
    fn build(body: &KdeModel, u: f64) -> BodyTable {
        let h = body.bandwidth()[(0, 0)].sqrt();
        let n = body.n();
        let min = (0..n).map(|i| body.sample(i)[0]).fold(f64::INFINITY, f64::min);
        let max = (0..n).map(|i| body.sample(i)[0]).fold(f64::NEG_INFINITY, f64::max);
        let lo = (min - 10.0 * h).min(u - 10.0 * h);
        let step = (u - lo) / TABLE_NODES as f64;
        // bins extend past u so mass above the threshold is still counted
        let upper_bins = if max + 10.0 * h > u {
            ((max + 10.0 * h - u) / step).ceil() as usize
        } else {
            0
        };
        let n_bins = TABLE_NODES + 1 + upper_bins;
        let mut weights = vec![0.0; n_bins];
        for i in 0..n {
            let pos = (body.sample(i)[0] - lo) / step;
            // samples beyond the last bin contribute Φ((x - s)/h) ≈ 0
            if pos >= (n_bins - 1) as f64 {
                continue;
            }
            let k = pos.floor().max(0.0) as usize;
            let frac = pos - k as f64;
            weights[k] += 1.0 - frac;
            weights[k + 1] += frac;
        }
        let max_offset = n_bins;
        // phi[j] = Φ(j·step/h) for j in -max_offset..=max_offset
        let phi: Vec<f64> = (0..=2 * max_offset)
            .map(|j| normal_cdf((j as f64 - max_offset as f64) * step / h))
            .collect();
        let values = (0..=TABLE_NODES)
            .map(|node| {
                let mut acc = 0.0;
                for (b, w) in weights.iter().enumerate() {
                    if *w != 0.0 {
                        acc += w * phi[node + max_offset - b];
                    }
                }
                acc / n as f64
            })
            .collect();
        BodyTable { lo, step, values }
    }

    fn last_value(&self) -> f64 {
        *self.values.last().expect("table is non-empty")
    }

    fn hi(&self) -> f64 {
        self.lo + self.step * (self.values.len() - 1) as f64
    }

    fn eval(&self, z: f64) -> Option<f64> {
        if z < self.lo {
            return None;
        }
        let pos = (z - self.lo) / self.step;
        let k = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = (pos - k as f64).clamp(0.0, 1.0);
        Some(self.values[k] + frac * (self.values[k + 1] - self.values[k]))
    }

    fn invert(&self, p: f64) -> Option<f64> {
        if p < self.values[0] {
            return None;
        }
        // last node with value <= p
        let k = self.values.partition_point(|&v| v <= p).saturating_sub(1);
        let k = k.min(self.values.len() - 2);
        let (a, b) = (self.values[k], self.values[k + 1]);
        let frac = if b > a { ((p - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
        Some(self.lo + (k as f64 + frac) * self.step)
    }
}

/// Kernel body spliced with a GPD tail at the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureMarginal {
    pub body: KdeModel,
    pub gpd: GpdFit,
    table: BodyTable,
}

impl MixtureMarginal {
    pub fn fit(data: &[f64], u: f64, bandwidth_scale: f64, opts: &GpdOptions) -> Result<Self> {
        let body = fit_body(data, bandwidth_scale)?;
        let gpd = fit_gpd_with_body(data, u, &body, opts)?;
        Ok(Self::from_parts(body, gpd))
    }

    pub fn from_parts(body: KdeModel, mut gpd: GpdFit) -> Self {
        let table = BodyTable::build(&body, gpd.threshold);
        gpd.exceed_rate = 1.0 - table.last_value();
        MixtureMarginal { body, gpd, table }
    }

    pub fn threshold(&self) -> f64 {
        self.gpd.threshold
    }

    pub fn cdf(&self, z: f64) -> f64 {
        self.survival_parts(z).0
    }

    /// `(F(z), 1 - F(z))`, each computed on its accurate side.
    fn survival_parts(&self, z: f64) -> (f64, f64) {
        let u = self.gpd.threshold;
        if z > u {
            let tail = self.gpd.exceed_rate * self.gpd.survival(z - u);
            (1.0 - tail, tail)
        } else {
            let f = self.table.eval(z).unwrap_or_else(|| self.body.cdf_1d(z));
            (f, 1.0 - f)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_from_tail(p, 1.0 - p)
    }

    fn quantile_from_tail(&self, p: f64, tail: f64) -> f64 {
        let u = self.gpd.threshold;
        if tail < self.gpd.exceed_rate {
            let t = (tail / self.gpd.exceed_rate).max(f64::MIN_POSITIVE);
            return u + gpd_survival_inverse(self.gpd.scale, self.gpd.shape, t);
        }
        if let Some(z) = self.table.invert(p) {
            return z.min(self.table.hi());
        }
        // far lower tail, below the tabulated range
        let h = self.body.bandwidth()[(0, 0)].sqrt();
        let mut lo = self.table.lo - h;
        while self.body.cdf_1d(lo) > p && lo > self.table.lo - 1e3 * h {
            lo -= 10.0 * h;
        }
        bisect_increasing(|x| self.body.cdf_1d(x), p, lo, self.table.lo, 1e-12)
    }

    /// Laplace-scale value of `z`.
    pub fn to_laplace(&self, z: f64) -> f64 {
        let (f, tail) = self.survival_parts(z);
        let s = if f < 0.5 {
            (2.0 * f).ln()
        } else {
            -(2.0 * tail).ln()
        };
        s.clamp(-LAPLACE_LIMIT, LAPLACE_LIMIT)
    }

    pub fn from_laplace(&self, s: f64) -> f64 {
        if s < 0.0 {
            let p = 0.5 * s.exp();
            self.quantile_from_tail(p, 1.0 - p)
        } else {
            let tail = 0.5 * (-s).exp();
            self.quantile_from_tail(1.0 - tail, tail)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrlRow {
    pub threshold: f64,
    pub mean_excess: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_exceed: usize,
}

/// Mean residual life table; thresholds with fewer than 10 exceedances are
/// omitted.
pub fn mean_residual_life(data: &[f64], thresholds: &[f64]) -> Result<Vec<MrlRow>> {
    if thresholds.is_empty() {
        return Err(Error::Argument("mean residual life needs at least one threshold".into()));
    }
    let mut rows = Vec::new();
    for &u in thresholds {
        let ex: Vec<f64> = data.iter().filter(|&&x| x > u).map(|&x| x - u).collect();
        if ex.len() < 10 {
            continue;
        }
        let n = ex.len() as f64;
        let m = ex.iter().sum::<f64>() / n;
        let sd = (ex.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let half = 1.959_963_984_540_054 * sd / n.sqrt();
        rows.push(MrlRow {
            threshold: u,
            mean_excess: m,
            ci_lo: m - half,
            ci_hi: m + half,
            n_exceed: ex.len(),
        });
    }
    Ok(rows)
}

/// Empirical `Pr(Y > z_q | X > z_q)` over pairs `(X, Y)`, with `z_q` the
/// `q`-quantile of all values. `None` when no pair exceeds the level.
pub fn chi_tau(pairs: &[(f64, f64)], q: f64) -> Result<Option<f64>> {
    if !(q > 0.8 && q < 1.0) {
        return Err(Error::Argument(format!("chi level must lie in (0.8, 1), got {q}")));
    }
    if pairs.is_empty() {
        return Ok(None);
    }
    let all: Vec<f64> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let z = quantile_sorted(&sorted(&all), q);
    let cond: Vec<&(f64, f64)> = pairs.iter().filter(|p| p.0 > z).collect();
    if cond.is_empty() {
        return Ok(None);
    }
    Ok(Some(cond.iter().filter(|p| p.1 > z).count() as f64 / cond.len() as f64))
}

/// `(S_t, S_{t+τ})` pairs taken within each series.
pub fn lag_pairs(series: &[Vec<f64>], tau: usize) -> Vec<(f64, f64)> {
    series
        .iter()
        .flat_map(|s| s.iter().zip(s.iter().skip(tau)).map(|(&a, &b)| (a, b)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn gpd_sample(n: usize, scale: f64, shape: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                gpd_survival_inverse(scale, shape, 1.0 - u)
            })
            .collect()
    }

    #[test]
    fn survival_closed_forms() {
        assert!((gpd_survival(1.0, -0.5, 1.0) - 0.25).abs() < 1e-15);
        assert_eq!(gpd_survival(1.0, -0.5, 2.0), 0.0);
        assert_eq!(gpd_survival(1.0, -0.5, 5.0), 0.0);
        let z = 0.7;
        assert!((gpd_survival(2.0, 1e-12, z) - (-z / 2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn survival_inverse_round_trip() {
        for &(s, x) in &[(0.449, -0.246), (1.0, 0.0), (2.0, 0.3)] {
            for &z in &[0.01, 0.3, 1.0, 1.5] {
                let p = gpd_survival(s, x, z);
                if p > 0.0 {
                    assert!((gpd_survival_inverse(s, x, p) - z).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn recovers_reference_parameters() {
        let ex = gpd_sample(5_000, 0.449, -0.246, 11);
        let fit = fit_gpd_excesses(&ex, &GpdOptions::default()).unwrap();
        assert!((fit.scale - 0.449).abs() < 0.05, "{fit:?}");
        assert!((fit.shape + 0.246).abs() < 0.08, "{fit:?}");
        assert!(fit.converged);
    }

    #[test]
    fn exponential_data_gives_zero_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let exp = Exp::new(1.0 / 0.8).unwrap();
        let ex: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let fit = fit_gpd_excesses(&ex, &GpdOptions::default()).unwrap();
        assert!(fit.shape.abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn optimum_beats_likelihood_grid() {
        let ex = gpd_sample(800, 0.5, -0.2, 8);
        let fit = fit_gpd_excesses(&ex, &GpdOptions::default()).unwrap();
        let mut grid_best = f64::NEG_INFINITY;
        for i in 0..100 {
            for j in 0..100 {
                let scale = 0.2 + 0.6 * i as f64 / 99.0;
                let shape = -0.6 + 0.8 * j as f64 / 99.0;
                grid_best = grid_best.max(gpd_log_likelihood(&ex, scale, shape, None));
            }
        }
        assert!(fit.log_likelihood >= grid_best - 1e-9);
    }

    #[test]
    fn negative_shape_endpoint_covers_data() {
        let ex = gpd_sample(300, 0.449, -0.246, 21);
        let data: Vec<f64> = ex.iter().map(|e| e + 1.5).collect();
        let fit = fit_gpd(&data, 1.5, 1.0, &GpdOptions::default()).unwrap();
        let zf = fit.upper_endpoint().expect("negative shape");
        assert!(data.iter().all(|&x| x <= zf));
    }

    #[test]
    fn too_few_exceedances() {
        let err = fit_gpd_excesses(&[0.1; 29], &GpdOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }));
    }

    #[test]
    fn censored_likelihood_close_to_exact_for_fine_resolution() {
        let ex = gpd_sample(2_000, 0.5, -0.1, 3);
        let opts = GpdOptions {
            resolution: Some(1e-4),
            ..GpdOptions::default()
        };
        let a = fit_gpd_excesses(&ex, &GpdOptions::default()).unwrap();
        let b = fit_gpd_excesses(&ex, &opts).unwrap();
        assert!((a.shape - b.shape).abs() < 1e-3);
    }

    fn normal_mixture(n: usize, seed: u64) -> MixtureMarginal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        MixtureMarginal::fit(&data, 1.5, 1.0, &GpdOptions::default()).unwrap()
    }

    #[test]
    fn mixture_is_continuous_at_threshold() {
        let m = normal_mixture(4_000, 1);
        let u = m.threshold();
        let below = m.cdf(u);
        let above = m.cdf(u + 1e-12);
        assert!((below - (1.0 - m.gpd.exceed_rate)).abs() < 1e-12);
        assert!((above - below).abs() < 1e-10);
    }

    #[test]
    fn table_matches_exact_kernel_cdf() {
        let m = normal_mixture(3_000, 2);
        for z in [-3.0, -1.0, 0.0, 0.7, 1.4] {
            assert!((m.cdf(z) - m.body.cdf_1d(z)).abs() < 1e-5, "{z}");
        }
    }

    #[test]
    fn mixture_quantile_round_trip() {
        let m = normal_mixture(3_000, 3);
        for i in 0..200 {
            let z = -2.5 + 5.0 * i as f64 / 199.0;
            let back = m.quantile(m.cdf(z));
            assert!((back - z).abs() < 1e-8, "{z} -> {back}");
        }
    }

    #[test]
    fn high_probabilities_use_gpd_inverse() {
        let m = normal_mixture(3_000, 4);
        let p = 1.0 - 0.5 * m.gpd.exceed_rate;
        let z = m.quantile(p);
        let expected = m.threshold() + gpd_survival_inverse(m.gpd.scale, m.gpd.shape, 0.5);
        assert!(z > m.threshold());
        assert!((z - expected).abs() < 1e-12);
    }

    #[test]
    fn laplace_reference_values_and_round_trip() {
        let m = normal_mixture(3_000, 5);
        let median = m.quantile(0.5);
        assert!(m.to_laplace(median).abs() < 1e-9);
        let z975 = m.quantile(0.975);
        assert!((m.to_laplace(z975) - 2.995_732_273_553_991).abs() < 1e-8);
        for i in 0..100 {
            let z = -2.5 + 5.0 * i as f64 / 99.0;
            assert!((m.from_laplace(m.to_laplace(z)) - z).abs() < 1e-8);
        }
        assert_eq!(m.to_laplace(1e6), LAPLACE_LIMIT.min(m.to_laplace(1e6)));
    }

    #[test]
    fn mixture_cdf_is_monotone() {
        let m = normal_mixture(2_000, 6);
        let mut prev = 0.0;
        for i in 0..2_000 {
            let z = -6.0 + 10.0 * i as f64 / 1999.0;
            let f = m.cdf(z);
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn mrl_flat_for_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exp = Exp::new(1.0 / 0.6).unwrap();
        let data: Vec<f64> = (0..20_000).map(|_| exp.sample(&mut rng)).collect();
        let rows = mean_residual_life(&data, &[0.0, 0.5, 1.0, 1.5, 100.0]).unwrap();
        assert_eq!(rows.len(), 4, "threshold above max is dropped");
        for r in &rows {
            assert!(r.ci_lo <= 0.6 + 0.02 && 0.6 - 0.02 <= r.ci_hi, "{r:?}");
        }
        assert!(mean_residual_life(&data, &[]).is_err());
    }

    #[test]
    fn mrl_slope_for_negative_shape() {
        let (scale, shape) = (1.0, -0.25);
        let data = gpd_sample(200_000, scale, shape, 9);
        let rows = mean_residual_life(&data, &[0.0, 0.5, 1.0]).unwrap();
        let slope = (rows[2].mean_excess - rows[0].mean_excess) / 1.0;
        assert!((slope - shape / (1.0 - shape)).abs() < 0.02, "{slope}");
    }

    #[test]
    fn chi_baselines() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let indep: Vec<(f64, f64)> = (0..200_000).map(|_| (rng.random(), rng.random())).collect();
        let c = chi_tau(&indep, 0.9).unwrap().unwrap();
        assert!((c - 0.1).abs() < 0.01, "{c}");
        let same: Vec<(f64, f64)> = (0..1000).map(|i| (i as f64, i as f64)).collect();
        assert_eq!(chi_tau(&same, 0.95).unwrap(), Some(1.0));
        assert!(chi_tau(&same, 0.5).is_err());
    }
}
