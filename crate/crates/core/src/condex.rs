//! Conditional extremes on Laplace margins and tail-chain simulation.
//!
//! Given an exceedance `S_t = x > u_L`, the value `j` steps later is modelled
//! as `S_{t+j} = α_j x + x^{β_j} e_j`, with the residual vector `e_{1:k}`
//! drawn from a kernel estimate of its fitted values.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{fit_kde, Conditioner, KdeModel, KdeStructure};
use crate::numeric::nelder_mead;

pub const MIN_EVENTS: usize = 50;

const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondExFit {
    pub order: usize,
    pub threshold: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Working Gaussian residual mean and variance per lag.
    pub residual_mean: Vec<f64>,
    pub residual_var: Vec<f64>,
    /// `n_events × order` fitted residual vectors.
    pub residuals: Vec<Vec<f64>>,
    pub residual_kde: KdeModel,
    /// Lags whose `α` sits at `±1`.
    pub boundary: Vec<bool>,
}

/// Conditioning values and the `k` that follow them within one track.
pub fn exceedance_events(tracks: &[Vec<f64>], k: usize, threshold: f64) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::new();
    for s in tracks {
        for t in 0..s.len().saturating_sub(k) {
            if s[t] > threshold {
                out.push((s[t], s[t + 1..=t + k].to_vec()));
            }
        }
    }
    out
}

/// Profile negative log pseudo-likelihood for one lag.
fn profile_nll(x: &[f64], y: &[f64], alpha: f64, beta: f64) -> f64 {
    let n = x.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut log_x = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let z = (yi - alpha * xi) / xi.powf(beta);
        sum += z;
        sum_sq += z * z;
        log_x += xi.ln();
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(SIGMA2_FLOOR);
    0.5 * n * var.ln() + beta * log_x
}

fn fit_lag(x: &[f64], y: &[f64]) -> (f64, f64) {
    let clamp = |p: &[f64]| (p[0].clamp(-1.0, 1.0), p[1].clamp(0.0, 1.0));
    let objective = |p: &[f64]| {
        let (a, b) = clamp(p);
        let excess = (p[0] - a).powi(2) + (p[1] - b).powi(2);
        profile_nll(x, y, a, b) + 1e4 * excess
    };
    // coarse scan for a start, then refine from the few best cells
    let mut scan = Vec::new();
    for i in 0..=20 {
        for j in 0..=10 {
            let p = [-1.0 + 0.1 * i as f64, 0.1 * j as f64];
            scan.push((objective(&p), p));
        }
    }
    scan.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, [f64; 2])> = None;
    for (_, start) in scan.iter().take(3) {
        let m = nelder_mead(objective, start, &[0.05, 0.05], 1e-12, 2000);
        let (a, b) = clamp(&m.x);
        let v = profile_nll(x, y, a, b);
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, [a, b]));
        }
    }
    let [a, b] = best.expect("at least one start").1;
    (a, b)
}

/// Fit `(α_j, β_j)` for `j = 1..k` by per-lag profile pseudo-likelihood.
pub fn fit_condex(tracks: &[Vec<f64>], k: usize, threshold: f64) -> Result<CondExFit> {
    if k == 0 {
        return Err(Error::Argument("conditional-extremes order must be at least 1".into()));
    }
    let events = exceedance_events(tracks, k, threshold);
    if events.len() < MIN_EVENTS {
        return Err(Error::insufficient(
            "condex",
            format!(
                "{} exceedances of {threshold} with {k} following values, need {MIN_EVENTS}",
                events.len()
            ),
        ));
    }
    if threshold <= 0.0 {
        return Err(Error::Argument("Laplace threshold must be positive".into()));
    }
    let x: Vec<f64> = events.iter().map(|e| e.0).collect();
    let mut alpha = Vec::with_capacity(k);
    let mut beta = Vec::with_capacity(k);
    let mut residual_mean = Vec::with_capacity(k);
    let mut residual_var = Vec::with_capacity(k);
    let mut residuals = vec![vec![0.0; k]; events.len()];
    let mut boundary = Vec::with_capacity(k);
    for j in 0..k {
        let y: Vec<f64> = events.iter().map(|e| e.1[j]).collect();
        let (a, b) = fit_lag(&x, &y);
        let mut sum = 0.0;
        for (i, (&xi, &yi)) in x.iter().zip(&y).enumerate() {
            let e = (yi - a * xi) / xi.powf(b);
            residuals[i][j] = e;
            sum += e;
        }
        let mean = sum / x.len() as f64;
        let var = residuals.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let at_bound = a.abs() >= 1.0 - 1e-9;
        if at_bound {
            log::warn!("condex: lag {} alpha at boundary ({a:.3}), beta {b:.3}", j + 1);
        }
        alpha.push(a);
        beta.push(b);
        residual_mean.push(mean);
        residual_var.push(var);
        boundary.push(at_bound);
    }
    let residual_kde = residual_density(&residuals)?;
    Ok(CondExFit {
        order: k,
        threshold,
        alpha,
        beta,
        residual_mean,
        residual_var,
        residuals,
        residual_kde,
        boundary,
    })
}

/// Oriented kernel estimate; falls back to a floored diagonal bandwidth when
/// the residuals are (near) collinear.
fn residual_density(residuals: &[Vec<f64>]) -> Result<KdeModel> {
    if let Ok(m) = fit_kde(residuals, KdeStructure::Oriented, 1.0, &[]) {
        if m.conditional(&[], &[0]).is_ok() && nalgebra::Cholesky::new(m.bandwidth()).is_some() {
            return Ok(m);
        }
    }
    log::warn!("condex: residual covariance singular, using diagonal kernel");
    let n = residuals.len() as f64;
    let k = residuals[0].len();
    let factor = n.powf(-2.0 / (k as f64 + 4.0));
    let h = DMatrix::from_fn(k, k, |i, j| {
        if i != j {
            return 0.0;
        }
        let mean = residuals.iter().map(|r| r[i]).sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (factor * var).max(SIGMA2_FLOOR)
    });
    KdeModel::with_bandwidth(residuals, h, &[])
}

/// Length of the trailing run of values above `threshold`, capped at `k`.
/// `None` when the most recent value is not an exceedance.
pub fn effective_order(recent: &[f64], threshold: f64, k: usize) -> Option<usize> {
    let l = recent
        .iter()
        .rev()
        .take(k)
        .take_while(|&&s| s > threshold)
        .count();
    (l > 0).then_some(l)
}

/// Most recent Laplace values of one storm, oldest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TailChainState {
    pub recent: Vec<f64>,
}

impl TailChainState {
    pub fn push(&mut self, s: f64, k: usize) {
        self.recent.push(s);
        if self.recent.len() > k {
            let drop = self.recent.len() - k;
            self.recent.drain(..drop);
        }
    }
}

/// Precomputed conditional residual samplers, one per effective order.
#[derive(Clone, Debug)]
pub struct TailChain {
    fit: CondExFit,
    conditioners: Vec<Conditioner>,
    marginals: Vec<Conditioner>,
}

impl TailChain {
    pub fn new(fit: &CondExFit) -> Result<Self> {
        let mut conditioners = Vec::with_capacity(fit.order);
        let mut marginals = Vec::with_capacity(fit.order);
        for l in 1..=fit.order {
            let given: Vec<usize> = (0..l - 1).collect();
            conditioners.push(fit.residual_kde.conditional(&given, &[l - 1])?);
            marginals.push(fit.residual_kde.conditional(&[], &[l - 1])?);
        }
        Ok(TailChain {
            fit: fit.clone(),
            conditioners,
            marginals,
        })
    }

    pub fn fit(&self) -> &CondExFit {
        &self.fit
    }

    /// Next Laplace value, or `None` if the chain is not active (the latest
    /// value is not above the threshold).
    pub fn step<R: Rng + ?Sized>(&self, state: &TailChainState, rng: &mut R) -> Result<Option<f64>> {
        let f = &self.fit;
        let Some(l) = effective_order(&state.recent, f.threshold, f.order) else {
            return Ok(None);
        };
        let n = state.recent.len();
        let base = state.recent[n - l];
        let implied: Vec<f64> = (1..l)
            .map(|m| (state.recent[n - l + m] - f.alpha[m - 1] * base) / base.powf(f.beta[m - 1]))
            .collect();
        let e = match self.conditioners[l - 1].sample(&implied, rng) {
            Ok(v) => v[0],
            Err(Error::UnsupportedConditioning) => {
                log::warn!("condex: residual history outside kernel support, drawing unconditionally");
                self.marginals[l - 1].sample(&[], rng)?[0]
            }
            Err(e) => return Err(e),
        };
        Ok(Some(f.alpha[l - 1] * base + base.powf(f.beta[l - 1]) * e))
    }
}

/// One-shot tail-chain step; build a [`TailChain`] once when stepping often.
pub fn step_tail_chain<R: Rng + ?Sized>(
    fit: &CondExFit,
    state: &TailChainState,
    rng: &mut R,
) -> Result<Option<f64>> {
    TailChain::new(fit)?.step(state, rng)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numeric::normal_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn laplace_from_normal(z: f64) -> f64 {
        if z < 0.0 {
            (2.0 * normal_cdf(z)).ln()
        } else {
            -(2.0 * normal_cdf(-z)).ln()
        }
    }

    /// Pairs from a Gaussian copula with correlation `rho`, on Laplace margins.
    pub(crate) fn copula_pairs(n: usize, rho: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let c = rho * a + (1.0 - rho * rho).sqrt() * b;
                vec![laplace_from_normal(a), laplace_from_normal(c)]
            })
            .collect()
    }

    const U99: f64 = 3.912_023_005_428_146; // -ln 0.02

    #[test]
    fn gaussian_copula_norming() {
        let pairs = copula_pairs(200_000, 0.6, 1);
        let fit = fit_condex(&pairs, 1, U99).unwrap();
        assert!((fit.alpha[0] - 0.36).abs() < 0.05, "{:?}", fit.alpha);
        assert!((fit.beta[0] - 0.5).abs() < 0.15, "{:?}", fit.beta);
        assert_eq!(fit.residuals.len(), exceedance_events(&pairs, 1, U99).len());
    }

    #[test]
    fn independence_gives_zero_norming() {
        // beta is weakly identified near alpha = 0, so use ~10^4 events
        let pairs = copula_pairs(1_000_000, 0.0, 2);
        let fit = fit_condex(&pairs, 1, U99).unwrap();
        assert!(fit.alpha[0].abs() < 0.05, "{:?}", fit.alpha);
        assert!(fit.beta[0] < 0.15, "{:?}", fit.beta);
    }

    #[test]
    fn fit_beats_parameter_grid() {
        let pairs = copula_pairs(50_000, 0.6, 3);
        let fit = fit_condex(&pairs, 1, U99).unwrap();
        let ev = exceedance_events(&pairs, 1, U99);
        let x: Vec<f64> = ev.iter().map(|e| e.0).collect();
        let y: Vec<f64> = ev.iter().map(|e| e.1[0]).collect();
        let at_fit = profile_nll(&x, &y, fit.alpha[0], fit.beta[0]);
        for i in 0..=200 {
            for j in 0..=100 {
                let v = profile_nll(&x, &y, -1.0 + 0.01 * i as f64, 0.01 * j as f64);
                assert!(at_fit <= v + 1e-8);
            }
        }
    }

    #[test]
    fn perfect_dependence_hits_boundary() {
        let tracks: Vec<Vec<f64>> = (0..80).map(|i| vec![4.0 + 0.01 * i as f64; 5]).collect();
        let fit = fit_condex(&tracks, 2, 3.0).unwrap();
        assert!(fit.alpha.iter().all(|a| (a - 1.0).abs() < 1e-9), "{:?}", fit.alpha);
        assert!(fit.beta.iter().all(|b| *b < 1e-6), "{:?}", fit.beta);
        assert!(fit.boundary.iter().all(|b| *b));
        assert!(fit.residuals.iter().flatten().all(|e| e.abs() < 1e-8));
    }

    #[test]
    fn inversion_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tracks: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let mut s = vec![0.0f64; 12];
                s[0] = rng.random_range(-2.0..6.0);
                for t in 1..12 {
                    let e: f64 = rng.sample(StandardNormal);
                    s[t] = 0.7 * s[t - 1] + e;
                }
                s
            })
            .collect();
        let k = 3;
        let fit = fit_condex(&tracks, k, 1.0).unwrap();
        let events = exceedance_events(&tracks, k, 1.0);
        for (ev, e) in events.iter().zip(&fit.residuals) {
            for j in 0..k {
                let back = fit.alpha[j] * ev.0 + ev.0.powf(fit.beta[j]) * e[j];
                assert!((back - ev.1[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn too_few_events() {
        let pairs = copula_pairs(100, 0.5, 6);
        assert!(matches!(
            fit_condex(&pairs, 1, U99),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn effective_order_cases() {
        let u = 1.5;
        assert_eq!(effective_order(&[2.0, 3.0, 2.5], u, 3), Some(3));
        assert_eq!(effective_order(&[0.0, 1.0, 2.5], u, 3), Some(1));
        assert_eq!(effective_order(&[2.0, 1.0, 2.5, 3.0], u, 3), Some(2));
        assert_eq!(effective_order(&[0.0, 1.0, 1.2], u, 3), None);
        assert_eq!(effective_order(&[2.0, 2.0, 2.0, 2.0, 2.0], u, 3), Some(3));
    }

    #[test]
    fn identity_chain() {
        let tracks: Vec<Vec<f64>> = (0..80).map(|i| vec![4.0 + 0.01 * i as f64; 3]).collect();
        let fit = fit_condex(&tracks, 1, 3.0).unwrap();
        let chain = TailChain::new(&fit).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let state = TailChainState { recent: vec![1.0, 5.0] };
        let s = chain.step(&state, &mut rng).unwrap().unwrap();
        assert!((s - 5.0).abs() < 1e-4, "{s}");
        let quiet = TailChainState { recent: vec![1.0, 2.0] };
        assert_eq!(chain.step(&quiet, &mut rng).unwrap(), None);
    }

    #[test]
    fn drift_returns_chain_below_threshold() {
        let pairs = copula_pairs(200_000, 0.6, 8);
        let fit = fit_condex(&pairs, 1, U99).unwrap();
        let chain = TailChain::new(&fit).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let start = 6.0;
        let n = 4000;
        let mut total = 0.0;
        for _ in 0..n {
            let s = chain
                .step(&TailChainState { recent: vec![start] }, &mut rng)
                .unwrap()
                .unwrap();
            total += s;
        }
        let drift = total / n as f64 - start;
        let expected = (fit.alpha[0] - 1.0) * start + start.powf(fit.beta[0]) * fit.residual_mean[0];
        let se = start.powf(fit.beta[0]) * fit.residual_var[0].sqrt() * 1.2 / (n as f64).sqrt();
        assert!(drift < 0.0);
        assert!((drift - expected).abs() < 4.0 * se, "{drift} vs {expected}");
    }

    #[test]
    fn stepping_is_deterministic() {
        let pairs = copula_pairs(50_000, 0.6, 10);
        let fit = fit_condex(&pairs, 1, U99).unwrap();
        let state = TailChainState { recent: vec![5.0] };
        let a = step_tail_chain(&fit, &state, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = step_tail_chain(&fit, &state, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
