//! Logistic additive hazard for storm termination.
//!
//! Each covariate enters through a penalised cubic regression spline. The
//! spline is centred (sum-to-zero over the training rows) and penalised by
//! squared second divided differences of its coefficients taken at the
//! Greville abscissae, so an infinitely smoothed term is exactly linear.
//! Smoothing parameters are chosen by GCV within penalised IRLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::StormTrack;
use crate::error::{Error, Result};
use crate::numeric::quantile_sorted;

/// First age (1-based point count) at which a storm may terminate.
pub const MIN_AGE: usize = 8;

const DEGREE: usize = 3;
/// Outer iterations during which smoothing parameters are re-selected.
const LAMBDA_ITERATIONS: usize = 20;

const SEPARATION_LIMIT: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardTerm {
    Vorticity,
    /// `ω_{t-1} - ω_t`.
    Drop,
    Age,
    Lon,
    Lat,
}

impl HazardTerm {
    pub const ALL: [HazardTerm; 5] = [
        HazardTerm::Vorticity,
        HazardTerm::Drop,
        HazardTerm::Age,
        HazardTerm::Lon,
        HazardTerm::Lat,
    ];

    pub fn value(self, c: &HazardCovariates) -> f64 {
        match self {
            HazardTerm::Vorticity => c.vorticity,
            HazardTerm::Drop => c.drop,
            HazardTerm::Age => c.age as f64,
            HazardTerm::Lon => c.lon,
            HazardTerm::Lat => c.lat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazardCovariates {
    pub vorticity: f64,
    pub drop: f64,
    /// 1-based number of points so far.
    pub age: usize,
    pub lon: f64,
    pub lat: f64,
}

/// Covariates at 0-based point `i` of a track (`i >= 1`).
pub fn hazard_covariates(track: &StormTrack, i: usize) -> HazardCovariates {
    let p = &track.points()[i];
    HazardCovariates {
        vorticity: p.vorticity,
        drop: track.points()[i - 1].vorticity - p.vorticity,
        age: i + 1,
        lon: p.lon,
        lat: p.lat,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GamDesign {
    pub terms: Vec<HazardTerm>,
    /// One column per term.
    pub columns: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
}

impl GamDesign {
    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }
}

/// One row per point of age `>= 8`; outcome 1 at the final point unless the
/// storm is censored. Storms of exactly 8 points would contribute only a
/// terminal row and are skipped unless `config.include_minimal_storms`.
pub fn build_design(storms: &[StormTrack], censored: &[bool], config: &GamConfig) -> GamDesign {
    let terms = &config.terms;
    let mut columns = vec![Vec::new(); terms.len()];
    let mut outcome = Vec::new();
    let mut skipped = 0usize;
    for (s, track) in storms.iter().enumerate() {
        let cens = censored.get(s).copied().unwrap_or(false);
        if track.len() <= MIN_AGE && !config.include_minimal_storms {
            skipped += 1;
            continue;
        }
        for i in (MIN_AGE - 1)..track.len() {
            let c = hazard_covariates(track, i);
            for (col, t) in columns.iter_mut().zip(terms) {
                col.push(t.value(&c));
            }
            outcome.push(if i + 1 == track.len() && !cens { 1.0 } else { 0.0 });
        }
    }
    if skipped > 0 {
        log::warn!("gam: excluded {skipped} storm(s) shorter than {} points", MIN_AGE + 1);
    }
    GamDesign {
        terms: terms.to_vec(),
        columns,
        outcome,
    }
}

/// Cubic B-spline basis with clamped end knots, centred by a Householder
/// reflection that removes the direction of the training column means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub term: HazardTerm,
    /// Full knot vector.
    pub knots: Vec<f64>,
    /// Householder vector for the centring constraint.
    householder: Vec<f64>,
    /// Penalty on the constrained coefficients, row-major.
    penalty: Vec<f64>,
}

impl SplineBasis {
    pub fn new(term: HazardTerm, x: &[f64], n_interior: usize) -> Result<Self> {
        let s = crate::numeric::sorted(x);
        let (a, b) = (s[0], s[s.len() - 1]);
        if !(b > a) {
            return Err(Error::fit("gam", format!("{term:?} covariate is constant")));
        }
        let mut interior: Vec<f64> = (1..=n_interior)
            .map(|j| quantile_sorted(&s, j as f64 / (n_interior + 1) as f64))
            .filter(|&k| k > a && k < b)
            .collect();
        interior.dedup();
        let mut knots = vec![a; DEGREE + 1];
        knots.extend(interior);
        knots.extend(std::iter::repeat_n(b, DEGREE + 1));
        let mut basis = SplineBasis {
            term,
            knots,
            householder: Vec::new(),
            penalty: Vec::new(),
        };
        let q = basis.dim_raw();

        let mut means = vec![0.0; q];
        for &xi in x {
            for (m, v) in means.iter_mut().zip(basis.raw(xi)) {
                *m += v / x.len() as f64;
            }
        }
        let norm = means.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = means;
        v[0] += if v[0] < 0.0 { -norm } else { norm };
        basis.householder = v;

        // second divided differences at the Greville abscissae
        let g: Vec<f64> = (0..q)
            .map(|i| basis.knots[i + 1..=i + DEGREE].iter().sum::<f64>() / DEGREE as f64)
            .collect();
        let mut d = DMatrix::zeros(q - 2, q);
        for i in 0..q - 2 {
            let h0 = g[i + 1] - g[i];
            let h1 = g[i + 2] - g[i + 1];
            d[(i, i)] = 1.0 / h0;
            d[(i, i + 1)] = -1.0 / h0 - 1.0 / h1;
            d[(i, i + 2)] = 1.0 / h1;
        }
        let s_raw = d.transpose() * d;
        let z = basis.constraint_matrix();
        let s_c = z.transpose() * s_raw * &z;
        let fro = s_c.norm();
        basis.penalty = s_c.transpose().iter().map(|v| v / fro).collect();
        Ok(basis)
    }

    fn dim_raw(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    /// Number of coefficients after centring.
    pub fn dim(&self) -> usize {
        self.dim_raw() - 1
    }

    fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn span(&self, x: f64) -> usize {
        let q = self.dim_raw();
        if x >= self.knots[q] {
            return q - 1;
        }
        // largest k in [DEGREE, q-1] with knots[k] <= x
        let k = self.knots.partition_point(|&t| t <= x);
        k.saturating_sub(1).clamp(DEGREE, q - 1)
    }

    fn basis_funs(&self, k: usize, x: f64, p: usize) -> Vec<f64> {
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[k + 1 - j];
            right[j] = t[k + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    fn raw_inside(&self, x: f64) -> Vec<f64> {
        let q = self.dim_raw();
        let k = self.span(x);
        let mut out = vec![0.0; q];
        for (r, v) in self.basis_funs(k, x, DEGREE).into_iter().enumerate() {
            out[k - DEGREE + r] = v;
        }
        out
    }

    fn raw_derivative(&self, x: f64) -> Vec<f64> {
        let q = self.dim_raw();
        let t = &self.knots;
        let k = self.span(x);
        let lower = self.basis_funs(k, x, DEGREE - 1);
        // lower[r] is N_{k-p+1+r, p-1}
        let m = |i: usize| -> f64 {
            if i + DEGREE >= k + 1 && i <= k {
                lower[i + DEGREE - 1 - k]
            } else {
                0.0
            }
        };
        let p = DEGREE as f64;
        let mut out = vec![0.0; q];
        for i in (k - DEGREE)..=k {
            let a = t[i + DEGREE] - t[i];
            let b = t[i + DEGREE + 1] - t[i + 1];
            let left = if a > 0.0 { m(i) / a } else { 0.0 };
            let right = if b > 0.0 && i + 1 <= k { m(i + 1) / b } else { 0.0 };
            out[i] = p * (left - right);
        }
        out
    }

    /// Unconstrained basis values, extended linearly outside the knot range.
    fn raw(&self, x: f64) -> Vec<f64> {
        let (a, b) = self.range();
        if x < a {
            let v = self.raw_inside(a);
            let d = self.raw_derivative(a);
            v.iter().zip(&d).map(|(v, d)| v + d * (x - a)).collect()
        } else if x > b {
            let v = self.raw_inside(b);
            let d = self.raw_derivative(b);
            v.iter().zip(&d).map(|(v, d)| v + d * (x - b)).collect()
        } else {
            self.raw_inside(x)
        }
    }

    fn reflect(&self, v: &[f64]) -> Vec<f64> {
        let h = &self.householder;
        let hh: f64 = h.iter().map(|a| a * a).sum();
        let f = 2.0 * h.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / hh;
        v.iter().zip(h).map(|(b, a)| b - f * a).collect()
    }

    /// Centred basis row.
    pub fn row(&self, x: f64) -> Vec<f64> {
        self.reflect(&self.raw(x))[1..].to_vec()
    }

    fn constraint_matrix(&self) -> DMatrix<f64> {
        let q = self.dim_raw();
        let mut z = DMatrix::zeros(q, q - 1);
        for j in 1..q {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            let col = self.reflect(&e);
            for i in 0..q {
                z[(i, j - 1)] = col[i];
            }
        }
        z
    }

    pub fn penalty(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.penalty)
    }

    /// Coefficients on the original B-spline basis.
    pub fn raw_coefficients(&self, coef: &[f64]) -> Vec<f64> {
        let mut padded = vec![0.0];
        padded.extend_from_slice(coef);
        self.reflect(&padded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamConfig {
    pub terms: Vec<HazardTerm>,
    pub interior_knots: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_grid: usize,
    pub sweeps: usize,
    /// Include length-8 storms as single terminal rows.
    pub include_minimal_storms: bool,
}

impl Default for GamConfig {
    fn default() -> Self {
        GamConfig {
            terms: HazardTerm::ALL.to_vec(),
            interior_knots: 10,
            lambda_min: 1e-4,
            lambda_max: 1e4,
            lambda_grid: 41,
            sweeps: 2,
            include_minimal_storms: false,
        }
    }
}

impl GamConfig {
    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = (self.lambda_min.ln(), self.lambda_max.ln());
        let m = self.lambda_grid.max(2);
        (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamFit {
    pub bases: Vec<SplineBasis>,
    pub intercept: f64,
    pub coefs: Vec<Vec<f64>>,
    pub smoothing: Vec<f64>,
    /// Per-basis scale applied to the unit-norm penalty.
    pub penalty_scale: Vec<f64>,
    pub gcv_score: f64,
    pub deviance: f64,
    pub edf: f64,
    pub aic: f64,
    pub n_rows: usize,
    pub min_age: usize,
    pub iterations: usize,
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

impl GamFit {
    pub fn terms(&self) -> Vec<HazardTerm> {
        self.bases.iter().map(|b| b.term).collect()
    }

    /// Centred smooth effect of basis `j` at `x`.
    pub fn effect(&self, j: usize, x: f64) -> f64 {
        self.bases[j].row(x).iter().zip(&self.coefs[j]).map(|(a, b)| a * b).sum()
    }

    /// Linear predictor for covariate values in term order.
    pub fn linear_predictor(&self, values: &[f64]) -> f64 {
        self.intercept + (0..self.bases.len()).map(|j| self.effect(j, values[j])).sum::<f64>()
    }

    /// Termination probability at a point; zero below the minimum age.
    pub fn hazard(&self, c: &HazardCovariates) -> f64 {
        if c.age < self.min_age {
            return 0.0;
        }
        let values: Vec<f64> = self.bases.iter().map(|b| b.term.value(c)).collect();
        logistic(self.linear_predictor(&values))
    }
}

struct Penalised {
    p: usize,
    blocks: Vec<(usize, DMatrix<f64>)>,
}

impl Penalised {
    fn penalty(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.p, self.p);
        for ((off, b), l) in self.blocks.iter().zip(lambdas) {
            let d = b.nrows();
            let mut view = s.view_mut((*off, *off), (d, d));
            view += b * *l;
        }
        s
    }

    /// Coefficients, GCV score and effective degrees of freedom.
    fn solve(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        c: f64,
        n: f64,
        lambdas: &[f64],
    ) -> Option<(DVector<f64>, f64, f64)> {
        let m = a + self.penalty(lambdas);
        let chol = m.cholesky()?;
        let beta = chol.solve(b);
        let rss = (c - 2.0 * beta.dot(b) + (a * &beta).dot(&beta)).max(0.0);
        let tau = chol.solve(a).trace();
        let gcv = n * rss / (n - tau).powi(2);
        Some((beta, gcv, tau))
    }
}

/// Fit the hazard by penalised IRLS with GCV smoothing selection.
pub fn fit_gam(design: &GamDesign, config: &GamConfig) -> Result<GamFit> {
    let n = design.n_rows();
    let y = &design.outcome;
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::insufficient("gam", "both outcome classes must be present"));
    }
    let mut bases = Vec::with_capacity(design.terms.len());
    for (t, col) in design.terms.iter().zip(&design.columns) {
        bases.push(SplineBasis::new(*t, col, config.interior_knots)?);
    }
    let p = 1 + bases.iter().map(|b| b.dim()).sum::<usize>();
    if n <= p {
        return Err(Error::insufficient("gam", format!("{n} rows for {p} coefficients")));
    }
    let mut x = vec![0.0; n * p];
    let mut offsets = Vec::with_capacity(bases.len());
    let mut off = 1;
    for b in &bases {
        offsets.push(off);
        off += b.dim();
    }
    for i in 0..n {
        let row = &mut x[i * p..(i + 1) * p];
        row[0] = 1.0;
        for ((b, col), &o) in bases.iter().zip(&design.columns).zip(&offsets) {
            row[o..o + b.dim()].copy_from_slice(&b.row(col[i]));
        }
    }

    let ybar = ones as f64 / n as f64;
    let mut eta = vec![(ybar / (1.0 - ybar)).ln(); n];
    let weighted = |eta: &[f64]| {
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        let mut c = 0.0;
        for i in 0..n {
            let mu = logistic(eta[i]).clamp(1e-12, 1.0 - 1e-12);
            let w = mu * (1.0 - mu);
            let z = eta[i] + (y[i] - mu) / w;
            let row = &x[i * p..(i + 1) * p];
            for r in 0..p {
                let wr = w * row[r];
                b[r] += wr * z;
                for s in 0..=r {
                    a[(r, s)] += wr * row[s];
                }
            }
            c += w * z * z;
        }
        for r in 0..p {
            for s in 0..r {
                a[(s, r)] = a[(r, s)];
            }
        }
        (a, b, c)
    };
    let deviance = |eta: &[f64]| -> f64 {
        -2.0 * eta
            .iter()
            .zip(y)
            .map(|(&e, &yi)| {
                let mu = logistic(e).clamp(1e-300, 1.0 - 1e-16);
                yi * mu.ln() + (1.0 - yi) * (1.0 - mu).ln()
            })
            .sum::<f64>()
    };

    // scale each unit-norm penalty to its design block at the starting weights
    let (a0, _, _) = weighted(&eta);
    let mut penalty_scale = Vec::with_capacity(bases.len());
    let mut blocks = Vec::with_capacity(bases.len());
    for (b, &o) in bases.iter().zip(&offsets) {
        let d = b.dim();
        let scale = a0.view((o, o), (d, d)).norm();
        penalty_scale.push(scale);
        blocks.push((o, b.penalty() * scale));
    }
    let system = Penalised { p, blocks };
    let grid = config.grid();
    let mut lambdas = vec![grid[grid.len() / 2]; bases.len()];
    let mut dev = deviance(&eta);
    let mut beta = DVector::zeros(p);
    let mut gcv = f64::INFINITY;
    let mut edf = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..100 {
        iterations = iter + 1;
        let (a, b, c) = weighted(&eta);
        let nf = n as f64;
        let score = |l: &[f64]| system.solve(&a, &b, c, nf, l).map_or(f64::INFINITY, |r| r.1);
        let old_lambdas = lambdas.clone();
        // performance iteration can cycle between grid values; freeze late
        let sweeps = if iter < LAMBDA_ITERATIONS { 10 } else { 0 };
        for sweep in 0..sweeps {
            let mut changed = false;
            for j in 0..lambdas.len() {
                let mut best = (score(&lambdas), lambdas[j]);
                for &g in &grid {
                    let mut trial = lambdas.clone();
                    trial[j] = g;
                    let v = score(&trial);
                    if v < best.0 {
                        best = (v, g);
                    }
                }
                if best.1 != lambdas[j] {
                    lambdas[j] = best.1;
                    changed = true;
                }
            }
            if sweep + 1 >= config.sweeps && !changed {
                break;
            }
        }
        let (new_beta, g, tau) = system
            .solve(&a, &b, c, nf, &lambdas)
            .ok_or_else(|| Error::fit("gam", "penalised system not positive definite"))?;
        // step halving if the penalised deviance rises
        let mut step = 1.0;
        let pen = |bv: &DVector<f64>| (system.penalty(&lambdas) * bv).dot(bv);
        let old_obj = dev + pen(&beta);
        let mut cand;
        let mut new_eta;
        let mut new_dev;
        loop {
            cand = &beta + (&new_beta - &beta) * step;
            new_eta = (0..n)
                .map(|i| x[i * p..(i + 1) * p].iter().zip(cand.iter()).map(|(a, b)| a * b).sum())
                .collect::<Vec<f64>>();
            new_dev = deviance(&new_eta);
            if new_dev + pen(&cand) <= old_obj + 1e-10 * old_obj.abs() || step < 1e-4 || iter == 0 {
                break;
            }
            step *= 0.5;
        }
        beta = cand;
        eta = new_eta;
        gcv = g;
        edf = tau;
        let rel = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if !dev.is_finite() {
            return Err(Error::fit("gam", "IRLS diverged"));
        }
        if let Some(big) = beta.iter().map(|v| v.abs()).find(|v| *v > SEPARATION_LIMIT) {
            return Err(Error::Separation(big));
        }
        if rel < 1e-8 && lambdas == old_lambdas && iter > 0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::fit("gam", "penalised IRLS did not converge"));
    }
    let coefs = offsets
        .iter()
        .zip(&bases)
        .map(|(&o, b)| beta.rows(o, b.dim()).iter().copied().collect())
        .collect();
    Ok(GamFit {
        bases,
        intercept: beta[0],
        coefs,
        smoothing: lambdas,
        penalty_scale,
        gcv_score: gcv,
        deviance: dev,
        edf,
        aic: dev + 2.0 * edf,
        n_rows: n,
        min_age: MIN_AGE,
        iterations,
    })
}
