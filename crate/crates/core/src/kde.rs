//! Multivariate Gaussian kernel density estimation with joint and conditional
//! sampling.
//!
//! A model stores its training tuples and a bandwidth matrix `H`. Conditional
//! draws select a tuple with probability proportional to its kernel weight on
//! the conditioning coordinates and then sample the remaining coordinates from
//! the Gaussian kernel conditioned on the observed values.
//!
//! Circular coordinates (bearings) are handled by unrolling: every tuple is
//! replicated with all circular coordinates shifted jointly by `-2π` and
//! `+2π`. For a single circular coordinate this is the usual three-copy
//! unrolling; with several, the tuple is assumed to hold consecutively
//! unwrapped angles so a joint shift is the only admissible relabelling.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, normal_cdf};

/// Kernel values below this are treated as outside the numerical support.
const SUPPORT_FLOOR_LN: f64 = -690.775_527_898_213_7; // ln(1e-300)

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeStructure {
    /// Independent kernel: `H` keeps only the diagonal of the sample covariance.
    Diagonal,
    /// Fully correlated kernel.
    Oriented,
    /// Correlated among the listed coordinates, independent elsewhere.
    Partial(Vec<usize>),
}

impl KdeStructure {
    fn couples(&self, i: usize, j: usize) -> bool {
        match self {
            KdeStructure::Diagonal => i == j,
            KdeStructure::Oriented => true,
            KdeStructure::Partial(dims) => i == j || (dims.contains(&i) && dims.contains(&j)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    dim: usize,
    /// `n × dim`, row-major.
    samples: Vec<f64>,
    /// `dim × dim`, row-major.
    bandwidth: Vec<f64>,
    bandwidth_scale: f64,
    structure: KdeStructure,
    circular_dims: Vec<usize>,
}

/// Rule-of-thumb fit: `H = scale² · n^(-2/(d+4)) · Σ̂`, restricted to `structure`.
pub fn fit_kde(
    samples: &[Vec<f64>],
    structure: KdeStructure,
    scale: f64,
    circular_dims: &[usize],
) -> Result<KdeModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::insufficient("kde", format!("need at least 2 tuples, got {n}")));
    }
    let dim = samples[0].len();
    if dim == 0 {
        return Err(Error::Argument("kde tuples must have at least one coordinate".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            got: bad.len(),
        });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::SingularBandwidth(format!("bandwidth scale {scale}")));
    }
    let cov = sample_covariance(samples);
    for i in 0..dim {
        if !(cov[(i, i)] > 0.0) {
            return Err(Error::SingularBandwidth(format!("coordinate {i} has zero variance")));
        }
    }
    let factor = scale * scale * (n as f64).powf(-2.0 / (dim as f64 + 4.0));
    let h = DMatrix::from_fn(dim, dim, |i, j| {
        if structure.couples(i, j) {
            factor * cov[(i, j)]
        } else {
            0.0
        }
    });
    let mut model = KdeModel::with_bandwidth(samples, h, circular_dims)?;
    model.bandwidth_scale = scale;
    model.structure = structure;
    Ok(model)
}

fn sample_covariance(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        for i in 0..dim {
            for j in 0..=i {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

impl KdeModel {
    /// Model with an explicit bandwidth matrix. Any number of tuples `>= 1`.
    pub fn with_bandwidth(
        samples: &[Vec<f64>],
        bandwidth: DMatrix<f64>,
        circular_dims: &[usize],
    ) -> Result<Self> {
        let dim = bandwidth.nrows();
        if samples.is_empty() {
            return Err(Error::insufficient("kde", "no tuples"));
        }
        if bandwidth.ncols() != dim {
            return Err(Error::Argument("bandwidth must be square".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: bad.len(),
            });
        }
        if circular_dims.iter().any(|&c| c >= dim) {
            return Err(Error::Argument("circular dimension out of range".into()));
        }
        let sym = (bandwidth.clone() + bandwidth.transpose()) * 0.5;
        if Cholesky::new(sym.clone()).is_none() {
            return Err(Error::SingularBandwidth("H is not positive definite".into()));
        }
        let mut circular = circular_dims.to_vec();
        circular.sort_unstable();
        circular.dedup();
        Ok(KdeModel {
            dim,
            samples: samples.iter().flatten().copied().collect(),
            bandwidth: sym.transpose().iter().copied().collect(),
            bandwidth_scale: 1.0,
            structure: KdeStructure::Oriented,
            circular_dims: circular,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn bandwidth(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.bandwidth)
    }

    pub fn bandwidth_scale(&self) -> f64 {
        self.bandwidth_scale
    }

    pub fn structure(&self) -> &KdeStructure {
        &self.structure
    }

    pub fn circular_dims(&self) -> &[usize] {
        &self.circular_dims
    }

    fn shifts_for(&self, dims: &[usize]) -> &'static [f64] {
        if dims.iter().any(|d| self.circular_dims.contains(d)) {
            &[0.0, -TWO_PI, TWO_PI]
        } else {
            &[0.0]
        }
    }

    fn coord(&self, i: usize, dim: usize, shift: f64) -> f64 {
        let v = self.samples[i * self.dim + dim];
        if shift != 0.0 && self.circular_dims.contains(&dim) {
            v + shift
        } else {
            v
        }
    }

    /// Joint density at `z`. Circular coordinates sum over the unrolled copies,
    /// which normalises the density over one period.
    pub fn density(&self, z: &[f64]) -> Result<f64> {
        let dims: Vec<usize> = (0..self.dim).collect();
        self.marginal_density(&dims, z)
    }

    /// Density of the sub-vector `dims` (kernel marginal) at `z`.
    pub fn marginal_density(&self, dims: &[usize], z: &[f64]) -> Result<f64> {
        if z.len() != dims.len() {
            return Err(Error::Shape {
                expected: dims.len(),
                got: z.len(),
            });
        }
        let kernel = GaussianKernel::new(&self.bandwidth().select_rows(dims).select_columns(dims))?;
        let shifts = self.shifts_for(dims);
        let mut logs = Vec::with_capacity(self.n() * shifts.len());
        let mut diff = DVector::zeros(dims.len());
        for i in 0..self.n() {
            for &s in shifts {
                for (k, &d) in dims.iter().enumerate() {
                    diff[k] = z[k] - self.coord(i, d, s);
                }
                logs.push(kernel.log_pdf(&diff));
            }
        }
        let v = (log_sum_exp(&logs) - (self.n() as f64).ln()).exp();
        Ok(if v < 1e-300 { 0.0 } else { v })
    }

    /// Draw from the joint estimate: pick a tuple uniformly, then add
    /// `N(0, H)` noise. Circular coordinates are wrapped to `[-π, π]`.
    pub fn sample_joint<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let i = rng.random_range(0..self.n());
        let chol = Cholesky::new(self.bandwidth()).expect("bandwidth validated at construction");
        let noise = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = chol.l() * noise;
        let mut out: Vec<f64> = self.sample(i).iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        for &c in &self.circular_dims {
            out[c] = crate::catalog::wrap_angle(out[c]);
        }
        out
    }

    /// Precompute the conditional structure for drawing `target` given
    /// `given`. Coordinates in neither set are marginalised out.
    pub fn conditional(&self, given: &[usize], target: &[usize]) -> Result<Conditioner> {
        Conditioner::new(self, given, target)
    }

    /// One-shot conditional draw; see [`Conditioner::sample`].
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        given: &[usize],
        values: &[f64],
        target: &[usize],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.conditional(given, target)?.sample(values, rng)
    }

    /// Kernel conditional density of `target = z` given `given = values`.
    pub fn conditional_density(
        &self,
        target: &[usize],
        z: &[f64],
        given: &[usize],
        values: &[f64],
    ) -> Result<f64> {
        self.conditional(given, target)?.density(z, values)
    }

    /// CDF of a one-dimensional model (circular dimensions are not supported).
    pub fn cdf_1d(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        let h = self.bandwidth[0].sqrt();
        let n = self.n() as f64;
        self.samples.iter().map(|&s| normal_cdf((x - s) / h)).sum::<f64>() / n
    }
}

/// Gaussian kernel `N(0, Σ)` with cached factorisation.
#[derive(Clone, Debug)]
struct GaussianKernel {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianKernel {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::SingularBandwidth("kernel covariance not positive definite".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Ok(GaussianKernel {
            chol,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let w = self.chol.l().solve_lower_triangular(x).expect("non-singular factor");
        self.log_norm - 0.5 * w.norm_squared()
    }
}

fn pick_index<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return i;
        }
    }
    w.len() - 1
}

/// Precomputed conditional sampler for a fixed (given, target) split.
#[derive(Clone, Debug)]
pub struct Conditioner {
    given: usize,
    target: usize,
    /// Per unrolled copy: whitened conditioning coordinates `L⁻¹ z_g`.
    whitened: Vec<f64>,
    /// Per unrolled copy: raw conditioning coordinates.
    given_raw: Vec<f64>,
    /// Per unrolled copy: target coordinates.
    target_raw: Vec<f64>,
    copies: usize,
    given_chol_l: DMatrix<f64>,
    given_log_norm: f64,
    /// `H_tg H_gg⁻¹`.
    regression: DMatrix<f64>,
    /// Cholesky factor of `H_tt - H_tg H_gg⁻¹ H_gt`.
    cond_chol_l: DMatrix<f64>,
    cond_kernel: Option<GaussianKernel>,
}

impl Conditioner {
    fn new(model: &KdeModel, given: &[usize], target: &[usize]) -> Result<Self> {
        if target.is_empty() {
            return Err(Error::Argument("conditional needs at least one target coordinate".into()));
        }
        if given.iter().chain(target).any(|&d| d >= model.dim) {
            return Err(Error::Shape {
                expected: model.dim,
                got: given.iter().chain(target).max().copied().unwrap_or(0) + 1,
            });
        }
        if given.iter().any(|g| target.contains(g)) {
            return Err(Error::Argument("given and target coordinates overlap".into()));
        }
        let h = model.bandwidth();
        let h_gg = h.select_rows(given).select_columns(given);
        let h_tg = h.select_rows(target).select_columns(given);
        let h_tt = h.select_rows(target).select_columns(target);

        let (given_chol_l, given_log_norm, regression, cond_cov) = if given.is_empty() {
            (DMatrix::zeros(0, 0), 0.0, DMatrix::zeros(target.len(), 0), h_tt)
        } else {
            let kernel = GaussianKernel::new(&h_gg)?;
            let inv = kernel.chol.inverse();
            let reg = &h_tg * &inv;
            let cond = &h_tt - &reg * h_tg.transpose();
            let cond = (cond.clone() + cond.transpose()) * 0.5;
            (kernel.chol.l(), kernel.log_norm, reg, cond)
        };
        let (cond_chol_l, cond_kernel) = match GaussianKernel::new(&cond_cov) {
            Ok(k) => (k.chol.l(), Some(k)),
            // a degenerate conditional (e.g. perfectly collinear kernel) draws the mean
            Err(_) => (DMatrix::zeros(target.len(), target.len()), None),
        };

        let mut all = given.to_vec();
        all.extend_from_slice(target);
        let shifts = model.shifts_for(&all);
        let copies = model.n() * shifts.len();
        let g = given.len();
        let mut whitened = Vec::with_capacity(copies * g);
        let mut given_raw = Vec::with_capacity(copies * g);
        let mut target_raw = Vec::with_capacity(copies * target.len());
        let mut buf = DVector::zeros(g);
        for i in 0..model.n() {
            for &s in shifts {
                for (k, &d) in given.iter().enumerate() {
                    buf[k] = model.coord(i, d, s);
                }
                given_raw.extend(buf.iter());
                if g > 0 {
                    let w = given_chol_l.solve_lower_triangular(&buf).expect("non-singular factor");
                    whitened.extend(w.iter());
                }
                target_raw.extend(target.iter().map(|&d| model.coord(i, d, s)));
            }
        }
        Ok(Conditioner {
            given: g,
            target: target.len(),
            whitened,
            given_raw,
            target_raw,
            copies,
            given_chol_l,
            given_log_norm,
            regression,
            cond_chol_l,
            cond_kernel,
        })
    }

    pub fn n_copies(&self) -> usize {
        self.copies
    }

    /// Log kernel values `log K_H(z_g - z_g^(i))` over all unrolled copies.
    fn log_kernels(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.given {
            return Err(Error::Shape {
                expected: self.given,
                got: values.len(),
            });
        }
        if self.given == 0 {
            return Ok(vec![0.0; self.copies]);
        }
        let x = DVector::from_column_slice(values);
        let wx = self.given_chol_l.solve_lower_triangular(&x).expect("non-singular factor");
        let g = self.given;
        Ok(self
            .whitened
            .chunks_exact(g)
            .map(|w| {
                let q: f64 = w.iter().zip(wx.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
                self.given_log_norm - 0.5 * q
            })
            .collect())
    }

    /// Normalised selection weights over unrolled copies.
    pub fn weights(&self, values: &[f64]) -> Result<Vec<f64>> {
        let logs = self.log_kernels(values)?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max < SUPPORT_FLOOR_LN {
            return Err(Error::UnsupportedConditioning);
        }
        let mut w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    fn mean_for(&self, copy: usize, values: &[f64]) -> DVector<f64> {
        let t = self.target;
        let mut mu = DVector::from_column_slice(&self.target_raw[copy * t..(copy + 1) * t]);
        if self.given > 0 {
            let g = self.given;
            let delta = DVector::from_iterator(
                g,
                values
                    .iter()
                    .zip(&self.given_raw[copy * g..(copy + 1) * g])
                    .map(|(v, r)| v - r),
            );
            mu += &self.regression * delta;
        }
        mu
    }

    /// Draw target coordinates given conditioning values. Circular targets
    /// are returned unwrapped; callers wrap as needed.
    pub fn sample<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let w = self.weights(values)?;
        let pick = pick_index(&w, rng);
        let mu = self.mean_for(pick, values);
        let noise = DVector::from_fn(self.target, |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok((mu + &self.cond_chol_l * noise).iter().copied().collect())
    }

    /// Draw a single target coordinate with the kernel noise shrunk so that
    /// the conditional variance equals the weighted spread of the component
    /// means. The conditional mean is that of the kernel estimate.
    pub fn sample_matched<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Result<f64> {
        if self.target != 1 {
            return Err(Error::Argument("variance-matched draws need a single target".into()));
        }
        let w = self.weights(values)?;
        let g = self.given;
        let means: Vec<f64> = (0..self.copies)
            .map(|i| {
                let adj: f64 = (0..g)
                    .map(|k| self.regression[(0, k)] * (values[k] - self.given_raw[i * g + k]))
                    .sum();
                self.target_raw[i] + adj
            })
            .collect();
        let mbar: f64 = w.iter().zip(&means).map(|(a, m)| a * m).sum();
        let spread: f64 = w.iter().zip(&means).map(|(a, m)| a * (m - mbar).powi(2)).sum();
        let sd = self.cond_chol_l[(0, 0)];
        let total = spread + sd * sd;
        let shrink = if total > 0.0 { (spread / total).sqrt() } else { 1.0 };
        let pick = pick_index(&w, rng);
        let eps: f64 = rng.sample(StandardNormal);
        Ok(mbar + shrink * (means[pick] - mbar + sd * eps))
    }

    /// Conditional density at target value `z`.
    pub fn density(&self, z: &[f64], values: &[f64]) -> Result<f64> {
        if z.len() != self.target {
            return Err(Error::Shape {
                expected: self.target,
                got: z.len(),
            });
        }
        let kernel = self
            .cond_kernel
            .as_ref()
            .ok_or_else(|| Error::SingularBandwidth("degenerate conditional covariance".into()))?;
        let w = self.weights(values)?;
        let zt = DVector::from_column_slice(z);
        let mut total = 0.0;
        for (i, wi) in w.iter().enumerate() {
            if *wi == 0.0 {
                continue;
            }
            total += wi * kernel.log_pdf(&(&zt - self.mean_for(i, values))).exp();
        }
        Ok(total)
    }
}
