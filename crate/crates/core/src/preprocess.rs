//! Box-Cox location-scale standardisation of vorticity.
//!
//! `(ω^λ - 1)/λ = μ(ν) + σ(ν) W` with `W ~ N(0, 1)`. Both `μ` and `log σ` are
//! linear in standardised longitude, latitude and speed plus the sine and
//! cosine of bearing, optionally with squared longitude and latitude.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::catalog::StormTrack;
use crate::error::{Error, Result};
use crate::numeric::golden_section;

pub const LAMBDA_ZERO: f64 = 1e-8;

const MIN_POINTS: usize = 1000;
const LAMBDA_RANGE: (f64, f64) = (-1.0, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Default for Window {
    fn default() -> Self {
        Window {
            lon_min: -60.0,
            lon_max: 20.0,
            lat_min: 40.0,
            lat_max: 80.0,
        }
    }
}

impl Window {
    /// Open-interval membership.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon > self.lon_min && lon < self.lon_max && lat > self.lat_min && lat < self.lat_max
    }
}

/// Covariates `ν` for one track point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub lon: f64,
    pub lat: f64,
    /// Radians.
    pub bearing: f64,
    /// m/s.
    pub speed: f64,
}

/// Covariates for every point of a track, using the arriving segment's motion
/// (the departing one at genesis).
pub fn track_covariates(track: &StormTrack) -> Vec<Covariates> {
    track
        .points()
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let (speed, bearing) = track.motion_at(t);
            Covariates {
                lon: p.lon,
                lat: p.lat,
                bearing,
                speed,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    /// Centring and scaling of (lon, lat, speed).
    pub center: [f64; 3],
    pub scale: [f64; 3],
    pub quadratic: bool,
}

impl CovariateSpec {
    pub fn n_terms(&self) -> usize {
        if self.quadratic {
            8
        } else {
            6
        }
    }

    /// Design row `[1, lon, lat, sin θ, cos θ, speed, (lon², lat²)]`.
    pub fn row(&self, c: &Covariates) -> Vec<f64> {
        let lon = (c.lon - self.center[0]) / self.scale[0];
        let lat = (c.lat - self.center[1]) / self.scale[1];
        let speed = (c.speed - self.center[2]) / self.scale[2];
        let mut r = vec![1.0, lon, lat, c.bearing.sin(), c.bearing.cos(), speed];
        if self.quadratic {
            r.push(lon * lon);
            r.push(lat * lat);
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocFit {
    pub lambda: f64,
    pub mu_coef: Vec<f64>,
    pub sigma_coef: Vec<f64>,
    pub covariates: CovariateSpec,
    pub window: Window,
    pub log_likelihood: f64,
    /// Likelihood-ratio p-value of the quadratic terms.
    pub quadratic_p_value: f64,
}

pub fn box_cox(omega: f64, lambda: f64) -> f64 {
    if lambda.abs() < LAMBDA_ZERO {
        omega.ln()
    } else {
        (omega.powf(lambda) - 1.0) / lambda
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PreprocFit {
    pub fn mu(&self, c: &Covariates) -> f64 {
        dot(&self.mu_coef, &self.covariates.row(c))
    }

    pub fn sigma(&self, c: &Covariates) -> f64 {
        dot(&self.sigma_coef, &self.covariates.row(c)).exp()
    }

    pub fn to_residual(&self, omega: f64, c: &Covariates) -> Result<f64> {
        if !(omega > 0.0) {
            return Err(Error::Domain(format!("vorticity must be positive, got {omega}")));
        }
        let row = self.covariates.row(c);
        let mu = dot(&self.mu_coef, &row);
        let sigma = dot(&self.sigma_coef, &row).exp();
        Ok((box_cox(omega, self.lambda) - mu) / sigma)
    }

    pub fn from_residual(&self, w: f64, c: &Covariates) -> Result<f64> {
        let row = self.covariates.row(c);
        let y = dot(&self.mu_coef, &row) + dot(&self.sigma_coef, &row).exp() * w;
        if self.lambda.abs() < LAMBDA_ZERO {
            return Ok(y.exp());
        }
        let base = 1.0 + self.lambda * y;
        if !(base > 0.0) {
            return Err(Error::InvalidInverse);
        }
        let omega = base.powf(1.0 / self.lambda);
        if omega.is_finite() && omega > 0.0 {
            Ok(omega)
        } else {
            Err(Error::InvalidInverse)
        }
    }
}

struct Design {
    rows: Vec<Vec<f64>>,
    log_omega: Vec<f64>,
    omega: Vec<f64>,
}

#[derive(Clone)]
struct Coefs {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

fn solve_normal(xtx: DMatrix<f64>, xty: DVector<f64>) -> Option<DVector<f64>> {
    xtx.cholesky().map(|c| c.solve(&xty))
}

/// Maximise the heteroscedastic Gaussian likelihood for fixed `λ` by
/// alternating weighted least squares for `μ` and Fisher scoring for `log σ`.
/// Returns the log-likelihood including the Box-Cox Jacobian.
fn fit_given_lambda(d: &Design, lambda: f64, start: Option<&Coefs>) -> Result<(f64, Coefs)> {
    let n = d.rows.len();
    let p = d.rows[0].len();
    let y: Vec<f64> = d.omega.iter().map(|&w| box_cox(w, lambda)).collect();
    let mut coefs = match start {
        Some(c) => c.clone(),
        None => {
            let m = y.iter().sum::<f64>() / n as f64;
            let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let mut mu = vec![0.0; p];
            let mut sigma = vec![0.0; p];
            mu[0] = m;
            sigma[0] = 0.5 * v.max(1e-300).ln();
            Coefs { mu, sigma }
        }
    };
    let jac = (lambda - 1.0) * d.log_omega.iter().sum::<f64>();
    let loglik = |c: &Coefs| -> f64 {
        let mut ll = 0.0;
        for (r, yi) in d.rows.iter().zip(&y) {
            let ls = dot(&c.sigma, r);
            let z = (yi - dot(&c.mu, r)) * (-ls).exp();
            ll -= ls + 0.5 * z * z;
        }
        ll - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + jac
    };
    // X'X is fixed for the scale step
    let mut xtx = DMatrix::zeros(p, p);
    for r in &d.rows {
        for i in 0..p {
            for j in 0..=i {
                xtx[(i, j)] += r[i] * r[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    let xtx_chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::fit("preprocess", "covariate design is singular"))?;

    let mut ll = loglik(&coefs);
    for _ in 0..200 {
        // location: weighted least squares with weights 1/σ²
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        for (r, yi) in d.rows.iter().zip(&y) {
            let w = (-2.0 * dot(&coefs.sigma, r)).exp();
            for i in 0..p {
                b[i] += w * r[i] * yi;
                for j in 0..=i {
                    a[(i, j)] += w * r[i] * r[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                a[(j, i)] = a[(i, j)];
            }
        }
        let mu = solve_normal(a, b).ok_or_else(|| Error::fit("preprocess", "singular location system"))?;
        coefs.mu = mu.iter().copied().collect();

        // log-scale: Fisher scoring, information 2 X'X
        let mut score = DVector::zeros(p);
        for (r, yi) in d.rows.iter().zip(&y) {
            let z = (yi - dot(&coefs.mu, r)) * (-dot(&coefs.sigma, r)).exp();
            let g = z * z - 1.0;
            for i in 0..p {
                score[i] += g * r[i];
            }
        }
        let step = xtx_chol.solve(&score) * 0.5;
        let mut new = coefs.clone();
        let mut t = 1.0;
        let mut new_ll;
        loop {
            for i in 0..p {
                new.sigma[i] = coefs.sigma[i] + t * step[i];
            }
            new_ll = loglik(&new);
            if new_ll >= ll - 1e-12 * ll.abs() || t < 1e-6 {
                break;
            }
            t *= 0.5;
        }
        coefs = new;
        let change = (new_ll - ll).abs();
        ll = new_ll;
        if !ll.is_finite() {
            return Err(Error::fit("preprocess", "likelihood diverged"));
        }
        if change <= 1e-10 * ll.abs().max(1.0) {
            break;
        }
    }
    Ok((ll, coefs))
}

/// Profile likelihood over `λ`: coarse grid, then golden-section refinement
/// around the best grid point.
fn fit_spec(d: &Design) -> Result<(f64, f64, Coefs)> {
    let (lo, hi) = LAMBDA_RANGE;
    let grid: Vec<f64> = (0..=30).map(|i| lo + (hi - lo) * i as f64 / 30.0).collect();
    let mut prev: Option<Coefs> = None;
    let mut evals = Vec::with_capacity(grid.len());
    for &l in &grid {
        // warm starts do not carry over well across λ scales
        let r = fit_given_lambda(d, l, None).or_else(|_| fit_given_lambda(d, l, prev.as_ref()));
        match r {
            Ok((ll, c)) => {
                prev = Some(c);
                evals.push(ll);
            }
            Err(_) => evals.push(f64::NEG_INFINITY),
        }
    }
    let best = (0..grid.len())
        .max_by(|&a, &b| evals[a].total_cmp(&evals[b]))
        .expect("non-empty grid");
    if !evals[best].is_finite() {
        return Err(Error::fit("preprocess", "Box-Cox likelihood not finite on the lambda grid"));
    }
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let lambda = golden_section(
        |l| fit_given_lambda(d, l, None).map_or(f64::INFINITY, |r| -r.0),
        a,
        b,
        1e-5,
    );
    let (ll, coefs) = fit_given_lambda(d, lambda, None)?;
    if ll < evals[best] {
        let (ll, coefs) = fit_given_lambda(d, grid[best], None)?;
        return Ok((grid[best], ll, coefs));
    }
    Ok((lambda, ll, coefs))
}

/// Fit the preprocessing model on the in-window points of `data`.
pub fn fit_preprocess(data: &[(f64, Covariates)], window: Window) -> Result<PreprocFit> {
    let inside: Vec<&(f64, Covariates)> = data
        .iter()
        .filter(|(_, c)| window.contains(c.lon, c.lat))
        .collect();
    if inside.len() < MIN_POINTS {
        return Err(Error::insufficient(
            "preprocess",
            format!("{} in-window points, need {MIN_POINTS}", inside.len()),
        ));
    }
    if let Some((w, _)) = inside.iter().find(|(w, _)| !(*w > 0.0)) {
        return Err(Error::Domain(format!("vorticity must be positive, got {w}")));
    }
    let n = inside.len() as f64;
    let stats = |f: &dyn Fn(&Covariates) -> f64| {
        let m = inside.iter().map(|(_, c)| f(c)).sum::<f64>() / n;
        let v = inside.iter().map(|(_, c)| (f(c) - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt().max(1e-12))
    };
    let (lon_m, lon_s) = stats(&|c| c.lon);
    let (lat_m, lat_s) = stats(&|c| c.lat);
    let (sp_m, sp_s) = stats(&|c| c.speed);
    let mut spec = CovariateSpec {
        center: [lon_m, lat_m, sp_m],
        scale: [lon_s, lat_s, sp_s],
        quadratic: false,
    };
    let omega: Vec<f64> = inside.iter().map(|(w, _)| *w).collect();
    let design = |spec: &CovariateSpec| Design {
        rows: inside.iter().map(|(_, c)| spec.row(c)).collect(),
        log_omega: omega.iter().map(|w| w.ln()).collect(),
        omega: omega.clone(),
    };

    let (lambda_l, ll_l, coefs_l) = fit_spec(&design(&spec))?;
    spec.quadratic = true;
    let quad = fit_spec(&design(&spec));
    let (lambda, ll, coefs, p_value) = match quad {
        Ok((lambda_q, ll_q, coefs_q)) => {
            let stat = (2.0 * (ll_q - ll_l)).max(0.0);
            let p = 1.0 - ChiSquared::new(4.0).expect("valid dof").cdf(stat);
            if p < 0.05 {
                (lambda_q, ll_q, coefs_q, p)
            } else {
                spec.quadratic = false;
                (lambda_l, ll_l, coefs_l, p)
            }
        }
        Err(e) => {
            log::warn!("preprocess: quadratic model failed ({e}); keeping linear terms");
            spec.quadratic = false;
            (lambda_l, ll_l, coefs_l, 1.0)
        }
    };
    Ok(PreprocFit {
        lambda,
        mu_coef: coefs.mu,
        sigma_coef: coefs.sigma,
        covariates: spec,
        window,
        log_likelihood: ll,
        quadratic_p_value: p_value,
    })
}

/// Profile log-likelihood at a fixed `λ` for the selected covariate terms.
pub fn profile_log_likelihood(data: &[(f64, Covariates)], fit: &PreprocFit, lambda: f64) -> Result<f64> {
    let inside: Vec<&(f64, Covariates)> = data
        .iter()
        .filter(|(_, c)| fit.window.contains(c.lon, c.lat))
        .collect();
    let d = Design {
        rows: inside.iter().map(|(_, c)| fit.covariates.row(c)).collect(),
        log_omega: inside.iter().map(|(w, _)| w.ln()).collect(),
        omega: inside.iter().map(|(w, _)| *w).collect(),
    };
    Ok(fit_given_lambda(&d, lambda, None)?.0)
}
