use crate::error::{Error, Result};

/// Partial autocorrelations at lags `0..=max_lag` (lag 0 is 1 by convention).
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    pooled_pacf(&[series], max_lag)
}

/// PACF from autocovariances pooled over several independent series, using
/// only within-series lag pairs and a common mean.
pub fn pooled_pacf(series: &[&[f64]], max_lag: usize) -> Result<Vec<f64>> {
    let n: usize = series.iter().map(|s| s.len()).sum();
    if series.iter().all(|s| s.len() <= max_lag + 1) {
        return Err(Error::Argument(format!(
            "pacf needs a series longer than max_lag + 1 = {}",
            max_lag + 1
        )));
    }
    let mean = series.iter().flat_map(|s| s.iter()).sum::<f64>() / n as f64;
    let mut acov = vec![0.0; max_lag + 1];
    for s in series {
        for (lag, a) in acov.iter_mut().enumerate() {
            if lag >= s.len() {
                break;
            }
            *a += s[lag..]
                .iter()
                .zip(s.iter())
                .map(|(x, y)| (x - mean) * (y - mean))
                .sum::<f64>();
        }
    }
    if acov[0] <= 0.0 || !acov[0].is_finite() {
        return Err(Error::UndefinedCorrelation);
    }
    let rho: Vec<f64> = acov.iter().map(|a| a / acov[0]).collect();
    Ok(durbin_levinson(&rho))
}

fn durbin_levinson(rho: &[f64]) -> Vec<f64> {
    let max_lag = rho.len() - 1;
    let mut out = vec![1.0; max_lag + 1];
    let mut phi: Vec<f64> = Vec::with_capacity(max_lag);
    let mut v = 1.0;
    for k in 1..=max_lag {
        let num = rho[k] - phi.iter().enumerate().map(|(j, p)| p * rho[k - 1 - j]).sum::<f64>();
        let kk = if v > 0.0 { (num / v).clamp(-1.0, 1.0) } else { 0.0 };
        let prev = phi.clone();
        for j in 0..phi.len() {
            phi[j] = prev[j] - kk * prev[prev.len() - 1 - j];
        }
        phi.push(kk);
        v *= 1.0 - kk * kk;
        out[k] = kk;
    }
    out
}
