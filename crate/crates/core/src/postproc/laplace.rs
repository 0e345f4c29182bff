//! Laplace fit on colony areas and its quantile function.

use serde::{Deserialize, Serialize};

use super::PostProcError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    /// Location, in pixels².
    pub mu: f64,
    /// Scale, in pixels².
    pub b: f64,
}

/// Maximum-likelihood Laplace fit: `mu` is the median (mean of the middle
/// two for even counts), `b` the mean absolute deviation from `mu`.
pub fn fit_laplace(areas: &[f64]) -> Result<LaplaceParams, PostProcError> {
    if areas.len() < 2 {
        return Err(PostProcError::LaplaceTooFew(areas.len()));
    }
    if areas.iter().any(|a| !a.is_finite()) {
        return Err(PostProcError::LaplaceNonFinite);
    }
    let mut sorted = areas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mu = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let b = sorted.iter().map(|a| (a - mu).abs()).sum::<f64>() / n as f64;
    if b <= 0.0 {
        return Err(PostProcError::LaplaceZeroDeviation);
    }
    Ok(LaplaceParams { mu, b })
}

/// Inverse CDF of the Laplace distribution.
pub fn laplace_quantile(p: &LaplaceParams, q: f64) -> Result<f64, PostProcError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(PostProcError::QuantileOutOfRange(q));
    }
    Ok(if q < 0.5 {
        p.mu + p.b * (2.0 * q).ln()
    } else {
        p.mu - p.b * (2.0 * (1.0 - q)).ln()
    })
}

/// Central band `[Q((1-ci)/2), Q(1-(1-ci)/2)]`.
pub fn laplace_band(p: &LaplaceParams, ci: f64) -> Result<(f64, f64), PostProcError> {
    let tail = (1.0 - ci) / 2.0;
    Ok((laplace_quantile(p, tail)?, laplace_quantile(p, 1.0 - tail)?))
}
