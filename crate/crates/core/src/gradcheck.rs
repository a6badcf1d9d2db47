//! Central finite differences for checking analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

/// Relative error with an absolute floor so that two near-zero values
/// compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for coordinate `i`.
pub fn central_difference(params: &mut [f64], i: usize, eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[i];
    params[i] = orig + eps;
    let plus = f(params);
    params[i] = orig - eps;
    let minus = f(params);
    params[i] = orig;
    (plus - minus) / (2.0 * eps)
}

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares `analytic` against central differences of `f` on `count`
/// distinct coordinates drawn from `rng`.
pub fn check_coordinates<R: Rng>(
    params: &mut [f64],
    analytic: &[f64],
    count: usize,
    eps: f64,
    rng: &mut R,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<CoordinateCheck> {
    assert_eq!(params.len(), analytic.len());
    let count = count.min(params.len());
    sample(rng, params.len(), count)
        .into_iter()
        .map(|i| {
            let numeric = central_difference(params, i, eps, &mut f);
            CoordinateCheck {
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: relative_error(analytic[i], numeric),
            }
        })
        .collect()
}

pub fn max_rel_error(checks: &[CoordinateCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}
