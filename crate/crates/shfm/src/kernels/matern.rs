use nalgebra::{Cholesky, DMatrix};
use statrs::function::gamma::gamma;

use crate::error::{Result, ShfmError};
use crate::kernels::bessel::bessel_k;
use crate::kernels::geometry::{distance_matrix, Geometry};

/// Matérn correlation parameters: range `lambda1` (distance units) and
/// smoothness `lambda2` (fixed to 1 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl MaternParams {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 > 0.0) || !lambda1.is_finite() {
            return Err(ShfmError::InvalidInput(format!(
                "lambda1 must be positive and finite, got {lambda1}"
            )));
        }
        if !(lambda2 > 0.0) || !lambda2.is_finite() {
            return Err(ShfmError::InvalidInput(format!(
                "lambda2 must be positive and finite, got {lambda2}"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }

    /// Smoothness 1, the default used throughout.
    pub fn with_range(lambda1: f64) -> Result<Self> {
        Self::new(lambda1, 1.0)
    }
}

/// Matérn correlation
/// `rho(d) = 2^{1-l2} / Gamma(l2) * (d/l1)^{l2} K_{l2}(d/l1)`,
/// with the limit value 1 at `d = 0`.
pub fn matern_correlation(d: f64, params: &MaternParams) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(ShfmError::InvalidInput(format!(
            "distance must be nonnegative, got {d}"
        )));
    }
    if d == 0.0 {
        return Ok(1.0);
    }
    let x = d / params.lambda1;
    let nu = params.lambda2;
    let k = bessel_k(nu, x);
    if k == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0_f64.powf(1.0 - nu) / gamma(nu) * x.powf(nu) * k)
}

/// Between-city Matérn correlation matrix `H` over city centroids.
///
/// `H` must be symmetric positive definite; a failed Cholesky factorization
/// is reported together with the closest pair of centroids, which is the
/// usual culprit (duplicates).
pub fn build_between_city_correlation(
    geometry: &Geometry,
    params: &MaternParams,
) -> Result<DMatrix<f64>> {
    correlation_from_centroids(&geometry.city_centroids, params)
}

/// Same as [`build_between_city_correlation`] but over an explicit centroid
/// list (used for prediction grids that extend the observed cities).
pub fn correlation_from_centroids(
    centroids: &[[f64; 2]],
    params: &MaternParams,
) -> Result<DMatrix<f64>> {
    let d = distance_matrix(centroids)?;
    let n = d.nrows();
    let mut h = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = matern_correlation(d[(i, j)], params)?;
            h[(i, j)] = r;
            h[(j, i)] = r;
        }
    }
    if n > 1 && Cholesky::new(h.clone()).is_none() {
        let mut best = (0, 1);
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                if d[(i, j)] < best_d {
                    best_d = d[(i, j)];
                    best = (i, j);
                }
            }
        }
        return Err(ShfmError::Numerical(format!(
            "correlation matrix is not positive definite; closest centroid pair is ({}, {}) at distance {:.3e}",
            best.0, best.1, best_d
        )));
    }
    Ok(h)
}
