//! Shared covariance algebra for Kalman-type recursions.
//!
//! All updates are written in factored or Joseph form; the innovation
//! covariance is handled through its Cholesky factor, never an explicit
//! inverse.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::psd::SymMatrix;

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("innovation covariance is numerically singular (condition number {cond:.3e})")]
    SingularInnovation { cond: f64 },
    #[error("fixed-point iteration did not converge within {max_iter} steps (residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },
}

/// `A S A' + Q`.
pub fn predict_cov(a: &DMatrix<f64>, sigma: &SymMatrix, sigma_w: &SymMatrix) -> SymMatrix {
    SymMatrix::symmetrize(&(sigma.transform(a).as_matrix() + sigma_w.as_matrix()))
}

/// `C P C' + R`.
pub fn innovation_cov(c: &DMatrix<f64>, prior: &SymMatrix, sigma_v: &SymMatrix) -> SymMatrix {
    SymMatrix::symmetrize(&(prior.transform(c).as_matrix() + sigma_v.as_matrix()))
}

pub const INNOVATION_COND_LIMIT: f64 = 1e12;

/// Gain `P C' S^{-1}` via the Cholesky factor of the innovation covariance.
pub fn gain(
    prior: &SymMatrix,
    c: &DMatrix<f64>,
    innovation: &SymMatrix,
) -> Result<DMatrix<f64>, RiccatiError> {
    let (vals, _) = innovation.eigen_pairs();
    let lmin = vals[0];
    let lmax = vals[vals.len() - 1];
    let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(cond < INNOVATION_COND_LIMIT) {
        return Err(RiccatiError::SingularInnovation { cond });
    }
    let chol = innovation
        .as_matrix()
        .clone_owned()
        .cholesky()
        .ok_or(RiccatiError::SingularInnovation { cond })?;
    // K = P C' S^{-1}  <=>  S K' = C P
    let kt = chol.solve(&(c * prior.as_matrix()));
    Ok(kt.transpose())
}

/// Joseph-form posterior `(I-KC) P (I-KC)' + K R K'`.
pub fn joseph_posterior(
    prior: &SymMatrix,
    k: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_v: &SymMatrix,
) -> SymMatrix {
    let n = prior.dim();
    let ikc = DMatrix::identity(n, n) - k * c;
    let term1 = prior.transform(&ikc);
    let term2 = sigma_v.transform(k);
    SymMatrix::symmetrize(&(term1.as_matrix() + term2.as_matrix()))
}

/// Gain and Joseph-form posterior for one measurement update.
pub fn posterior(
    c: &DMatrix<f64>,
    prior: &SymMatrix,
    sigma_v: &SymMatrix,
) -> Result<(DMatrix<f64>, SymMatrix), RiccatiError> {
    let s = innovation_cov(c, prior, sigma_v);
    let k = gain(prior, c, &s)?;
    Ok((k.clone(), joseph_posterior(prior, &k, c, sigma_v)))
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub prior: SymMatrix,
    pub post: SymMatrix,
    pub gain: DMatrix<f64>,
}

/// Steady-state classical filter by fixed-point iteration of the prior
/// covariance recursion.
pub fn kf_fixed_point(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_w: &SymMatrix,
    sigma_v: &SymMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint, RiccatiError> {
    let mut prior = sigma_w.add(&SymMatrix::identity(sigma_w.dim())).expect("same dim");
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let (k, post) = posterior(c, &prior, sigma_v)?;
        let next = predict_cov(a, &post, sigma_w);
        residual = next.sub(&prior).expect("same dim").frobenius_norm();
        prior = next;
        if residual <= tol * (1.0 + prior.frobenius_norm()) {
            let (k_final, post_final) = posterior(c, &prior, sigma_v)?;
            let _ = k;
            return Ok(FixedPoint {
                prior,
                post: post_final,
                gain: k_final,
            });
        }
    }
    Err(RiccatiError::NoConvergence { max_iter, residual })
}
