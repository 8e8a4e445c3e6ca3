use serde::{Deserialize, Serialize};

use super::vbgmm::GmmPrior;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    #[serde(with = "serde_mat::vector")]
    pub mu0: Vector,
    /// Precision-scale matrix; its inverse is the prior scatter.
    #[serde(with = "serde_mat::mat")]
    pub lambda0: Mat,
    pub n0: f64,
    pub k0: f64,
}

/// Sample mean and population covariance (normalized by `1/M`).
pub fn empirical_moments(data: &[Vector]) -> Result<(Vector, Mat)> {
    let Some(first) = data.first() else {
        return Err(Error::Empty("empirical moments need at least one sample".into()));
    };
    let m = data.len() as f64;
    let d = first.len();
    let mean = data.iter().fold(Vector::zeros(d), |acc, x| acc + x) / m;
    let mut cov = Mat::zeros(d, d);
    for x in data {
        let c = x - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    Ok((mean, cov / m))
}

/// Moment-match the mixture to a single Gaussian (law of total variance):
/// `μ⁰ = Σ w_c μ_c`, scatter `Σ w_c (Σ_c + (μ_c−μ⁰)(μ_c−μ⁰)ᵀ)`. The prior
/// scatter is `n0` times the mixture covariance, so `Λ⁰ = (n0·Σ_mix)⁻¹`.
pub fn collapse_to_niw(gmm: &GmmPrior, n0: f64, k0: f64) -> Result<NiwPrior> {
    if !(n0 > 0.0 && k0 > 0.0) {
        return Err(Error::InvalidParameter("n0 and k0 must be positive".into()));
    }
    let (mu0, mix) = gmm.mixture_moments();
    let lambda0 = linalg::inverse_spd(&(mix * n0))
        .ok_or_else(|| Error::NotPositiveDefinite("collapsed mixture covariance".into()))?;
    Ok(NiwPrior { mu0, lambda0, n0, k0 })
}

/// Conjugate update. Returns the posterior mean and the posterior covariance
/// estimate `(Λ⁰⁻¹ + M·Σ_emp + κ) / (M + n0)`.
pub fn posterior_update(prior: &NiwPrior, emp_mean: &Vector, emp_cov: &Mat, m: usize) -> Result<(Vector, Mat)> {
    if m == 0 {
        return Err(Error::Empty("posterior update needs M ≥ 1".into()));
    }
    let scatter0 = linalg::inverse_spd(&prior.lambda0)
        .ok_or_else(|| Error::NotPositiveDefinite("prior precision-scale matrix".into()))?;
    let mf = m as f64;
    let k0 = prior.k0;
    let mu = (&prior.mu0 * k0 + emp_mean * mf) / (k0 + mf);
    let dev = emp_mean - &prior.mu0;
    let kappa = linalg::outer(&dev, &dev) * (k0 * mf / (k0 + mf));
    let cov = (scatter0 + emp_cov * mf + kappa) / (mf + prior.n0);
    Ok((mu, linalg::symmetrize(&cov)))
}
