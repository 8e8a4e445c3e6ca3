use serde::{Deserialize, Serialize};

use crate::dynfit::LinearGaussianDynamics;
use crate::emdp::GaussianPolicy;
use crate::error::{Error, Result};
use crate::inference::{build_closed_loop, joint_gaussian, ExactPosterior};
use crate::linalg::{self, Mat, Vector};

/// Exact split of the observed-data log-likelihood into the EM lower bound and
/// the posterior KL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmBound {
    /// `log p_φ(Y)`
    pub l_obs: f64,
    /// `E_Q[log p_φ(Y, S)] + H(Q)` with `Q` the posterior under `φ_i`
    pub l_bound: f64,
    /// `l_obs − l_bound`
    pub kl_gap: f64,
    /// `E_Q[log p_φ(Y, S)]`
    pub expected_complete: f64,
    pub entropy: f64,
}

fn posterior_and_joint(
    dyn_: &LinearGaussianDynamics,
    pol: &GaussianPolicy,
    y: &[f64],
    mu1: &Vector,
    p1: &Mat,
) -> Result<(crate::inference::JointGaussian, ExactPosterior)> {
    let clm = build_closed_loop(dyn_, pol)?;
    let joint = joint_gaussian(&clm, mu1, p1)?;
    if y.len() != joint.horizon {
        return Err(Error::Dimension("observation count".into()));
    }
    let post = joint.condition_on_prefix(y, y.len())?;
    Ok((joint, post))
}

/// `L_obs`, `l(φ, Q_{φ_i})` and their difference on an instance small enough
/// for exact joint-Gaussian conditioning.
pub fn em_bound_decomposition(
    dyn_: &LinearGaussianDynamics,
    phi: &GaussianPolicy,
    phi_i: &GaussianPolicy,
    y: &[f64],
    mu1: &Vector,
    p1: &Mat,
) -> Result<EmBound> {
    let (joint, post_phi) = posterior_and_joint(dyn_, phi, y, mu1, p1)?;
    let (_, q) = posterior_and_joint(dyn_, phi_i, y, mu1, p1)?;
    let ns = q.mean.len();
    let dim = joint.mean.len();
    let ch = linalg::cholesky(&joint.cov)
        .ok_or_else(|| Error::NotPositiveDefinite("complete-data covariance".into()))?;
    let mut x = Vector::zeros(dim);
    x.rows_mut(0, ns).copy_from(&q.mean);
    x.rows_mut(ns, dim - ns).copy_from(&Vector::from_column_slice(y));
    let r = &x - &joint.mean;
    let prec_ss = ch.inverse().view((0, 0), (ns, ns)).into_owned();
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let expected_complete =
        -0.5 * (r.dot(&ch.solve(&r)) + (&prec_ss * &q.cov).trace()) - 0.5 * logdet - 0.5 * dim as f64 * ln2pi;
    let entropy = 0.5
        * (ns as f64 * (ln2pi + 1.0)
            + linalg::logdet_spd(&q.cov).ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))?);
    let l_bound = expected_complete + entropy;
    let l_obs = post_phi.log_marginal;
    Ok(EmBound {
        l_obs,
        l_bound,
        kl_gap: l_obs - l_bound,
        expected_complete,
        entropy,
    })
}

/// `KL(p_{φ_i}(S|Y) || p_φ(S|Y))` computed directly from the two posteriors.
pub fn posterior_kl(
    dyn_: &LinearGaussianDynamics,
    phi: &GaussianPolicy,
    phi_i: &GaussianPolicy,
    y: &[f64],
    mu1: &Vector,
    p1: &Mat,
) -> Result<f64> {
    let (_, p) = posterior_and_joint(dyn_, phi, y, mu1, p1)?;
    let (_, q) = posterior_and_joint(dyn_, phi_i, y, mu1, p1)?;
    linalg::gaussian_kl(&q.mean, &q.cov, &p.mean, &p.cov)
        .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))
}
