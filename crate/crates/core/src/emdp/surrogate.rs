use crate::dynfit::LinearGaussianDynamics;
use crate::env::CostModel;
use crate::error::{Error, Result};
use crate::inference::{MomentBlocks, SmoothedMoments};
use crate::linalg::{self, Mat, Vector};

use super::GaussianPolicy;

/// `E[(ζ − A°z − c°)(ζ − A°z − c°)ᵀ]` from the moment blocks.
pub fn expected_residual(dyn_: &LinearGaussianDynamics, k: usize, b: &MomentBlocks) -> Mat {
    let a = dyn_.a_full(k);
    let c = dyn_.c_full(k);
    let ez_zt = &b.zeta_z;
    let cross = ez_zt * a.transpose() + linalg::outer(&b.e_zeta, &c);
    let model = &a * &b.z_z * a.transpose()
        + &a * linalg::outer(&b.e_z, &c)
        + linalg::outer(&c, &b.e_z) * a.transpose()
        + linalg::outer(&c, &c);
    linalg::symmetrize(&(&b.zeta_zeta - &cross - cross.transpose() + model))
}

/// Per-step surrogate `−½ tr(Σ°⁻¹ E[rrᵀ]) − ½ log|Σ°|`.
pub fn surrogate_term(dyn_: &LinearGaussianDynamics, k: usize, b: &MomentBlocks) -> Result<f64> {
    let sigma = dyn_.sigma_full(k);
    let ch = linalg::cholesky(&sigma)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("model noise covariance at step {}", k + 1)))?;
    let r = expected_residual(dyn_, k, b);
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * ch.solve(&r).trace() - 0.5 * logdet)
}

/// Surrogate at step `k` with the action moments of `pol`.
pub fn policy_surrogate(
    dyn_: &LinearGaussianDynamics,
    moments: &SmoothedMoments,
    pol: &GaussianPolicy,
    k: usize,
) -> Result<f64> {
    let b = moments.blocks_for(k, &pol.gains[k], &pol.offsets[k], &pol.cov(k));
    surrogate_term(dyn_, k, &b)
}

/// `E[log N(s_1; μ_1, P_1)]` under the smoothed marginal of `s_1`.
pub fn expected_initial_loglik(moments: &SmoothedMoments, mu1: &Vector, p1: &Mat) -> Result<f64> {
    let ch = linalg::cholesky(p1).ok_or_else(|| Error::NotPositiveDefinite("initial state covariance".into()))?;
    let d = &moments.states.mean[0] - mu1;
    let quad = d.dot(&ch.solve(&d)) + ch.solve(&moments.states.cov[0]).trace();
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let n = mu1.len() as f64;
    Ok(-0.5 * quad - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Expected initial log-density plus the sum of per-step surrogates.
pub fn mixture_likelihood(
    pol: &GaussianPolicy,
    moments: &SmoothedMoments,
    dyn_: &LinearGaussianDynamics,
    mu1: &Vector,
    p1: &Mat,
) -> Result<f64> {
    let mut total = expected_initial_loglik(moments, mu1, p1)?;
    for k in 0..moments.horizon() {
        total += policy_surrogate(dyn_, moments, pol, k)?;
    }
    Ok(total)
}

/// `−2 Σ_{k ≥ j} L̄_k`, the quantity whose gradient in `(F_j, e_j)` is
/// `𝓜·(f, e) + 𝓒`.
pub fn tail_objective(
    dyn_: &LinearGaussianDynamics,
    moments: &SmoothedMoments,
    pol: &GaussianPolicy,
    j: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for k in j..moments.horizon() {
        total += policy_surrogate(dyn_, moments, pol, k)?;
    }
    Ok(-2.0 * total)
}

/// Closed-form expected quadratic cost of step `k` under the smoothing
/// posterior with the candidate action model.
pub fn expected_stage_cost(cost: &CostModel, b: &MomentBlocks) -> f64 {
    let n = cost.n_s();
    let m = cost.n_a();
    let mut q = Mat::zeros(n + m, n + m);
    q.view_mut((0, 0), (n, n)).copy_from(&cost.q_s);
    q.view_mut((n, n), (m, m)).copy_from(&cost.q_a);
    let mut target = Vector::zeros(n + m);
    target.rows_mut(0, n).copy_from(&cost.s_star);
    target.rows_mut(n, m).copy_from(&cost.a_star);
    (&q * &b.z_z).trace() - 2.0 * target.dot(&(&q * &b.e_z)) + target.dot(&(&q * &target))
}

/// Smoothed expected cumulative cost `E[Σ_k c(s_k, a_k) | Y]` for a policy.
pub fn expected_posterior_cost(moments: &SmoothedMoments, pol: &GaussianPolicy, cost: &CostModel) -> f64 {
    (0..moments.horizon())
        .map(|k| expected_stage_cost(cost, &moments.blocks_for(k, &pol.gains[k], &pol.offsets[k], &pol.cov(k))))
        .sum()
}
