use crate::dynfit::LinearGaussianDynamics;
use crate::emdp::GaussianPolicy;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

use super::{quadratize, QuadraticQModel};

const REG_START: f64 = 1e-8;
const REG_MAX: f64 = 1e10;

/// Stage cost `½zᵀHz + hᵀz` over `z = (s, a)`.
pub(crate) struct Stage {
    pub hess: Mat,
    pub grad: Vector,
}

fn regularized_cholesky(q_aa: &Mat, k: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = linalg::cholesky(q_aa) {
        return Ok(ch);
    }
    let m = q_aa.nrows();
    let mut mu = REG_START;
    while mu <= REG_MAX {
        if let Some(ch) = linalg::cholesky(&(q_aa + Mat::identity(m, m) * mu)) {
            return Ok(ch);
        }
        mu *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "action block of the cost-to-go at step {} stays indefinite after regularization",
        k + 1
    )))
}

/// Soft (maximum-entropy) LQR sweep over the fitted state dynamics with zero
/// terminal value. Gains match the hard LQR solution; the action covariance
/// is the inverse action Hessian of the cost-to-go.
pub(crate) fn backward_pass(stages: &[Stage], dyn_: &LinearGaussianDynamics) -> Result<GaussianPolicy> {
    let t = stages.len();
    if dyn_.horizon() != t {
        return Err(Error::Dimension(format!(
            "cost expansion has {t} steps, dynamics {}",
            dyn_.horizon()
        )));
    }
    let n = dyn_.n_s();
    let m = dyn_.n_a();
    let mut v_ss = Mat::zeros(n, n);
    let mut v_s = Vector::zeros(n);
    let mut gains = vec![Mat::zeros(m, n); t];
    let mut offsets = vec![Vector::zeros(m); t];
    let mut covs = vec![Mat::zeros(m, m); t];
    for k in (0..t).rev() {
        let st = &stages[k];
        crate::error::check_dims("stage Hessian", st.hess.shape(), (n + m, n + m))?;
        let a = &dyn_.a_d[k];
        let b = &dyn_.b_d[k];
        let vc = &v_ss * &dyn_.c_d[k] + &v_s;
        let q_ss = st.hess.view((0, 0), (n, n)) + a.transpose() * &v_ss * a;
        let q_aa = linalg::symmetrize(&(st.hess.view((n, n), (m, m)) + b.transpose() * &v_ss * b));
        let q_as = st.hess.view((n, 0), (m, n)) + b.transpose() * &v_ss * a;
        let q_s = st.grad.rows(0, n) + a.transpose() * &vc;
        let q_a = st.grad.rows(n, m) + b.transpose() * &vc;
        let ch = regularized_cholesky(&q_aa, k)?;
        let gain = -ch.solve(&q_as);
        let off = -ch.solve(&q_a);
        v_ss = linalg::symmetrize(
            &(&q_ss + q_as.transpose() * &gain + gain.transpose() * &q_as + gain.transpose() * &q_aa * &gain),
        );
        v_s = &q_s + q_as.transpose() * &off + gain.transpose() * &q_a + gain.transpose() * &q_aa * &off;
        covs[k] = linalg::symmetrize(&ch.inverse());
        gains[k] = gain;
        offsets[k] = off;
    }
    GaussianPolicy::new(gains, offsets, &covs)
}

/// Stage models for the sweep. A negative-curvature state block (the reach
/// term away from its target) is clipped to PSD so the cost-to-go stays
/// convex; the gradient at the nominal point is kept exact.
pub(crate) fn stages_from(q: &QuadraticQModel) -> Vec<Stage> {
    let mut q = q.clone();
    for h in q.q_ss.iter_mut() {
        *h = linalg::clip_eigenvalues(h, 0.0).0;
    }
    (0..q.horizon())
        .map(|k| {
            let (hess, grad, _) = q.absolute(k);
            Stage { hess, grad }
        })
        .collect()
}

/// Time-varying affine feedback minimizing the expanded cost-to-go under the
/// fitted dynamics, with covariance `Q_aa⁻¹`.
pub fn lqr_backward_pass(q: &QuadraticQModel, dyn_: &LinearGaussianDynamics) -> Result<GaussianPolicy> {
    for k in 0..q.horizon() {
        if !linalg::is_spd(&q.q_aa[k]) {
            return Err(Error::NotPositiveDefinite(format!(
                "action cost Hessian at step {} must be positive definite",
                k + 1
            )));
        }
    }
    backward_pass(&stages_from(q), dyn_)
}

/// Mean and covariance of `s_1..s_{T+1}` under the fitted state dynamics.
pub fn state_marginals(
    dyn_: &LinearGaussianDynamics,
    pol: &GaussianPolicy,
    mu1: &Vector,
    p1: &Mat,
) -> (Vec<Vector>, Vec<Mat>) {
    let t = dyn_.horizon();
    let mut means = Vec::with_capacity(t + 1);
    let mut covs = Vec::with_capacity(t + 1);
    means.push(mu1.clone());
    covs.push(p1.clone());
    for k in 0..t {
        let b = &dyn_.b_d[k];
        let acl = &dyn_.a_d[k] + b * &pol.gains[k];
        let mean = &acl * &means[k] + b * &pol.offsets[k] + &dyn_.c_d[k];
        let cov = &acl * &covs[k] * acl.transpose() + b * pol.cov(k) * b.transpose() + &dyn_.sigma_d[k];
        means.push(mean);
        covs.push(linalg::symmetrize(&cov));
    }
    (means, covs)
}

/// Joint mean and covariance of `(s_k, a_k)`.
pub(crate) fn state_action_moments(pol: &GaussianPolicy, k: usize, mean: &Vector, cov: &Mat) -> (Vector, Mat) {
    let n = mean.len();
    let m = pol.n_a();
    let f = &pol.gains[k];
    let mut mz = Vector::zeros(n + m);
    mz.rows_mut(0, n).copy_from(mean);
    mz.rows_mut(n, m).copy_from(&pol.mean_action(k, mean));
    let mut cz = Mat::zeros(n + m, n + m);
    let fp = f * cov;
    cz.view_mut((0, 0), (n, n)).copy_from(cov);
    cz.view_mut((n, 0), (m, n)).copy_from(&fp);
    cz.view_mut((0, n), (n, m)).copy_from(&fp.transpose());
    cz.view_mut((n, n), (m, m)).copy_from(&(&fp * f.transpose() + pol.cov(k)));
    (mz, cz)
}

/// Expected expanded cost under the fitted dynamics.
pub fn expected_model_cost(
    q: &QuadraticQModel,
    dyn_: &LinearGaussianDynamics,
    pol: &GaussianPolicy,
    mu1: &Vector,
    p1: &Mat,
) -> f64 {
    let (means, covs) = state_marginals(dyn_, pol, mu1, p1);
    (0..q.horizon())
        .map(|k| {
            let (mz, cz) = state_action_moments(pol, k, &means[k], &covs[k]);
            q.expected(k, &mz, &cz)
        })
        .sum()
}

/// Sum of the conditional action entropies.
pub fn policy_entropy(pol: &GaussianPolicy) -> f64 {
    let m = pol.n_a() as f64;
    (0..pol.horizon())
        .map(|k| {
            let logdet: f64 = pol.cov_sqrt[k].diagonal().iter().map(|v| 2.0 * v.abs().ln()).sum();
            0.5 * (m * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + logdet)
        })
        .sum()
}

/// Entropy-regularized objective `E[Σ ℓ] − Σ H(a_k | s_k)` minimized by the
/// soft backward pass.
pub fn maxent_objective(
    q: &QuadraticQModel,
    dyn_: &LinearGaussianDynamics,
    pol: &GaussianPolicy,
    mu1: &Vector,
    p1: &Mat,
) -> f64 {
    expected_model_cost(q, dyn_, pol, mu1, p1) - policy_entropy(pol)
}

/// One iLQG iteration: expand the cost around the mean trajectory of `pol`
/// under the fitted dynamics and solve the LQR subproblem.
pub fn ilqg_step(
    cost: &crate::env::TaskCost,
    dyn_: &LinearGaussianDynamics,
    pol: &GaussianPolicy,
    mu1: &Vector,
    p1: &Mat,
) -> Result<(GaussianPolicy, QuadraticQModel)> {
    let (means, _) = state_marginals(dyn_, pol, mu1, p1);
    let t = pol.horizon();
    let actions: Vec<Vector> = (0..t).map(|k| pol.mean_action(k, &means[k])).collect();
    let q = quadratize(cost, &means[..t], &actions)?;
    Ok((lqr_backward_pass(&q, dyn_)?, q))
}
