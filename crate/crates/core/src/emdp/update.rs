use serde::{Deserialize, Serialize};

use crate::dynfit::LinearGaussianDynamics;
use crate::env::CostModel;
use crate::error::Result;
use crate::inference::SmoothedMoments;
use crate::linalg::{Mat, Vector};

use super::normal::{backward_dp_update, HessianReport};
use super::surrogate::{expected_posterior_cost, expected_stage_cost, mixture_likelihood};
use super::GaussianPolicy;

pub const LIKELIHOOD_TOL: f64 = 1e-9;
pub const COST_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub likelihood_before: f64,
    pub likelihood_after: f64,
    pub likelihood_ok: bool,
    pub cost_before: f64,
    pub cost_after: f64,
    pub cost_ok: bool,
}

impl Certificates {
    pub fn all_ok(&self) -> bool {
        self.likelihood_ok && self.cost_ok
    }
}

/// Compare the mixture likelihood and the smoothed expected cost of two
/// policies on the same posterior moments.
pub fn improvement_certificates(
    phi_next: &GaussianPolicy,
    phi_i: &GaussianPolicy,
    moments: &SmoothedMoments,
    dyn_: &LinearGaussianDynamics,
    cost: &CostModel,
    mu1: &Vector,
    p1: &Mat,
) -> Result<Certificates> {
    let likelihood_before = mixture_likelihood(phi_i, moments, dyn_, mu1, p1)?;
    let likelihood_after = mixture_likelihood(phi_next, moments, dyn_, mu1, p1)?;
    let cost_before = expected_posterior_cost(moments, phi_i, cost);
    let cost_after = expected_posterior_cost(moments, phi_next, cost);
    Ok(Certificates {
        likelihood_before,
        likelihood_after,
        likelihood_ok: likelihood_after >= likelihood_before - LIKELIHOOD_TOL,
        cost_before,
        cost_after,
        cost_ok: cost_after <= cost_before + COST_TOL,
    })
}

/// Policy on the segment from `from` (t = 0) to `to` (t = 1) at step `k`:
/// gains and offsets interpolate linearly, and so does the covariance.
fn blend_step(pol: &mut GaussianPolicy, from: &GaussianPolicy, to: &GaussianPolicy, k: usize, t: f64) {
    pol.gains[k] = &from.gains[k] * (1.0 - t) + &to.gains[k] * t;
    pol.offsets[k] = &from.offsets[k] * (1.0 - t) + &to.offsets[k] * t;
    let cov = from.cov(k) * (1.0 - t) + to.cov(k) * t;
    pol.set_cov(k, &cov);
}

fn step_cost(moments: &SmoothedMoments, pol: &GaussianPolicy, cost: &CostModel, k: usize) -> f64 {
    expected_stage_cost(cost, &moments.blocks_for(k, &pol.gains[k], &pol.offsets[k], &pol.cov(k)))
}

/// Per-step fraction of the step toward the likelihood maximizer that keeps the
/// smoothed expected stage cost from increasing. Along the segment the cost is
/// a quadratic `αt + βt²` in `t`; the full step is kept when it does not raise
/// the cost, otherwise the step stops at the cost minimizer on the segment.
pub fn cost_safeguard(
    from: &GaussianPolicy,
    to: &GaussianPolicy,
    moments: &SmoothedMoments,
    cost: &CostModel,
) -> (GaussianPolicy, Vec<f64>) {
    let mut out = from.clone();
    let mut steps = Vec::with_capacity(from.horizon());
    for k in 0..from.horizon() {
        let c0 = step_cost(moments, from, cost, k);
        let c1 = step_cost(moments, to, cost, k);
        let mut mid = from.clone();
        blend_step(&mut mid, from, to, k, 0.5);
        let ch = step_cost(moments, &mid, cost, k);
        let beta = 2.0 * (c1 + c0 - 2.0 * ch);
        let alpha = c1 - c0 - beta;
        let t = if c1 <= c0 {
            1.0
        } else if alpha < 0.0 && beta > 0.0 {
            (-alpha / (2.0 * beta)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        if t == 1.0 {
            out.gains[k] = to.gains[k].clone();
            out.offsets[k] = to.offsets[k].clone();
            out.cov_sqrt[k] = to.cov_sqrt[k].clone();
        } else if t > 0.0 {
            blend_step(&mut out, from, to, k, t);
        }
        steps.push(t);
    }
    (out, steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmUpdate {
    pub policy: GaussianPolicy,
    /// the backward-recursion maximizer before the cost safeguard
    pub undamped: GaussianPolicy,
    pub step_sizes: Vec<f64>,
    pub hessians: Vec<HessianReport>,
    pub certificates: Certificates,
    pub undamped_certificates: Certificates,
}

/// One M-step: backward recursion, cost safeguard, certificates.
pub fn em_update(
    moments: &SmoothedMoments,
    dyn_: &LinearGaussianDynamics,
    phi_i: &GaussianPolicy,
    cost: &CostModel,
    cov_floor: f64,
    mu1: &Vector,
    p1: &Mat,
) -> Result<EmUpdate> {
    let dp = backward_dp_update(moments, dyn_, phi_i, cov_floor)?;
    let (policy, step_sizes) = cost_safeguard(phi_i, &dp.policy, moments, cost);
    let certificates = improvement_certificates(&policy, phi_i, moments, dyn_, cost, mu1, p1)?;
    let undamped_certificates = improvement_certificates(&dp.policy, phi_i, moments, dyn_, cost, mu1, p1)?;
    Ok(EmUpdate {
        policy,
        undamped: dp.policy,
        step_sizes,
        hessians: dp.hessians,
        certificates,
        undamped_certificates,
    })
}
