use serde::{Deserialize, Serialize};

use crate::dynfit::LinearGaussianDynamics;
use crate::emdp::GaussianPolicy;
use crate::env::TaskCost;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

use super::lqr::{backward_pass, stages_from, state_marginals, Stage};
use super::{maxent_objective, quadratize};

/// Slack allowed on the per-step bound.
pub const KL_SLACK: f64 = 1.05;
const BISECTION_ITERS: usize = 64;
const ETA_START: f64 = 1e-8;
const ETA_MAX: f64 = 1e16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KlSchedule {
    Constant { nu: f64 },
    PerStep { nu: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlBudget {
    pub nu: Vec<f64>,
    pub schedule: KlSchedule,
}

impl KlBudget {
    pub fn new(schedule: KlSchedule, horizon: usize) -> Result<Self> {
        let nu = match &schedule {
            KlSchedule::Constant { nu } => vec![*nu; horizon],
            KlSchedule::PerStep { nu } => {
                if nu.len() != horizon {
                    return Err(Error::Dimension(format!(
                        "KL schedule has {} entries for horizon {horizon}",
                        nu.len()
                    )));
                }
                nu.clone()
            }
        };
        if let Some(bad) = nu.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidParameter(format!("KL bound must be positive, got {bad}")));
        }
        Ok(KlBudget { nu, schedule })
    }

    pub fn constant(nu: f64, horizon: usize) -> Result<Self> {
        Self::new(KlSchedule::Constant { nu }, horizon)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let schedule = match &self.schedule {
            KlSchedule::Constant { nu } => KlSchedule::Constant { nu: nu * factor },
            KlSchedule::PerStep { nu } => KlSchedule::PerStep {
                nu: nu.iter().map(|v| v * factor).collect(),
            },
        };
        Self::new(schedule, self.nu.len())
    }
}

/// `E_s[KL(p(·|s) || q(·|s))]` at step `k` for `s ~ N(mean, cov)`.
pub fn kl_divergence(p: &GaussianPolicy, q: &GaussianPolicy, k: usize, mean: &Vector, cov: &Mat) -> Result<f64> {
    if p.n_a() != q.n_a() || p.n_s() != q.n_s() || mean.len() != p.n_s() {
        return Err(Error::Dimension("policies and state marginal disagree".into()));
    }
    let sp = p.cov(k);
    let sq = q.cov(k);
    let chq = linalg::cholesky(&sq)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("reference action covariance at step {}", k + 1)))?;
    let logdet_p = linalg::logdet_spd(&sp)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("action covariance at step {}", k + 1)))?;
    let logdet_q = 2.0 * chq.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let df = &p.gains[k] - &q.gains[k];
    let dm = &df * mean + &p.offsets[k] - &q.offsets[k];
    let spread = &df * cov * df.transpose() + &sp;
    let m = p.n_a() as f64;
    let kl = 0.5 * (chq.solve(&spread).trace() + dm.dot(&chq.solve(&dm)) - m + logdet_q - logdet_p);
    Ok(kl.max(0.0))
}

/// Per-step expected KL of `p` from `q` along the state marginals of `p`
/// under the fitted dynamics.
pub fn trajectory_kl(
    p: &GaussianPolicy,
    q: &GaussianPolicy,
    dyn_: &LinearGaussianDynamics,
    mu1: &Vector,
    p1: &Mat,
) -> Result<Vec<f64>> {
    let (means, covs) = state_marginals(dyn_, p, mu1, p1);
    (0..p.horizon()).map(|k| kl_divergence(p, q, k, &means[k], &covs[k])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualStep {
    pub eta: f64,
    pub max_ratio: f64,
    pub kl_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlUpdate {
    pub policy: GaussianPolicy,
    pub eta: f64,
    pub kl: Vec<f64>,
    pub trace: Vec<DualStep>,
    /// entropy-regularized model objective of the reference and the result
    pub objective_before: f64,
    pub objective_after: f64,
    pub bracketed: bool,
    pub diagnostic: Option<String>,
}

fn augmented_stages(base: &[Stage], anchor: &GaussianPolicy, eta: f64) -> Result<Vec<Stage>> {
    let w_cost = 1.0 / (1.0 + eta);
    let w_anchor = eta / (1.0 + eta);
    let n = anchor.n_s();
    let m = anchor.n_a();
    base.iter()
        .enumerate()
        .map(|(k, st)| {
            let prec = linalg::inverse_spd(&anchor.cov(k)).ok_or_else(|| {
                Error::NotPositiveDefinite(format!("reference action covariance at step {}", k + 1))
            })?;
            let mut d = Mat::zeros(m, n + m);
            d.view_mut((0, 0), (m, n)).copy_from(&(-&anchor.gains[k]));
            d.view_mut((0, n), (m, m)).copy_from(&Mat::identity(m, m));
            let hess = &st.hess * w_cost + d.transpose() * &prec * &d * w_anchor;
            let grad = &st.grad * w_cost - d.transpose() * (&prec * &anchor.offsets[k]) * w_anchor;
            Ok(Stage {
                hess: linalg::symmetrize(&hess),
                grad,
            })
        })
        .collect()
}

/// Minimize `E[Σ Q(s_k, a_k)] − H` subject to `E[KL(p_k || anchor_k)] ≤ ν_k`
/// at every step. The Lagrangian with a single weight `η` is a soft LQR on
/// `(ℓ − η log p̄)/(1 + η)`; `η` is bisected in log space until the largest
/// ratio `KL_k/ν_k` lies within the slack.
pub fn kl_constrained_update(
    dyn_: &LinearGaussianDynamics,
    anchor: &GaussianPolicy,
    budget: &KlBudget,
    cost: &TaskCost,
    mu1: &Vector,
    p1: &Mat,
) -> Result<KlUpdate> {
    let t = anchor.horizon();
    if budget.nu.len() != t || dyn_.horizon() != t {
        return Err(Error::Dimension("budget, dynamics and policy disagree on horizon".into()));
    }
    let (means, _) = state_marginals(dyn_, anchor, mu1, p1);
    let actions: Vec<Vector> = (0..t).map(|k| anchor.mean_action(k, &means[k])).collect();
    let q = quadratize(cost, &means[..t], &actions)?;
    let base = stages_from(&q);
    let objective_before = maxent_objective(&q, dyn_, anchor, mu1, p1);

    let mut trace = Vec::new();
    let mut solve = |eta: f64| -> Result<(GaussianPolicy, Vec<f64>, f64)> {
        let pol = backward_pass(&augmented_stages(&base, anchor, eta)?, dyn_)?;
        let kl = trajectory_kl(&pol, anchor, dyn_, mu1, p1)?;
        let ratio = kl.iter().zip(&budget.nu).map(|(a, b)| a / b).fold(0.0, f64::max);
        trace.push(DualStep {
            eta,
            max_ratio: ratio,
            kl_total: kl.iter().sum(),
        });
        Ok((pol, kl, ratio))
    };

    let finish = |pol: GaussianPolicy, kl: Vec<f64>, eta: f64, trace: Vec<DualStep>| {
        let objective_after = maxent_objective(&q, dyn_, &pol, mu1, p1);
        KlUpdate {
            policy: pol,
            eta,
            kl,
            trace,
            objective_before,
            objective_after,
            bracketed: true,
            diagnostic: None,
        }
    };

    let (pol0, kl0, r0) = solve(0.0)?;
    if r0 <= KL_SLACK {
        return Ok(finish(pol0, kl0, 0.0, trace));
    }
    let mut lo = 0.0;
    let mut hi = ETA_START;
    let mut best = loop {
        let (pol, kl, r) = solve(hi)?;
        if r <= KL_SLACK {
            break (pol, kl, r);
        }
        lo = hi;
        hi *= 2.0;
        if hi > ETA_MAX {
            let kl = trajectory_kl(anchor, anchor, dyn_, mu1, p1)?;
            return Ok(KlUpdate {
                policy: anchor.clone(),
                eta: f64::INFINITY,
                kl,
                trace,
                objective_before,
                objective_after: objective_before,
                bracketed: false,
                diagnostic: Some(format!("no penalty weight up to {ETA_MAX:e} meets the KL bound")),
            });
        }
    };
    for _ in 0..BISECTION_ITERS {
        if best.2 >= 1.0 / KL_SLACK {
            break;
        }
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let (pol, kl, r) = solve(mid)?;
        if r <= KL_SLACK {
            hi = mid;
            best = (pol, kl, r);
        } else {
            lo = mid;
        }
    }
    let (pol, kl, _) = best;
    Ok(finish(pol, kl, hi, trace))
}
