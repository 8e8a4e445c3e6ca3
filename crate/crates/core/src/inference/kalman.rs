use serde::{Deserialize, Serialize};

use super::closed_loop::ClosedLoopModel;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

/// Forward pass output. Index `k` runs over `s_1..s_{T+1}`; `s_{T+1}` has no
/// observation, so its filtered moments equal its predicted ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    #[serde(with = "serde_mat::vectors")]
    pub predicted_mean: Vec<Vector>,
    #[serde(with = "serde_mat::mats")]
    pub predicted_cov: Vec<Mat>,
    #[serde(with = "serde_mat::vectors")]
    pub filtered_mean: Vec<Vector>,
    #[serde(with = "serde_mat::mats")]
    pub filtered_cov: Vec<Mat>,
    /// transition with the observation-correlated part of the noise removed
    #[serde(with = "serde_mat::mats")]
    pub decorrelated_transition: Vec<Mat>,
    /// `log p(y_1..y_T)` under the closed-loop model
    pub log_likelihood: f64,
    /// steps whose innovation variance had to be lifted
    pub regularized_steps: Vec<usize>,
}

/// Posterior state moments given all observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    #[serde(with = "serde_mat::vectors")]
    pub mean: Vec<Vector>,
    #[serde(with = "serde_mat::mats")]
    pub cov: Vec<Mat>,
    /// `Cov(s_{k+1}, s_k | Y)` for `k = 1..T`
    #[serde(with = "serde_mat::mats")]
    pub lag_one: Vec<Mat>,
}

const MIN_INNOVATION: f64 = 1e-12;

/// Kalman filter for a model whose process noise at step `k` is correlated
/// with the observation noise at the same step. After the update with `y_k`,
/// the prediction conditions the process noise on the observed innovation.
pub fn kalman_filter(clm: &ClosedLoopModel, y: &[f64], mu1: &Vector, p1: &Mat) -> Result<FilterOutput> {
    let t = clm.horizon();
    if y.len() != t {
        return Err(Error::Dimension(format!("expected {t} observations, got {}", y.len())));
    }
    let n = clm.n_s();
    if mu1.len() != n || p1.shape() != (n, n) {
        return Err(Error::Dimension("initial state moments".into()));
    }
    let eye = Mat::identity(n, n);
    let mut out = FilterOutput {
        predicted_mean: vec![mu1.clone()],
        predicted_cov: vec![linalg::symmetrize(p1)],
        filtered_mean: Vec::with_capacity(t + 1),
        filtered_cov: Vec::with_capacity(t + 1),
        decorrelated_transition: Vec::with_capacity(t),
        log_likelihood: 0.0,
        regularized_steps: vec![],
    };
    for k in 0..t {
        let m = &out.predicted_mean[k];
        let p = &out.predicted_cov[k];
        let c = &clm.c_bar[k];
        let r = &clm.r_bar[k];
        let yk = Vector::from_element(1, y[k]);
        let innov = &yk - c * m - &clm.d_bar[k];
        let mut s = linalg::symmetrize(&(c * p * c.transpose() + r));
        if !(s[(0, 0)] > MIN_INNOVATION) {
            s[(0, 0)] = MIN_INNOVATION;
            out.regularized_steps.push(k + 1);
        }
        let s_inv = 1.0 / s[(0, 0)];
        let gain = p * c.transpose() * s_inv;
        let mf = m + &gain * &innov;
        let i_kc = &eye - &gain * c;
        let pf = linalg::symmetrize(&(&i_kc * p * i_kc.transpose() + &gain * r * gain.transpose()));
        out.log_likelihood += -0.5
            * (innov[0] * innov[0] * s_inv + s[(0, 0)].ln() + (2.0 * std::f64::consts::PI).ln());

        // condition the process noise on the observation residual
        let r_inv = 1.0 / r[(0, 0)].max(MIN_INNOVATION);
        let corr = &clm.s_bar[k] * r_inv;
        let a_t = &clm.a_bar[k] - &corr * c;
        let b_t = &clm.b_bar[k] + &corr * (&yk - &clm.d_bar[k]);
        let q_t = linalg::symmetrize(&(&clm.q_bar[k] - &corr * clm.s_bar[k].transpose()));
        let mp = &a_t * &mf + b_t;
        let pp = linalg::symmetrize(&(&a_t * &pf * a_t.transpose() + q_t));
        out.filtered_mean.push(mf);
        out.filtered_cov.push(pf);
        out.decorrelated_transition.push(a_t);
        out.predicted_mean.push(mp);
        out.predicted_cov.push(pp);
    }
    out.filtered_mean.push(out.predicted_mean[t].clone());
    out.filtered_cov.push(out.predicted_cov[t].clone());
    Ok(out)
}

/// Rauch–Tung–Striebel backward pass with lag-one cross-covariances.
pub fn rts_smoother(f: &FilterOutput) -> Result<StateMoments> {
    let t = f.decorrelated_transition.len();
    let mut mean = vec![Vector::zeros(0); t + 1];
    let mut cov = vec![Mat::zeros(0, 0); t + 1];
    let mut lag_one = vec![Mat::zeros(0, 0); t];
    mean[t] = f.filtered_mean[t].clone();
    cov[t] = f.filtered_cov[t].clone();
    for k in (0..t).rev() {
        let pf = &f.filtered_cov[k];
        let pp = &f.predicted_cov[k + 1];
        let a = &f.decorrelated_transition[k];
        // G = P_f Aᵀ P_p⁻¹
        let g = linalg::solve_spd(pp, &(a * pf))
            .ok_or_else(|| Error::NotPositiveDefinite(format!("predicted covariance at step {}", k + 2)))?
            .transpose();
        mean[k] = &f.filtered_mean[k] + &g * (&mean[k + 1] - &f.predicted_mean[k + 1]);
        cov[k] = linalg::symmetrize(&(pf + &g * (&cov[k + 1] - pp) * g.transpose()));
        lag_one[k] = &cov[k + 1] * g.transpose();
    }
    Ok(StateMoments { mean, cov, lag_one })
}
