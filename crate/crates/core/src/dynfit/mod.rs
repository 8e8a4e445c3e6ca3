//! Time-varying linear-Gaussian dynamics fitted to rollout data: a global
//! mixture prior, collapsed to one conjugate prior per step, updated with the
//! step's empirical moments and conditioned on the state-action pair.

mod condition;
mod niw;
mod vbgmm;

pub use condition::{condition, Conditional};
pub use niw::{collapse_to_niw, empirical_moments, posterior_update, NiwPrior};
pub use vbgmm::{fit_vb_gmm, GmmCluster, GmmPrior, VbSettings};

use serde::{Deserialize, Serialize};

use crate::env::TrajectoryBatch;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

/// `s_{k+1} = A_d s + B_d a + c_d + w`, `y_k = A_y s + B_y a + c_y + v` with
/// joint noise covariance `[[Σ_d, Σ_yd], [Σ_ydᵀ, Σ_y]]`, for `k = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianDynamics {
    #[serde(with = "serde_mat::mats")]
    pub a_d: Vec<Mat>,
    #[serde(with = "serde_mat::mats")]
    pub b_d: Vec<Mat>,
    #[serde(with = "serde_mat::vectors")]
    pub c_d: Vec<Vector>,
    #[serde(with = "serde_mat::mats")]
    pub a_y: Vec<Mat>,
    #[serde(with = "serde_mat::mats")]
    pub b_y: Vec<Mat>,
    pub c_y: Vec<f64>,
    #[serde(with = "serde_mat::mats")]
    pub sigma_d: Vec<Mat>,
    #[serde(with = "serde_mat::mats")]
    pub sigma_yd: Vec<Mat>,
    pub sigma_y: Vec<f64>,
}

impl LinearGaussianDynamics {
    pub fn horizon(&self) -> usize {
        self.a_d.len()
    }

    pub fn n_s(&self) -> usize {
        self.a_d.first().map_or(0, |a| a.nrows())
    }

    pub fn n_a(&self) -> usize {
        self.b_d.first().map_or(0, |b| b.ncols())
    }

    /// `A° = [[A_d, B_d], [A_y, B_y]]`, mapping `z = (s, a)` to `ζ = (s', y)`.
    pub fn a_full(&self, k: usize) -> Mat {
        let (n, m) = (self.n_s(), self.n_a());
        let mut out = Mat::zeros(n + 1, n + m);
        out.view_mut((0, 0), (n, n)).copy_from(&self.a_d[k]);
        out.view_mut((0, n), (n, m)).copy_from(&self.b_d[k]);
        out.view_mut((n, 0), (1, n)).copy_from(&self.a_y[k]);
        out.view_mut((n, n), (1, m)).copy_from(&self.b_y[k]);
        out
    }

    /// `B° = [B_d; B_y]`
    pub fn b_full(&self, k: usize) -> Mat {
        let (n, m) = (self.n_s(), self.n_a());
        let mut out = Mat::zeros(n + 1, m);
        out.view_mut((0, 0), (n, m)).copy_from(&self.b_d[k]);
        out.view_mut((n, 0), (1, m)).copy_from(&self.b_y[k]);
        out
    }

    pub fn c_full(&self, k: usize) -> Vector {
        let n = self.n_s();
        let mut out = Vector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(&self.c_d[k]);
        out[n] = self.c_y[k];
        out
    }

    pub fn sigma_full(&self, k: usize) -> Mat {
        let n = self.n_s();
        let mut out = Mat::zeros(n + 1, n + 1);
        out.view_mut((0, 0), (n, n)).copy_from(&self.sigma_d[k]);
        out.view_mut((0, n), (n, 1)).copy_from(&self.sigma_yd[k]);
        out.view_mut((n, 0), (1, n)).copy_from(&self.sigma_yd[k].transpose());
        out[(n, n)] = self.sigma_y[k];
        out
    }

    /// Assemble one step from the full blocks.
    pub fn push_step(&mut self, a: &Mat, c: &Vector, sigma: &Mat, n_s: usize) {
        let m = a.ncols() - n_s;
        self.a_d.push(a.view((0, 0), (n_s, n_s)).into_owned());
        self.b_d.push(a.view((0, n_s), (n_s, m)).into_owned());
        self.a_y.push(a.view((n_s, 0), (1, n_s)).into_owned());
        self.b_y.push(a.view((n_s, n_s), (1, m)).into_owned());
        self.c_d.push(c.rows(0, n_s).into_owned());
        self.c_y.push(c[n_s]);
        self.sigma_d.push(sigma.view((0, 0), (n_s, n_s)).into_owned());
        self.sigma_yd.push(sigma.view((0, n_s), (n_s, 1)).into_owned());
        self.sigma_y.push(sigma[(n_s, n_s)]);
    }

    pub fn empty() -> Self {
        LinearGaussianDynamics {
            a_d: vec![],
            b_d: vec![],
            c_d: vec![],
            a_y: vec![],
            b_y: vec![],
            c_y: vec![],
            sigma_d: vec![],
            sigma_yd: vec![],
            sigma_y: vec![],
        }
    }

    /// Build from full per-step blocks.
    pub fn from_full(a: &[Mat], c: &[Vector], sigma: &[Mat], n_s: usize) -> Result<Self> {
        if a.len() != c.len() || a.len() != sigma.len() {
            return Err(Error::Dimension("dynamics sequences differ in length".into()));
        }
        let mut d = Self::empty();
        for k in 0..a.len() {
            if a[k].nrows() != n_s + 1 || sigma[k].shape() != (n_s + 1, n_s + 1) || c[k].len() != n_s + 1 {
                return Err(Error::Dimension(format!("dynamics blocks at step {}", k + 1)));
            }
            d.push_step(&a[k], &c[k], &sigma[k], n_s);
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub vb: VbSettings,
    pub n0: f64,
    pub k0: f64,
    /// eigenvalue floor on each fitted noise covariance
    pub cov_floor: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            vb: VbSettings::default(),
            n0: 1.0,
            k0: 1.0,
            cov_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub elbo_trace: Vec<f64>,
    /// condition number of the state-action covariance block per step
    pub condition_numbers: Vec<f64>,
    /// steps whose state-action block needed a ridge
    pub ridged_steps: Vec<usize>,
    /// steps whose noise covariance was lifted to the floor
    pub floored_steps: Vec<usize>,
}

/// Joint sample `(s_k, a_k, s_{k+1}, y_k)` of every episode at step `k`.
pub fn joint_samples(batch: &TrajectoryBatch, k: usize) -> Vec<Vector> {
    batch
        .episodes
        .iter()
        .map(|e| {
            let mut v = Vec::with_capacity(2 * e.s[k].len() + e.u[k].len() + 1);
            v.extend(e.s[k].iter());
            v.extend(e.u[k].iter());
            v.extend(e.s[k + 1].iter());
            v.push(e.y[k]);
            Vector::from_vec(v)
        })
        .collect()
}

pub fn fit_dynamics(batch: &TrajectoryBatch, settings: &FitSettings) -> Result<(LinearGaussianDynamics, FitDiagnostics)> {
    if batch.len() < 2 {
        return Err(Error::InvalidParameter("fitting needs at least two episodes".into()));
    }
    let t = batch.horizon();
    let n_s = batch.episodes[0].s[0].len();
    let n_a = batch.episodes[0].u[0].len();
    let per_step: Vec<Vec<Vector>> = (0..t).map(|k| joint_samples(batch, k)).collect();
    let all: Vec<Vector> = per_step.iter().flatten().cloned().collect();
    let gmm = fit_vb_gmm(&all, &settings.vb).map_err(|e| e.in_stage("mixture prior"))?;

    let mut dynamics = LinearGaussianDynamics::empty();
    let mut diag = FitDiagnostics {
        elbo_trace: gmm.elbo_trace.clone(),
        condition_numbers: Vec::with_capacity(t),
        ridged_steps: vec![],
        floored_steps: vec![],
    };
    let m = batch.len();
    for (k, data) in per_step.iter().enumerate() {
        let prior = collapse_to_niw(&gmm.localized(data), settings.n0, settings.k0)?;
        let (emp_mean, emp_cov) = empirical_moments(data)?;
        let (mu, cov) = posterior_update(&prior, &emp_mean, &emp_cov, m)?;
        let c = condition(&mu, &cov, n_s + n_a)?;
        diag.condition_numbers.push(c.cond_number);
        if c.ridge > 0.0 {
            diag.ridged_steps.push(k + 1);
        }
        let (sigma, floored) = linalg::clip_eigenvalues(&c.cov, settings.cov_floor);
        if floored {
            diag.floored_steps.push(k + 1);
        }
        dynamics.push_step(&c.gain, &c.offset, &sigma, n_s);
    }
    Ok((dynamics, diag))
}
