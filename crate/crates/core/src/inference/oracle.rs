//! Brute-force posterior by conditioning the joint Gaussian over all states
//! and observations. Quadratic in memory, so only for small instances.

use super::closed_loop::ClosedLoopModel;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// Largest `T·n_s` the oracle accepts.
pub const ORACLE_MAX_SIZE: usize = 64;

/// Joint Gaussian over `(s_1..s_{T+1}, y_1..y_T)`, states first.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    pub mean: Vector,
    pub cov: Mat,
    pub n_s: usize,
    pub horizon: usize,
}

/// Posterior over the stacked states given some prefix of the observations.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub mean: Vector,
    pub cov: Mat,
    pub n_s: usize,
    /// `log p(y_1..y_j)` of the conditioning observations
    pub log_marginal: f64,
}

impl ExactPosterior {
    pub fn state_mean(&self, k: usize) -> Vector {
        self.mean.rows(k * self.n_s, self.n_s).into_owned()
    }

    /// `Cov(s_i, s_j | ·)`
    pub fn cross_cov(&self, i: usize, j: usize) -> Mat {
        self.cov.view((i * self.n_s, j * self.n_s), (self.n_s, self.n_s)).into_owned()
    }

    pub fn state_cov(&self, k: usize) -> Mat {
        self.cross_cov(k, k)
    }
}

pub fn joint_gaussian(clm: &ClosedLoopModel, mu1: &Vector, p1: &Mat) -> Result<JointGaussian> {
    let t = clm.horizon();
    let n = clm.n_s();
    if t * n > ORACLE_MAX_SIZE {
        return Err(Error::TooLarge(format!("T·n_s = {} exceeds {ORACLE_MAX_SIZE}", t * n)));
    }
    // every variable is affine in independent base noise: the initial state
    // deviation and one (w_k, v_k) pair per step
    let dim_eps = n + t * (n + 1);
    let dim_x = (t + 1) * n + t;
    let mut lin = Mat::zeros(dim_x, dim_eps);
    let mut mean = Vector::zeros(dim_x);
    let mut base_cov = Mat::zeros(dim_eps, dim_eps);
    base_cov.view_mut((0, 0), (n, n)).copy_from(p1);
    lin.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
    mean.rows_mut(0, n).copy_from(mu1);
    let y_row = (t + 1) * n;
    for k in 0..t {
        let off = n + k * (n + 1);
        base_cov.view_mut((off, off), (n + 1, n + 1)).copy_from(&clm.joint_noise(k));
        let s_lin = lin.view((k * n, 0), (n, dim_eps)).into_owned();
        let s_mean = mean.rows(k * n, n).into_owned();
        let mut next_lin = &clm.a_bar[k] * &s_lin;
        let mut y_lin = &clm.c_bar[k] * &s_lin;
        for i in 0..n {
            next_lin[(i, off + i)] += 1.0;
        }
        y_lin[(0, off + n)] += 1.0;
        lin.view_mut(((k + 1) * n, 0), (n, dim_eps)).copy_from(&next_lin);
        lin.view_mut((y_row + k, 0), (1, dim_eps)).copy_from(&y_lin);
        let next_mean = &clm.a_bar[k] * &s_mean + &clm.b_bar[k];
        let y_mean = &clm.c_bar[k] * &s_mean + &clm.d_bar[k];
        mean.rows_mut((k + 1) * n, n).copy_from(&next_mean);
        mean[y_row + k] = y_mean[0];
    }
    let cov = linalg::symmetrize(&(&lin * base_cov * lin.transpose()));
    Ok(JointGaussian {
        mean,
        cov,
        n_s: n,
        horizon: t,
    })
}

impl JointGaussian {
    /// Condition the states on `y_1..y_j` (the first `j` entries of `y`).
    pub fn condition_on_prefix(&self, y: &[f64], j: usize) -> Result<ExactPosterior> {
        let ns = (self.horizon + 1) * self.n_s;
        let y_row = ns;
        let mean_s = self.mean.rows(0, ns).into_owned();
        let cov_ss = self.cov.view((0, 0), (ns, ns)).into_owned();
        if j == 0 {
            return Ok(ExactPosterior {
                mean: mean_s,
                cov: cov_ss,
                n_s: self.n_s,
                log_marginal: 0.0,
            });
        }
        let cov_sy = self.cov.view((0, y_row), (ns, j)).into_owned();
        let cov_yy = self.cov.view((y_row, y_row), (j, j)).into_owned();
        let mean_y = self.mean.rows(y_row, j).into_owned();
        let obs = Vector::from_column_slice(&y[..j]);
        let ch = linalg::cholesky(&cov_yy).ok_or_else(|| Error::NotPositiveDefinite("observation covariance".into()))?;
        let resid = &obs - &mean_y;
        let mean = &mean_s + &cov_sy * ch.solve(&resid);
        let cov = linalg::symmetrize(&(&cov_ss - &cov_sy * ch.solve(&cov_sy.transpose())));
        let log_marginal = linalg::gaussian_logpdf(&obs, &mean_y, &cov_yy).unwrap();
        Ok(ExactPosterior {
            mean,
            cov,
            n_s: self.n_s,
            log_marginal,
        })
    }
}

/// `p(s_1..s_{T+1} | y_1..y_T)` by direct conditioning.
pub fn exact_posterior_oracle(clm: &ClosedLoopModel, y: &[f64], mu1: &Vector, p1: &Mat) -> Result<ExactPosterior> {
    if y.len() != clm.horizon() {
        return Err(Error::Dimension("observation count".into()));
    }
    joint_gaussian(clm, mu1, p1)?.condition_on_prefix(y, y.len())
}
