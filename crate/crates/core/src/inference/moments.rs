use serde::{Deserialize, Serialize};

use super::closed_loop::build_closed_loop;
use super::kalman::{kalman_filter, rts_smoother, FilterOutput, StateMoments};
use crate::dynfit::LinearGaussianDynamics;
use crate::emdp::GaussianPolicy;
use crate::error::Result;
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

/// Posterior first and second (non-central) moments of `ζ_k = (s_{k+1}, y_k)`
/// and `z_k = (s_k, a_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentBlocks {
    #[serde(with = "serde_mat::vector")]
    pub e_zeta: Vector,
    #[serde(with = "serde_mat::vector")]
    pub e_z: Vector,
    #[serde(with = "serde_mat::mat")]
    pub zeta_zeta: Mat,
    #[serde(with = "serde_mat::mat")]
    pub zeta_z: Mat,
    #[serde(with = "serde_mat::mat")]
    pub z_z: Mat,
}

/// Assemble the blocks at step `k` for the action model `a = F s + e + η`,
/// `η ~ N(0, Σ)` independent of the state posterior. `y_k` is observed.
pub fn policy_blocks(states: &StateMoments, k: usize, f: &Mat, e: &Vector, sigma: &Mat, y_k: f64) -> MomentBlocks {
    let n = f.ncols();
    let m = f.nrows();
    let s = &states.mean[k];
    let s1 = &states.mean[k + 1];
    let ess = &states.cov[k] + linalg::outer(s, s);
    let es1s = &states.lag_one[k] + linalg::outer(s1, s);
    let es1s1 = &states.cov[k + 1] + linalg::outer(s1, s1);
    let a_mean = f * s + e;
    let esa = &ess * f.transpose() + linalg::outer(s, e);
    let eaa = linalg::symmetrize(
        &(f * &ess * f.transpose() + f * linalg::outer(s, e) + linalg::outer(e, s) * f.transpose() + linalg::outer(e, e) + sigma),
    );
    let es1a = &es1s * f.transpose() + linalg::outer(s1, e);

    let mut e_z = Vector::zeros(n + m);
    e_z.rows_mut(0, n).copy_from(s);
    e_z.rows_mut(n, m).copy_from(&a_mean);
    let mut e_zeta = Vector::zeros(n + 1);
    e_zeta.rows_mut(0, n).copy_from(s1);
    e_zeta[n] = y_k;

    let mut z_z = Mat::zeros(n + m, n + m);
    z_z.view_mut((0, 0), (n, n)).copy_from(&ess);
    z_z.view_mut((0, n), (n, m)).copy_from(&esa);
    z_z.view_mut((n, 0), (m, n)).copy_from(&esa.transpose());
    z_z.view_mut((n, n), (m, m)).copy_from(&eaa);

    let mut zeta_z = Mat::zeros(n + 1, n + m);
    zeta_z.view_mut((0, 0), (n, n)).copy_from(&es1s);
    zeta_z.view_mut((0, n), (n, m)).copy_from(&es1a);
    zeta_z.view_mut((n, 0), (1, n)).copy_from(&(s.transpose() * y_k));
    zeta_z.view_mut((n, n), (1, m)).copy_from(&(a_mean.transpose() * y_k));

    let mut zeta_zeta = Mat::zeros(n + 1, n + 1);
    zeta_zeta.view_mut((0, 0), (n, n)).copy_from(&es1s1);
    zeta_zeta.view_mut((0, n), (n, 1)).copy_from(&(s1 * y_k));
    zeta_zeta.view_mut((n, 0), (1, n)).copy_from(&(s1.transpose() * y_k));
    zeta_zeta[(n, n)] = y_k * y_k;

    MomentBlocks {
        e_zeta,
        e_z,
        zeta_zeta: linalg::symmetrize(&zeta_zeta),
        zeta_z,
        z_z: linalg::symmetrize(&z_z),
    }
}

/// E-step result: smoothed state moments under the current policy plus the
/// observation sequence they were conditioned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedMoments {
    pub states: StateMoments,
    pub y: Vec<f64>,
    /// blocks evaluated with the policy that produced the posterior
    pub blocks: Vec<MomentBlocks>,
}

impl SmoothedMoments {
    pub fn new(states: StateMoments, y: Vec<f64>, pol: &GaussianPolicy) -> Self {
        let blocks = (0..y.len())
            .map(|k| policy_blocks(&states, k, &pol.gains[k], &pol.offsets[k], &pol.cov(k), y[k]))
            .collect();
        SmoothedMoments { states, y, blocks }
    }

    pub fn horizon(&self) -> usize {
        self.y.len()
    }

    /// Blocks at step `k` with the action model of a candidate policy.
    pub fn blocks_for(&self, k: usize, f: &Mat, e: &Vector, sigma: &Mat) -> MomentBlocks {
        policy_blocks(&self.states, k, f, e, sigma, self.y[k])
    }
}

/// Closed-loop assembly, filtering and smoothing in one call.
pub fn e_step(
    dyn_: &LinearGaussianDynamics,
    pol: &GaussianPolicy,
    y: &[f64],
    mu1: &Vector,
    p1: &Mat,
) -> Result<(SmoothedMoments, FilterOutput)> {
    let clm = build_closed_loop(dyn_, pol)?;
    let filtered = kalman_filter(&clm, y, mu1, p1)?;
    let states = rts_smoother(&filtered)?;
    Ok((SmoothedMoments::new(states, y.to_vec(), pol), filtered))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_policy_action_moment() {
        let states = StateMoments {
            mean: vec![Vector::from_vec(vec![1.0, 2.0]); 2],
            cov: vec![Mat::identity(2, 2); 2],
            lag_one: vec![Mat::identity(2, 2) * 0.5],
        };
        let e = Vector::from_vec(vec![0.3]);
        let b = policy_blocks(&states, 0, &Mat::zeros(1, 2), &e, &Mat::zeros(1, 1), 0.4);
        assert!((b.z_z[(2, 2)] - 0.09).abs() < 1e-15);
        assert!((b.zeta_zeta[(2, 2)] - 0.16).abs() < 1e-15);
    }

    #[test]
    fn conditional_covariance_is_psd() {
        let states = StateMoments {
            mean: vec![Vector::from_vec(vec![1.0, -2.0]), Vector::from_vec(vec![0.5, 0.1])],
            cov: vec![
                Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
                Mat::from_row_slice(2, 2, &[0.7, -0.1, -0.1, 0.4]),
            ],
            lag_one: vec![Mat::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2])],
        };
        let f = Mat::from_row_slice(1, 2, &[-0.4, 0.2]);
        let b = policy_blocks(&states, 0, &f, &Vector::from_element(1, 0.1), &Mat::from_element(1, 1, 0.2), 0.3);
        let c = &b.z_z - linalg::outer(&b.e_z, &b.e_z);
        assert!(linalg::min_eigenvalue(&c) > -1e-12);
    }
}
