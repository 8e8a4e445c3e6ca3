use serde::{Deserialize, Serialize};

use crate::env::{ReachTerm, TaskCost};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::serde_mat;

/// Second-order expansion of the stage cost around a nominal state-action
/// sequence:
/// `ℓ(ŝ+δs, â+δa) ≈ c + q_sᵀδs + q_aᵀδa + ½δsᵀQ_ss δs + ½δaᵀQ_aa δa + δaᵀQ_as δs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticQModel {
    #[serde(with = "serde_mat::vectors")]
    pub s_hat: Vec<Vector>,
    #[serde(with = "serde_mat::vectors")]
    pub a_hat: Vec<Vector>,
    #[serde(with = "serde_mat::mats")]
    pub q_ss: Vec<Mat>,
    #[serde(with = "serde_mat::mats")]
    pub q_aa: Vec<Mat>,
    /// `m × n`
    #[serde(with = "serde_mat::mats")]
    pub q_as: Vec<Mat>,
    #[serde(with = "serde_mat::vectors")]
    pub q_s: Vec<Vector>,
    #[serde(with = "serde_mat::vectors")]
    pub q_a: Vec<Vector>,
    pub constant: Vec<f64>,
}

impl QuadraticQModel {
    pub fn horizon(&self) -> usize {
        self.q_ss.len()
    }

    pub fn eval(&self, k: usize, s: &Vector, a: &Vector) -> f64 {
        let ds = s - &self.s_hat[k];
        let da = a - &self.a_hat[k];
        self.constant[k]
            + self.q_s[k].dot(&ds)
            + self.q_a[k].dot(&da)
            + 0.5 * ds.dot(&(&self.q_ss[k] * &ds))
            + 0.5 * da.dot(&(&self.q_aa[k] * &da))
            + da.dot(&(&self.q_as[k] * &ds))
    }

    /// The step-`k` expansion in absolute coordinates `z = (s, a)`:
    /// `½zᵀHz + hᵀz + c`.
    pub fn absolute(&self, k: usize) -> (Mat, Vector, f64) {
        let n = self.q_ss[k].nrows();
        let m = self.q_aa[k].nrows();
        let mut hess = Mat::zeros(n + m, n + m);
        hess.view_mut((0, 0), (n, n)).copy_from(&self.q_ss[k]);
        hess.view_mut((n, n), (m, m)).copy_from(&self.q_aa[k]);
        hess.view_mut((n, 0), (m, n)).copy_from(&self.q_as[k]);
        hess.view_mut((0, n), (n, m)).copy_from(&self.q_as[k].transpose());
        let mut z = Vector::zeros(n + m);
        z.rows_mut(0, n).copy_from(&self.s_hat[k]);
        z.rows_mut(n, m).copy_from(&self.a_hat[k]);
        let mut g = Vector::zeros(n + m);
        g.rows_mut(0, n).copy_from(&self.q_s[k]);
        g.rows_mut(n, m).copy_from(&self.q_a[k]);
        let hz = &hess * &z;
        let c = self.constant[k] - g.dot(&z) + 0.5 * z.dot(&hz);
        (hess, g - hz, c)
    }

    /// Expected value of the step-`k` expansion when `(s, a)` has the given
    /// mean and covariance.
    pub fn expected(&self, k: usize, mean: &Vector, cov: &Mat) -> f64 {
        let (h, g, c) = self.absolute(k);
        0.5 * (&h * (cov + mean * mean.transpose())).trace() + g.dot(mean) + c
    }
}

fn reach_derivatives(r: &ReachTerm, s: &Vector) -> (Vector, Mat) {
    let n = s.len();
    let [l1, l2] = r.link_lengths;
    let (q1, q2) = (s[0], s[1]);
    let (s1, c1) = q1.sin_cos();
    let (s12, c12) = (q1 + q2).sin_cos();
    let p = r.end_effector(s);
    let d = [p[0] - r.target[0], p[1] - r.target[1]];
    let jac = [[-l1 * s1 - l2 * s12, -l2 * s12], [l1 * c1 + l2 * c12, l2 * c12]];
    let hx = [[-l1 * c1 - l2 * c12, -l2 * c12], [-l2 * c12, -l2 * c12]];
    let hy = [[-l1 * s1 - l2 * s12, -l2 * s12], [-l2 * s12, -l2 * s12]];
    let mut g = Vector::zeros(n);
    let mut h = Mat::zeros(n, n);
    for i in 0..2 {
        g[i] = 2.0 * r.weight * (jac[0][i] * d[0] + jac[1][i] * d[1]);
        for j in 0..2 {
            h[(i, j)] = 2.0
                * r.weight
                * (jac[0][i] * jac[0][j] + jac[1][i] * jac[1][j] + d[0] * hx[i][j] + d[1] * hy[i][j]);
        }
    }
    (g, h)
}

/// Expand the task cost around `(ŝ_k, â_k)`. The quadratic part is exact; the
/// reach term uses its analytic gradient and Hessian.
pub fn quadratize(cost: &TaskCost, s_hat: &[Vector], a_hat: &[Vector]) -> Result<QuadraticQModel> {
    if s_hat.len() != a_hat.len() {
        return Err(Error::Dimension(format!(
            "nominal has {} states but {} actions",
            s_hat.len(),
            a_hat.len()
        )));
    }
    let c = &cost.base;
    let mut out = QuadraticQModel {
        s_hat: s_hat.to_vec(),
        a_hat: a_hat.to_vec(),
        q_ss: vec![],
        q_aa: vec![],
        q_as: vec![],
        q_s: vec![],
        q_a: vec![],
        constant: vec![],
    };
    for (s, a) in s_hat.iter().zip(a_hat) {
        let value = cost.eval(s, a)?;
        let mut q_s = &c.q_s * (s - &c.s_star) * 2.0;
        let mut q_ss = &c.q_s * 2.0;
        if let Some(r) = &cost.reach {
            let (g, h) = reach_derivatives(r, s);
            q_s += g;
            q_ss += h;
        }
        out.q_ss.push(q_ss);
        out.q_aa.push(&c.q_a * 2.0);
        out.q_as.push(Mat::zeros(c.n_a(), c.n_s()));
        out.q_s.push(q_s);
        out.q_a.push(&c.q_a * (a - &c.a_star) * 2.0);
        out.constant.push(value);
    }
    Ok(out)
}
