use crate::dynfit::LinearGaussianDynamics;
use crate::emdp::GaussianPolicy;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// State-space model obtained by closing the fitted dynamics with a policy.
/// Policy noise is folded into both noise channels, which correlates them.
///
/// `s_{k+1} = Ā s_k + b̄ + w̄`, `y_k = C̄ s_k + d̄ + v̄`,
/// `Cov(w̄, v̄) = [[Q̄, S̄], [S̄ᵀ, R̄]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub a_bar: Vec<Mat>,
    pub b_bar: Vec<Vector>,
    pub q_bar: Vec<Mat>,
    pub c_bar: Vec<Mat>,
    pub d_bar: Vec<Vector>,
    pub r_bar: Vec<Mat>,
    pub s_bar: Vec<Mat>,
    pub policy: GaussianPolicy,
}

impl ClosedLoopModel {
    pub fn horizon(&self) -> usize {
        self.a_bar.len()
    }

    pub fn n_s(&self) -> usize {
        self.a_bar.first().map_or(0, |a| a.nrows())
    }

    /// Joint covariance of `(w̄, v̄)` at step `k`.
    pub fn joint_noise(&self, k: usize) -> Mat {
        let n = self.n_s();
        let p = self.r_bar[k].nrows();
        let mut out = Mat::zeros(n + p, n + p);
        out.view_mut((0, 0), (n, n)).copy_from(&self.q_bar[k]);
        out.view_mut((0, n), (n, p)).copy_from(&self.s_bar[k]);
        out.view_mut((n, 0), (p, n)).copy_from(&self.s_bar[k].transpose());
        out.view_mut((n, n), (p, p)).copy_from(&self.r_bar[k]);
        out
    }

    /// Draw a state path `s_1..s_{T+1}` and cost observations `y_1..y_T`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, mu1: &Vector, p1: &Mat, rng: &mut R) -> (Vec<Vector>, Vec<f64>) {
        let n = self.n_s();
        let mut s = vec![linalg::sample_gaussian(mu1, &linalg::sqrt_factor(p1), rng)];
        let mut y = Vec::with_capacity(self.horizon());
        for k in 0..self.horizon() {
            let noise = linalg::sample_gaussian(&Vector::zeros(n + 1), &linalg::sqrt_factor(&self.joint_noise(k)), rng);
            let yk = (&self.c_bar[k] * &s[k] + &self.d_bar[k])[0] + noise[n];
            let next = &self.a_bar[k] * &s[k] + &self.b_bar[k] + noise.rows(0, n);
            y.push(yk);
            s.push(next);
        }
        (s, y)
    }
}

pub fn build_closed_loop(dyn_: &LinearGaussianDynamics, pol: &GaussianPolicy) -> Result<ClosedLoopModel> {
    let t = dyn_.horizon();
    if pol.horizon() != t {
        return Err(Error::Dimension(format!(
            "policy horizon {} differs from model horizon {t}",
            pol.horizon()
        )));
    }
    if pol.n_s() != dyn_.n_s() || pol.n_a() != dyn_.n_a() {
        return Err(Error::Dimension("policy dimensions differ from model".into()));
    }
    let mut m = ClosedLoopModel {
        a_bar: Vec::with_capacity(t),
        b_bar: Vec::with_capacity(t),
        q_bar: Vec::with_capacity(t),
        c_bar: Vec::with_capacity(t),
        d_bar: Vec::with_capacity(t),
        r_bar: Vec::with_capacity(t),
        s_bar: Vec::with_capacity(t),
        policy: pol.clone(),
    };
    for k in 0..t {
        let f = &pol.gains[k];
        let e = &pol.offsets[k];
        let sig = pol.cov(k);
        let bd = &dyn_.b_d[k];
        let by = &dyn_.b_y[k];
        m.a_bar.push(&dyn_.a_d[k] + bd * f);
        m.b_bar.push(bd * e + &dyn_.c_d[k]);
        m.q_bar.push(linalg::symmetrize(&(&dyn_.sigma_d[k] + bd * &sig * bd.transpose())));
        m.c_bar.push(&dyn_.a_y[k] + by * f);
        m.d_bar.push(by * e + Vector::from_element(1, dyn_.c_y[k]));
        m.r_bar.push(linalg::symmetrize(&(Mat::from_element(1, 1, dyn_.sigma_y[k]) + by * &sig * by.transpose())));
        m.s_bar.push(&dyn_.sigma_yd[k] + bd * &sig * by.transpose());
    }
    Ok(m)
}
