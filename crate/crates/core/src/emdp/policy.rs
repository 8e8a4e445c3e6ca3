use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

/// Time-varying linear-Gaussian controller `a_k ~ N(F_k s_k + e_k, Σ_k)`.
///
/// The covariance is stored through a factor `S_k` with `Σ_k = S_kᵀ S_k` so the
/// parameter vector round-trips exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    #[serde(with = "serde_mat::mats")]
    pub gains: Vec<Mat>,
    #[serde(with = "serde_mat::vectors")]
    pub offsets: Vec<Vector>,
    #[serde(with = "serde_mat::mats")]
    pub cov_sqrt: Vec<Mat>,
}

impl GaussianPolicy {
    pub fn new(gains: Vec<Mat>, offsets: Vec<Vector>, covs: &[Mat]) -> Result<Self> {
        let t = gains.len();
        if offsets.len() != t || covs.len() != t {
            return Err(Error::Dimension("policy sequences differ in length".into()));
        }
        let cov_sqrt = covs.iter().map(linalg::sqrt_factor).collect();
        let p = GaussianPolicy {
            gains,
            offsets,
            cov_sqrt,
        };
        p.check()?;
        Ok(p)
    }

    /// `F = 0`, `e = 0`, `Σ = σ²I` at every step.
    pub fn zero(horizon: usize, n_s: usize, n_a: usize, sigma: f64) -> Self {
        GaussianPolicy {
            gains: vec![Mat::zeros(n_a, n_s); horizon],
            offsets: vec![Vector::zeros(n_a); horizon],
            cov_sqrt: vec![Mat::identity(n_a, n_a) * sigma; horizon],
        }
    }

    fn check(&self) -> Result<()> {
        let (n_a, n_s) = (self.n_a(), self.n_s());
        for k in 0..self.horizon() {
            crate::error::check_dims("policy gain", self.gains[k].shape(), (n_a, n_s))?;
            if self.offsets[k].len() != n_a {
                return Err(Error::Dimension(format!("policy offset at step {}", k + 1)));
            }
            crate::error::check_dims("policy covariance factor", self.cov_sqrt[k].shape(), (n_a, n_a))?;
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn n_a(&self) -> usize {
        self.gains.first().map_or(0, |f| f.nrows())
    }

    pub fn n_s(&self) -> usize {
        self.gains.first().map_or(0, |f| f.ncols())
    }

    pub fn cov(&self, k: usize) -> Mat {
        let s = &self.cov_sqrt[k];
        s.transpose() * s
    }

    pub fn set_cov(&mut self, k: usize, cov: &Mat) {
        self.cov_sqrt[k] = linalg::sqrt_factor(cov);
    }

    pub fn mean_action(&self, k: usize, s: &Vector) -> Vector {
        &self.gains[k] * s + &self.offsets[k]
    }

    /// Raise every step covariance to at least `floor·I`.
    pub fn with_cov_floor(mut self, floor: f64) -> Self {
        for k in 0..self.horizon() {
            let (c, changed) = linalg::clip_eigenvalues(&self.cov(k), floor);
            if changed {
                self.set_cov(k, &c);
            }
        }
        self
    }

    /// `φ_k = col(vec F_k, e_k, vec S_k)` stacked over k.
    pub fn vectorize(&self) -> Vector {
        let mut out = Vec::new();
        for k in 0..self.horizon() {
            out.extend_from_slice(self.gains[k].as_slice());
            out.extend_from_slice(self.offsets[k].as_slice());
            out.extend_from_slice(self.cov_sqrt[k].as_slice());
        }
        Vector::from_vec(out)
    }

    pub fn devectorize(phi: &Vector, horizon: usize, n_s: usize, n_a: usize) -> Result<Self> {
        let per = n_a * n_s + n_a + n_a * n_a;
        if phi.len() != per * horizon {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, expected {}",
                phi.len(),
                per * horizon
            )));
        }
        let x = phi.as_slice();
        let mut p = GaussianPolicy::zero(horizon, n_s, n_a, 0.0);
        for k in 0..horizon {
            let base = k * per;
            let f_end = base + n_a * n_s;
            let e_end = f_end + n_a;
            p.gains[k] = linalg::unvec(&x[base..f_end], n_a, n_s);
            p.offsets[k] = Vector::from_column_slice(&x[f_end..e_end]);
            p.cov_sqrt[k] = linalg::unvec(&x[e_end..base + per], n_a, n_a);
        }
        Ok(p)
    }
}
