use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

/// Physical constants of the planar two-link arm. State is
/// `(q1, q2, q̇1, q̇2)`, action is the pair of joint torques.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub link_lengths: [f64; 2],
    pub masses: [f64; 2],
    pub damping: f64,
    pub dt: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            link_lengths: [1.0, 1.0],
            masses: [1.0, 1.0],
            damping: 0.5,
            dt: 0.05,
        }
    }
}

impl ArmParams {
    /// Joint accelerations from the rigid-body equations with point masses at
    /// the link ends and viscous joint damping.
    pub fn accel(&self, q: [f64; 2], dq: [f64; 2], tau: [f64; 2]) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        let [m1, m2] = self.masses;
        let c2 = q[1].cos();
        let s2 = q[1].sin();
        let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + 2.0 * m2 * l1 * l2 * c2;
        let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
        let m22 = m2 * l2 * l2;
        let h = m2 * l1 * l2 * s2;
        let r1 = tau[0] + h * dq[1] * (2.0 * dq[0] + dq[1]) - self.damping * dq[0];
        let r2 = tau[1] - h * dq[0] * dq[0] - self.damping * dq[1];
        let det = m11 * m22 - m12 * m12;
        [(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det]
    }

    /// Semi-implicit Euler step.
    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        let dd = self.accel([x[0], x[1]], [x[2], x[3]], [u[0], u[1]]);
        let v1 = x[2] + self.dt * dd[0];
        let v2 = x[3] + self.dt * dd[1];
        Vector::from_vec(vec![x[0] + self.dt * v1, x[1] + self.dt * v2, v1, v2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepFn {
    Linear {
        #[serde(with = "serde_mat::mat")]
        a: Mat,
        #[serde(with = "serde_mat::mat")]
        b: Mat,
    },
    TwoLinkArm(ArmParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_s: usize,
    pub n_a: usize,
    pub horizon: usize,
    pub step_fn: StepFn,
    #[serde(with = "serde_mat::mat")]
    pub process_noise_cov: Mat,
    pub rho2: f64,
    #[serde(with = "serde_mat::vector")]
    pub init_mean: Vector,
    #[serde(with = "serde_mat::mat")]
    pub init_cov: Mat,
}

fn spd_or_zero(m: &Mat) -> bool {
    m.iter().all(|v| *v == 0.0) || linalg::is_spd(m)
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_s, self.n_a);
        match &self.step_fn {
            StepFn::Linear { a, b } => {
                check_dims("plant A", a.shape(), (n, n))?;
                check_dims("plant B", b.shape(), (n, m))?;
            }
            StepFn::TwoLinkArm(_) => {
                if n != 4 || m != 2 {
                    return Err(Error::Dimension("two-link arm needs 4 states and 2 actions".into()));
                }
            }
        }
        check_dims("process noise", self.process_noise_cov.shape(), (n, n))?;
        check_dims("initial covariance", self.init_cov.shape(), (n, n))?;
        if self.init_mean.len() != n {
            return Err(Error::Dimension("initial mean".into()));
        }
        if !spd_or_zero(&self.process_noise_cov) {
            return Err(Error::NotPositiveDefinite("process noise covariance".into()));
        }
        if !spd_or_zero(&self.init_cov) {
            return Err(Error::NotPositiveDefinite("initial state covariance".into()));
        }
        if !(self.rho2 >= 0.0) {
            return Err(Error::InvalidParameter("sensor noise variance must be nonnegative".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Noise-free state map.
    pub fn transition(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        if x.len() != self.n_s || u.len() != self.n_a {
            return Err(Error::Dimension(format!(
                "plant expects state {} / action {}, got {} / {}",
                self.n_s,
                self.n_a,
                x.len(),
                u.len()
            )));
        }
        Ok(match &self.step_fn {
            StepFn::Linear { a, b } => a * x + b * u,
            StepFn::TwoLinkArm(p) => p.step(x, u),
        })
    }
}

/// Factors of the plant's noise covariances, computed once per rollout.
#[derive(Debug, Clone)]
pub struct NoiseFactors {
    pub process: Mat,
    pub init: Mat,
}

impl NoiseFactors {
    pub fn new(plant: &PlantSpec) -> Self {
        NoiseFactors {
            process: linalg::sqrt_factor(&plant.process_noise_cov),
            init: linalg::sqrt_factor(&plant.init_cov),
        }
    }
}

/// `x' = f(x, u) + w`. Always consumes `n_s` normal draws so that streams stay
/// aligned across noise settings.
pub fn step<R: Rng + ?Sized>(plant: &PlantSpec, x: &Vector, u: &Vector, rng: &mut R) -> Result<Vector> {
    let factor = linalg::sqrt_factor(&plant.process_noise_cov);
    step_with(plant, &factor, x, u, rng)
}

pub(crate) fn step_with<R: Rng + ?Sized>(
    plant: &PlantSpec,
    process_factor: &Mat,
    x: &Vector,
    u: &Vector,
    rng: &mut R,
) -> Result<Vector> {
    let mean = plant.transition(x, u)?;
    Ok(linalg::sample_gaussian(&mean, process_factor, rng))
}

/// Measured state `s = x + ε`, `ε ~ N(0, ρ²I)`.
pub fn observe<R: Rng + ?Sized>(x: &Vector, rho2: f64, rng: &mut R) -> Vector {
    let z = linalg::standard_normal(x.len(), rng);
    x + z * rho2.max(0.0).sqrt()
}
