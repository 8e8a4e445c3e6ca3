use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::serde_mat;

/// Quadratic stage cost plus the rate `λ` of the exponentiated cost channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(with = "serde_mat::mat")]
    pub q_s: Mat,
    #[serde(with = "serde_mat::mat")]
    pub q_a: Mat,
    #[serde(with = "serde_mat::vector")]
    pub s_star: Vector,
    #[serde(with = "serde_mat::vector")]
    pub a_star: Vector,
    pub lambda: f64,
}

impl CostModel {
    pub fn new(q_s: Mat, q_a: Mat, s_star: Vector, a_star: Vector, lambda: f64) -> Result<Self> {
        let c = CostModel {
            q_s,
            q_a,
            s_star,
            a_star,
            lambda,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let n_s = self.s_star.len();
        let n_a = self.a_star.len();
        check_dims("Q_s", self.q_s.shape(), (n_s, n_s))?;
        check_dims("Q_a", self.q_a.shape(), (n_a, n_a))?;
        if linalg::max_abs_diff(&self.q_s, &self.q_s.transpose()) > 1e-12 || !linalg::is_spd(&self.q_s) {
            return Err(Error::NotPositiveDefinite("state weight Q_s".into()));
        }
        if linalg::max_abs_diff(&self.q_a, &self.q_a.transpose()) > 1e-12 || !linalg::is_spd(&self.q_a) {
            return Err(Error::NotPositiveDefinite("action weight Q_a".into()));
        }
        if !(self.lambda > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cost-channel rate must exceed 1, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn n_s(&self) -> usize {
        self.s_star.len()
    }

    pub fn n_a(&self) -> usize {
        self.a_star.len()
    }
}

/// `(s−s*)ᵀQ_s(s−s*) + (a−a*)ᵀQ_a(a−a*)`
pub fn instantaneous_cost(c: &CostModel, s: &Vector, a: &Vector) -> Result<f64> {
    if s.len() != c.n_s() || a.len() != c.n_a() {
        return Err(Error::Dimension(format!(
            "cost expects state {} / action {}, got {} / {}",
            c.n_s(),
            c.n_a(),
            s.len(),
            a.len()
        )));
    }
    let ds = s - &c.s_star;
    let da = a - &c.a_star;
    Ok(ds.dot(&(&c.q_s * &ds)) + da.dot(&(&c.q_a * &da)))
}

/// `y = exp(−Y)`, floored at the smallest positive normal double so that
/// `y` never leaves `(0, 1]`.
pub fn observed_cost(big_y: f64) -> Result<f64> {
    if big_y.is_nan() || big_y < 0.0 {
        return Err(Error::InvalidParameter(format!("cost must be nonnegative, got {big_y}")));
    }
    Ok((-big_y).exp().max(f64::MIN_POSITIVE))
}

/// Density `λ y^{λ−1}` of the observed cost on `(0, 1]`.
pub fn cost_density(y: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 1.0) {
        return Err(Error::InvalidParameter(format!("rate must exceed 1, got {lambda}")));
    }
    if !(y > 0.0 && y <= 1.0) {
        return Err(Error::InvalidParameter(format!("observed cost must lie in (0,1], got {y}")));
    }
    Ok(lambda * y.powf(lambda - 1.0))
}

/// End-effector distance term for the two-link arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTerm {
    pub weight: f64,
    pub target: [f64; 2],
    pub link_lengths: [f64; 2],
}

impl ReachTerm {
    pub fn end_effector(&self, s: &Vector) -> [f64; 2] {
        let [l1, l2] = self.link_lengths;
        let (q1, q2) = (s[0], s[1]);
        [
            l1 * q1.cos() + l2 * (q1 + q2).cos(),
            l1 * q1.sin() + l2 * (q1 + q2).sin(),
        ]
    }

    pub fn eval(&self, s: &Vector) -> f64 {
        let p = self.end_effector(s);
        let dx = p[0] - self.target[0];
        let dy = p[1] - self.target[1];
        self.weight * (dx * dx + dy * dy)
    }
}

/// Stage cost used by a task: the quadratic model, optionally augmented by a
/// nonlinear reach term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCost {
    pub base: CostModel,
    #[serde(default)]
    pub reach: Option<ReachTerm>,
}

impl TaskCost {
    pub fn quadratic(base: CostModel) -> Self {
        TaskCost { base, reach: None }
    }

    pub fn eval(&self, s: &Vector, a: &Vector) -> Result<f64> {
        let q = instantaneous_cost(&self.base, s, a)?;
        Ok(q + self.reach.as_ref().map_or(0.0, |r| r.eval(s)))
    }

    pub fn is_quadratic(&self) -> bool {
        self.reach.is_none()
    }
}
