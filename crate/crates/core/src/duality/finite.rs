use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite outcome space with reference weights `P`, a cost per atom and a
/// risk parameter `ρ < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMeasureSpace {
    pub p: Vec<f64>,
    pub j: Vec<f64>,
    pub rho: f64,
}

const WEIGHT_TOL: f64 = 1e-9;

pub(crate) fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Empty(format!("{what} has no atoms")));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("{what} has a negative or non-finite weight")));
    }
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidParameter(format!("{what} has all-zero weights")));
    }
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidParameter(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl FiniteMeasureSpace {
    pub fn new(p: Vec<f64>, j: Vec<f64>, rho: f64) -> Result<Self> {
        let sp = FiniteMeasureSpace { p, j, rho };
        sp.validate()?;
        Ok(sp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.len() != self.j.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} costs",
                self.p.len(),
                self.j.len()
            )));
        }
        check_weights(&self.p, "reference measure")?;
        if self.j.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("cost must be finite".into()));
        }
        if !(self.rho.is_finite() && self.rho != 0.0) {
            return Err(Error::InvalidParameter(format!("risk parameter must be finite and nonzero, got {}", self.rho)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `log Σ_i P_i e^{ρ J_i}` over the atoms with positive weight.
    pub fn log_partition(&self) -> f64 {
        let terms: Vec<f64> = self
            .p
            .iter()
            .zip(&self.j)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, j)| p.ln() + self.rho * j)
            .collect();
        log_sum_exp(&terms)
    }

    pub fn expectation(&self, q: &[f64]) -> f64 {
        q.iter().zip(&self.j).map(|(q, j)| q * j).sum()
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

/// `(1/ρ) log Σ_i P_i e^{ρ J_i}`.
pub fn free_energy(sp: &FiniteMeasureSpace) -> Result<f64> {
    sp.validate()?;
    Ok(sp.log_partition() / sp.rho)
}

/// `Σ_i Q_i log(Q_i / P_i)`, infinite when `Q` charges an atom `P` does not.
pub fn relative_entropy(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Dimension(format!("{} atoms against {}", q.len(), p.len())));
    }
    check_weights(q, "measure")?;
    check_weights(p, "reference measure")?;
    let mut total = 0.0;
    for (qi, pi) in q.iter().zip(p) {
        if *qi == 0.0 {
            continue;
        }
        if *pi == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += qi * (qi / pi).ln();
    }
    Ok(total.max(0.0))
}

/// `Q*_i ∝ P_i e^{ρ J_i}`.
pub fn gibbs_measure(sp: &FiniteMeasureSpace) -> Result<Vec<f64>> {
    sp.validate()?;
    let z = sp.log_partition();
    Ok(sp
        .p
        .iter()
        .zip(&sp.j)
        .map(|(p, j)| if *p > 0.0 { (p.ln() + sp.rho * j - z).exp() } else { 0.0 })
        .collect())
}

/// `E_Q J − (1/ρ) KL(Q || P)`, the variational objective whose extremum over
/// `Q` is the free energy.
pub fn variational_objective(sp: &FiniteMeasureSpace, q: &[f64]) -> Result<f64> {
    let kl = relative_entropy(q, &sp.p)?;
    Ok(sp.expectation(q) - kl / sp.rho)
}

/// Distance of `Q` from the extremum: `[E_Q J − (1/ρ) KL(Q||P)] − F` for
/// `ρ < 0`, where the bracket is minimized by the Gibbs measure, and the
/// negated difference for `ρ > 0`. Nonnegative in both cases, zero at `Q*`.
pub fn legendre_gap(sp: &FiniteMeasureSpace, q: &[f64]) -> Result<f64> {
    let f = free_energy(sp)?;
    let v = variational_objective(sp, q)?;
    Ok(if sp.rho < 0.0 { v - f } else { f - v })
}
