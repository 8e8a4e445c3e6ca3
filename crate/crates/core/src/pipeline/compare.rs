use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::record::{Dispersion, Evaluation, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub boxes: Vec<Dispersion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub horizon: usize,
    /// iterations present in both records
    pub aligned_iterations: usize,
    pub curve_a: CostCurve,
    pub curve_b: CostCurve,
    /// evaluated state spread of `a` over that of `b` at steps `1..T`
    /// (the state after each action)
    pub std_ratio: Vec<f64>,
    /// share of steps with `std_ratio ≤ 1`
    pub std_ratio_le_one: f64,
    pub cost_mean_a: f64,
    pub cost_mean_b: f64,
    /// `cost_mean_a / cost_mean_b`
    pub cost_ratio: f64,
    pub actions_a: Vec<Dispersion>,
    pub actions_b: Vec<Dispersion>,
    /// ratio of action standard deviations per dimension
    pub action_std_ratio: Vec<f64>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

fn check_contiguous(r: &RunRecord) -> Result<()> {
    for (pos, it) in r.iterations.iter().enumerate() {
        if it.index != pos {
            return Err(Error::Alignment(format!(
                "record '{}' is missing iteration {pos} (found index {} in its place)",
                r.name, it.index
            )));
        }
    }
    Ok(())
}

fn curve(r: &RunRecord, n: usize) -> CostCurve {
    let its = &r.iterations[..n];
    CostCurve {
        name: r.name.clone(),
        mean: its.iter().map(|i| i.cost.mean).collect(),
        std: its.iter().map(|i| i.cost.std).collect(),
        boxes: its.iter().map(|i| i.cost.clone()).collect(),
    }
}

fn evaluation(r: &RunRecord) -> Result<&Evaluation> {
    r.final_eval
        .as_ref()
        .or(r.baseline_eval.as_ref())
        .ok_or_else(|| Error::Alignment(format!("record '{}' has no evaluation", r.name)))
}

/// Compare two runs of the same task. The first record is the numerator of
/// every ratio.
pub fn compare_runs(a: &RunRecord, b: &RunRecord) -> Result<Comparison> {
    if a.task != b.task {
        return Err(Error::ConfigMismatch(format!(
            "records '{}' and '{}' were produced with different plant or cost settings",
            a.name, b.name
        )));
    }
    check_contiguous(a)?;
    check_contiguous(b)?;
    let ea = evaluation(a)?;
    let eb = evaluation(b)?;
    let t = a.horizon();
    if ea.spread.len() != t + 1 || eb.spread.len() != t + 1 {
        return Err(Error::Alignment("evaluation spread does not cover the horizon".into()));
    }
    let std_ratio: Vec<f64> = (1..=t).map(|k| ratio(ea.spread[k], eb.spread[k])).collect();
    let le = std_ratio.iter().filter(|r| **r <= 1.0).count() as f64 / t as f64;
    let n = a.iterations.len().min(b.iterations.len());
    Ok(Comparison {
        a: a.name.clone(),
        b: b.name.clone(),
        horizon: t,
        aligned_iterations: n,
        curve_a: curve(a, n),
        curve_b: curve(b, n),
        std_ratio,
        std_ratio_le_one: le,
        cost_mean_a: ea.cost.mean,
        cost_mean_b: eb.cost.mean,
        cost_ratio: ratio(ea.cost.mean, eb.cost.mean),
        action_std_ratio: ea.actions.iter().zip(&eb.actions).map(|(x, y)| ratio(x.std, y.std)).collect(),
        actions_a: ea.actions.clone(),
        actions_b: eb.actions.clone(),
    })
}

impl std::fmt::Display for Comparison {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} vs {} (T = {})", self.a, self.b, self.horizon)?;
        writeln!(f, "  aligned iterations   {}", self.aligned_iterations)?;
        writeln!(
            f,
            "  eval cost mean       {:.6} vs {:.6} (ratio {:.4})",
            self.cost_mean_a, self.cost_mean_b, self.cost_ratio
        )?;
        writeln!(f, "  steps with std ratio <= 1   {:.1}%", 100.0 * self.std_ratio_le_one)?;
        for (d, r) in self.action_std_ratio.iter().enumerate() {
            writeln!(f, "  action {d} std ratio  {r:.4}")?;
        }
        Ok(())
    }
}
