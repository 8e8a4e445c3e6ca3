use serde::{Deserialize, Serialize};

use crate::emdp::{Certificates, GaussianPolicy};
use crate::env::TrajectoryBatch;
use crate::ilqg::DualStep;
use crate::serde_mat;

use super::config::{CostConfig, PlantConfig};

/// Five-number summary plus mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Dispersion {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Dispersion {
                min: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Dispersion {
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Baseline,
    Em,
    Refine,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Baseline => "baseline",
            Phase::Em => "em",
            Phase::Refine => "refine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub elbo_final: f64,
    pub elbo_iterations: usize,
    pub ridged_steps: Vec<usize>,
    pub floored_steps: Vec<usize>,
}

/// Exact check that the observed-data likelihood gain dominates the gain of
/// the complete-data bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub l_obs_before: f64,
    pub l_obs_after: f64,
    pub bound_gain: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRecord {
    /// `log p(Y)` of the generated observations under the fitted model
    pub log_likelihood: f64,
    pub certificates: Certificates,
    pub undamped_certificates: Certificates,
    pub step_sizes: Vec<f64>,
    pub min_hessian_eig: f64,
    pub min_hessian_eig_sigma: f64,
    #[serde(default)]
    pub exact_bound: Option<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    #[serde(with = "serde_mat::lossless_f64")]
    pub eta: f64,
    pub nu: Vec<f64>,
    pub kl: Vec<f64>,
    pub trace: Vec<DualStep>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub bracketed: bool,
    #[serde(default)]
    pub diagnostic: Option<String>,
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub phase: Phase,
    pub phase_iteration: usize,
    pub costs: Vec<f64>,
    pub cost: Dispersion,
    pub fit: Option<FitSummary>,
    #[serde(default)]
    pub em: Option<EmRecord>,
    #[serde(default)]
    pub refinement: Option<RefinementRecord>,
    /// policy that generated this iteration's rollouts
    pub policy: GaussianPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub costs: Vec<f64>,
    pub cost: Dispersion,
    /// `sqrt(tr Cov(x_k))` over episodes, `k = 1..T+1`
    pub spread: Vec<f64>,
    /// `[dim][k]`
    pub state_mean: Vec<Vec<f64>>,
    pub state_std: Vec<Vec<f64>>,
    /// per action dimension, over all steps and episodes
    pub actions: Vec<Dispersion>,
}

impl Evaluation {
    pub fn from_batch(label: &str, batch: &TrajectoryBatch) -> Self {
        let costs = batch.total_costs();
        let n_s = batch.episodes[0].x[0].len();
        let n_a = batch.episodes[0].u.first().map_or(0, |u| u.len());
        let bands: Vec<Vec<(f64, f64)>> = (0..n_s).map(|d| batch.state_band(d)).collect();
        Evaluation {
            label: label.to_string(),
            cost: Dispersion::of(&costs),
            costs,
            spread: batch.state_spread(),
            state_mean: bands.iter().map(|b| b.iter().map(|p| p.0).collect()).collect(),
            state_std: bands.iter().map(|b| b.iter().map(|p| p.1).collect()).collect(),
            actions: (0..n_a).map(|d| Dispersion::of(&batch.action_values(d))).collect(),
        }
    }
}

/// Plant and cost a run was configured with; two runs are comparable only
/// when these agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFingerprint {
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub rho2: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub seed: u64,
    pub n_s: usize,
    pub n_a: usize,
    pub task: TaskFingerprint,
    pub iterations: Vec<IterationRecord>,
    /// number of baseline iterations before EM took over
    pub switch_iteration: Option<usize>,
    pub baseline_eval: Option<Evaluation>,
    pub final_eval: Option<Evaluation>,
    pub baseline_policy: Option<GaussianPolicy>,
    pub final_policy: Option<GaussianPolicy>,
    pub certificates_ok: bool,
    pub failure: Option<StageFailure>,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.certificates_ok && self.failure.is_none()
    }

    pub fn horizon(&self) -> usize {
        self.task.horizon
    }

    /// Mixture likelihood after each M-step.
    pub fn likelihood_trace(&self) -> Vec<(f64, f64)> {
        self.iterations
            .iter()
            .filter_map(|it| it.em.as_ref())
            .map(|em| (em.certificates.likelihood_before, em.certificates.likelihood_after))
            .collect()
    }

    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
