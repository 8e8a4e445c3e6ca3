use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::duality::em_bound_decomposition;
use crate::dynfit::{fit_dynamics, FitDiagnostics, LinearGaussianDynamics};
use crate::emdp::{GaussianPolicy, LIKELIHOOD_TOL};
use crate::env::{episode_seed, rollout, PlantSpec, TaskCost, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::ilqg::{ilqg_step, kl_constrained_update, KL_SLACK};
use crate::inference::{build_closed_loop, e_step, ORACLE_MAX_SIZE};
use crate::linalg::{Mat, Vector};

use super::config::{RunConfig, SwitchRule};
use super::record::{
    BoundCheck, Dispersion, EmRecord, Evaluation, FitSummary, IterationRecord, Phase, RefinementRecord, RunRecord,
    StageFailure, TaskFingerprint,
};

const TAG_BASELINE: u64 = 1;
const TAG_EM: u64 = 2;
const TAG_OBSERVATIONS: u64 = 3;
const TAG_REFINE: u64 = 4;
const TAG_EVAL: u64 = 5;

fn stage_seed(base: u64, tag: u64, iteration: usize) -> u64 {
    episode_seed(episode_seed(base, tag), iteration as u64)
}

/// Wall-clock per stage. Kept out of the record so the record stays
/// reproducible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<(String, f64)>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    /// last fitted model
    pub model: Option<LinearGaussianDynamics>,
    /// every rollout batch, labelled for the raw CSV dump
    pub batches: Vec<(String, TrajectoryBatch)>,
    pub timing: Timing,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    plant: PlantSpec,
    task: TaskCost,
    record: RunRecord,
    model: Option<LinearGaussianDynamics>,
    batches: Vec<(String, TrajectoryBatch)>,
    timing: Timing,
}

/// Stage name attached to an error so the record can report where it failed.
struct Failed {
    stage: &'static str,
    error: Error,
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, Failed>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, Failed> {
        self.map_err(|error| Failed { stage, error })
    }
}

type Staged<T> = std::result::Result<T, Failed>;

fn fit_summary(d: &FitDiagnostics) -> FitSummary {
    FitSummary {
        elbo_final: d.elbo_trace.last().copied().unwrap_or(f64::NAN),
        elbo_iterations: d.elbo_trace.len(),
        ridged_steps: d.ridged_steps.clone(),
        floored_steps: d.floored_steps.clone(),
    }
}

impl Runner<'_> {
    fn timed<T>(&mut self, label: String, f: impl FnOnce(&Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        self.timing.stages.push((label, start.elapsed().as_secs_f64()));
        out
    }

    /// Roll out `policy`, fit the model and estimate the initial-state
    /// distribution from the measured first states.
    fn rollout_and_fit(
        &mut self,
        phase: Phase,
        iteration: usize,
        tag: u64,
        policy: &GaussianPolicy,
    ) -> Staged<(TrajectoryBatch, LinearGaussianDynamics, FitDiagnostics, Vector, Mat)> {
        let seed = stage_seed(self.cfg.seed, tag, iteration);
        let label = format!("{}_{iteration:03}", phase.label());
        let batch = self
            .timed(format!("{label} rollout"), |r| rollout(&r.plant, policy, &r.task, r.cfg.rollouts, seed))
            .stage("rollout")?;
        let (dyn_, diag) = self
            .timed(format!("{label} fit"), |r| fit_dynamics(&batch, &r.cfg.fit))
            .stage("dynamics fit")?;
        let (mu1, mut p1) = batch.measured_moments(0);
        let n = mu1.len();
        p1 += Mat::identity(n, n) * self.cfg.em.init_cov_floor;
        self.model = Some(dyn_.clone());
        self.batches.push((label, batch.clone()));
        Ok((batch, dyn_, diag, mu1, p1))
    }

    fn push_iteration(
        &mut self,
        phase: Phase,
        phase_iteration: usize,
        batch: &TrajectoryBatch,
        diag: &FitDiagnostics,
        policy: &GaussianPolicy,
    ) -> usize {
        let costs = batch.total_costs();
        let index = self.record.iterations.len();
        self.record.iterations.push(IterationRecord {
            index,
            phase,
            phase_iteration,
            cost: Dispersion::of(&costs),
            costs,
            fit: Some(fit_summary(diag)),
            em: None,
            refinement: None,
            policy: policy.clone(),
        });
        index
    }

    fn baseline(&mut self, baseline_only: bool) -> Staged<GaussianPolicy> {
        let b = &self.cfg.baseline;
        let mut policy = GaussianPolicy::zero(self.cfg.horizon, self.plant.n_s, self.plant.n_a, b.init_sigma);
        let mut stalled = 0;
        let mut prev_mean: Option<f64> = None;
        for i in 0..b.max_iterations {
            let (batch, dyn_, diag, mu1, p1) = self.rollout_and_fit(Phase::Baseline, i, TAG_BASELINE, &policy)?;
            let idx = self.push_iteration(Phase::Baseline, i, &batch, &diag, &policy);
            let (next, _) = ilqg_step(&self.task, &dyn_, &policy, &mu1, &p1).stage("ilqg step")?;
            policy = next;
            self.record.switch_iteration = Some(i + 1);
            if baseline_only {
                continue;
            }
            let mean = self.record.iterations[idx].cost.mean;
            let switch = match b.switch {
                SwitchRule::Fixed { iteration } => i + 1 >= iteration,
                SwitchRule::RelativeImprovement { threshold, patience } => {
                    if let Some(p) = prev_mean {
                        let gain = (p - mean) / p.abs().max(f64::MIN_POSITIVE);
                        if gain < threshold {
                            stalled += 1;
                        } else {
                            stalled = 0;
                        }
                    }
                    stalled >= patience
                }
            };
            prev_mean = Some(mean);
            if switch {
                break;
            }
        }
        Ok(policy)
    }

    fn em(&mut self, mut policy: GaussianPolicy) -> Staged<GaussianPolicy> {
        let exact_check = self.cfg.horizon * self.plant.n_s <= ORACLE_MAX_SIZE;
        for r in 0..self.cfg.em.recursions {
            let (batch, dyn_, diag, mu1, p1) = self.rollout_and_fit(Phase::Em, r, TAG_EM, &policy)?;
            let idx = self.push_iteration(Phase::Em, r, &batch, &diag, &policy);
            // observations are drawn from the fitted closed loop, not taken
            // from the rollouts
            let clm = build_closed_loop(&dyn_, &policy).stage("observation generation")?;
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(self.cfg.seed, TAG_OBSERVATIONS, r));
            let (_, y) = clm.sample(&mu1, &p1, &mut rng);
            let (moments, filtered) = self
                .timed(format!("em_{r:03} e-step"), |_| e_step(&dyn_, &policy, &y, &mu1, &p1))
                .stage("e-step")?;
            let upd = self
                .timed(format!("em_{r:03} m-step"), |s| {
                    crate::emdp::em_update(&moments, &dyn_, &policy, &s.task.base, s.cfg.em.cov_floor, &mu1, &p1)
                })
                .stage("m-step")?;
            let exact_bound = if exact_check {
                let after = em_bound_decomposition(&dyn_, &upd.policy, &policy, &y, &mu1, &p1).stage("bound check")?;
                let before = em_bound_decomposition(&dyn_, &policy, &policy, &y, &mu1, &p1).stage("bound check")?;
                let bound_gain = after.l_bound - before.l_bound;
                Some(BoundCheck {
                    l_obs_before: before.l_obs,
                    l_obs_after: after.l_obs,
                    bound_gain,
                    ok: after.l_obs - before.l_obs >= bound_gain - LIKELIHOOD_TOL,
                })
            } else {
                None
            };
            let min_of = |f: fn(&crate::emdp::HessianReport) -> f64| {
                upd.hessians.iter().map(f).fold(f64::INFINITY, f64::min)
            };
            let em = EmRecord {
                log_likelihood: filtered.log_likelihood,
                certificates: upd.certificates,
                undamped_certificates: upd.undamped_certificates,
                step_sizes: upd.step_sizes.clone(),
                min_hessian_eig: min_of(|h| h.min_eig),
                min_hessian_eig_sigma: min_of(|h| h.min_eig_sigma),
                exact_bound,
            };
            if !em.certificates.all_ok() || em.exact_bound.as_ref().is_some_and(|b| !b.ok) {
                self.record.certificates_ok = false;
            }
            self.record.iterations[idx].em = Some(em);
            policy = upd.policy;
        }
        Ok(policy)
    }

    fn refine(&mut self, anchor: GaussianPolicy) -> Staged<GaussianPolicy> {
        let mut policy = anchor.clone();
        for g in 0..self.cfg.refinement.iterations {
            let (batch, dyn_, diag, mu1, p1) = self.rollout_and_fit(Phase::Refine, g, TAG_REFINE, &policy)?;
            let idx = self.push_iteration(Phase::Refine, g, &batch, &diag, &policy);
            let budget = self.cfg.budget(g).stage("kl update")?;
            let upd = self
                .timed(format!("refine_{g:03} kl update"), |s| {
                    kl_constrained_update(&dyn_, &anchor, &budget, &s.task, &mu1, &p1)
                })
                .stage("kl update")?;
            let within_budget = upd.kl.iter().zip(&budget.nu).all(|(kl, nu)| *kl <= KL_SLACK * nu);
            if !within_budget {
                self.record.certificates_ok = false;
            }
            self.record.iterations[idx].refinement = Some(RefinementRecord {
                eta: upd.eta,
                nu: budget.nu.clone(),
                kl: upd.kl,
                trace: upd.trace,
                objective_before: upd.objective_before,
                objective_after: upd.objective_after,
                bracketed: upd.bracketed,
                diagnostic: upd.diagnostic,
                within_budget,
            });
            policy = upd.policy;
        }
        Ok(policy)
    }

    fn evaluate(&mut self, label: &str, policy: &GaussianPolicy) -> Staged<Evaluation> {
        // both evaluations share one seed so they see the same noise
        let seed = stage_seed(self.cfg.seed, TAG_EVAL, 0);
        let batch = self
            .timed(format!("eval_{label}"), |r| rollout(&r.plant, policy, &r.task, r.cfg.eval_rollouts, seed))
            .stage("evaluation")?;
        let ev = Evaluation::from_batch(label, &batch);
        self.batches.push((format!("eval_{label}"), batch));
        Ok(ev)
    }

    fn run(&mut self, baseline_only: bool) -> Staged<()> {
        let baseline = self.baseline(baseline_only)?;
        self.record.baseline_policy = Some(baseline.clone());
        self.record.baseline_eval = Some(self.evaluate("baseline", &baseline)?);
        if baseline_only || (self.cfg.em.recursions == 0 && self.cfg.refinement.iterations == 0) {
            self.record.final_policy = Some(baseline);
            return Ok(());
        }
        let em = self.em(baseline)?;
        let fin = self.refine(em)?;
        self.record.final_eval = Some(self.evaluate("final", &fin)?);
        self.record.final_policy = Some(fin);
        Ok(())
    }
}

/// Baseline iLQG until the switch rule fires, EM recursions, KL-constrained
/// refinement around the EM policy, then evaluation of the baseline and final
/// policies on common random numbers. A stage error ends the run; the partial
/// record carries the failing stage.
///
/// With `baseline_only` the switch rule is ignored and the baseline runs all
/// of its iterations.
pub fn run_pipeline_with(cfg: &RunConfig, baseline_only: bool) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let plant = cfg.plant()?;
    let task = cfg.task_cost()?;
    let record = RunRecord {
        name: cfg.name.clone(),
        seed: cfg.seed,
        n_s: plant.n_s,
        n_a: plant.n_a,
        task: TaskFingerprint {
            plant: cfg.plant.clone(),
            cost: cfg.cost.clone(),
            rho2: cfg.rho2,
            horizon: cfg.horizon,
        },
        iterations: vec![],
        switch_iteration: None,
        baseline_eval: None,
        final_eval: None,
        baseline_policy: None,
        final_policy: None,
        certificates_ok: true,
        failure: None,
    };
    let mut runner = Runner {
        cfg,
        plant,
        task,
        record,
        model: None,
        batches: vec![],
        timing: Timing::default(),
    };
    if let Err(f) = runner.run(baseline_only) {
        runner.record.certificates_ok = false;
        runner.record.failure = Some(StageFailure {
            stage: f.stage.to_string(),
            message: f.error.to_string(),
        });
    }
    runner.timing.total_seconds = start.elapsed().as_secs_f64();
    Ok(RunOutput {
        record: runner.record,
        model: runner.model,
        batches: runner.batches,
        timing: runner.timing,
    })
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    run_pipeline_with(cfg, false)
}
