//! Discrete control problem on which the free-energy route and the EM route
//! to the optimal observed-cost likelihood can both be evaluated exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::em_bound::EmBound;
use super::finite::{log_sum_exp, FiniteMeasureSpace};
use crate::error::{Error, Result};

/// Largest number of enumerated trajectories.
pub const MAX_OUTCOMES: usize = 1000;

/// Finite-state, finite-action problem with stage costs `Y_k(s, a) ≥ 0`
/// observed through `y_k = e^{−Y_k}` with density `λ y^{λ−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteControlProblem {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub init: Vec<f64>,
    /// `[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[k][s][a]`
    pub cost: Vec<Vec<Vec<f64>>>,
    pub lambda: f64,
}

/// `π_k(a | s)` stored as `[k][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn uniform(p: &DiscreteControlProblem) -> Self {
        let row = vec![1.0 / p.n_actions as f64; p.n_actions];
        TabularPolicy {
            probs: vec![vec![row; p.n_states]; p.horizon],
        }
    }

    pub fn random<R: Rng + ?Sized>(p: &DiscreteControlProblem, rng: &mut R) -> Self {
        let mut probs = vec![vec![vec![0.0; p.n_actions]; p.n_states]; p.horizon];
        for row in probs.iter_mut().flatten() {
            let w: Vec<f64> = (0..p.n_actions).map(|_| 0.05 + rng.random::<f64>()).collect();
            let z: f64 = w.iter().sum();
            row.iter_mut().zip(&w).for_each(|(r, v)| *r = v / z);
        }
        TabularPolicy { probs }
    }
}

fn normalized(mut w: Vec<f64>) -> Vec<f64> {
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

impl DiscreteControlProblem {
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        lambda: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut draw = |n: usize| normalized((0..n).map(|_| 0.05 + rng.random::<f64>()).collect());
        let init = draw(n_states);
        let transition = (0..n_states).map(|_| (0..n_actions).map(|_| draw(n_states)).collect()).collect();
        let cost = (0..horizon)
            .map(|_| {
                (0..n_states)
                    .map(|_| (0..n_actions).map(|_| 2.0 * rng.random::<f64>()).collect())
                    .collect()
            })
            .collect();
        let p = DiscreteControlProblem {
            n_states,
            n_actions,
            horizon,
            init,
            transition,
            cost,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) {
            return Err(Error::InvalidParameter(format!("rate must exceed 1, got {}", self.lambda)));
        }
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return Err(Error::Empty("discrete problem has an empty dimension".into()));
        }
        let outcomes = (self.n_states * self.n_actions) as f64;
        if outcomes.powi(self.horizon as i32) > MAX_OUTCOMES as f64 {
            return Err(Error::TooLarge(format!(
                "{} trajectories exceed {MAX_OUTCOMES}",
                outcomes.powi(self.horizon as i32)
            )));
        }
        if self.cost.iter().flatten().flatten().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidParameter("stage costs must be nonnegative".into()));
        }
        Ok(())
    }

    /// `ρ = −(λ − 1)`.
    pub fn rho(&self) -> f64 {
        1.0 - self.lambda
    }

    /// Trajectories `(s_1, a_1, …, s_T, a_T)` in lexicographic order.
    fn outcomes(&self) -> Vec<Vec<(usize, usize)>> {
        let total = (self.n_states * self.n_actions).pow(self.horizon as u32);
        (0..total)
            .map(|mut idx| {
                let mut path = vec![(0, 0); self.horizon];
                for k in (0..self.horizon).rev() {
                    let sa = idx % (self.n_states * self.n_actions);
                    idx /= self.n_states * self.n_actions;
                    path[k] = (sa / self.n_actions, sa % self.n_actions);
                }
                path
            })
            .collect()
    }

    /// Trajectory measure under `pol` paired with the cumulative cost.
    pub fn trajectory_space(&self, pol: &TabularPolicy) -> Result<FiniteMeasureSpace> {
        let mut p = vec![];
        let mut j = vec![];
        for path in self.outcomes() {
            let mut w = self.init[path[0].0];
            let mut c = 0.0;
            for (k, &(s, a)) in path.iter().enumerate() {
                w *= pol.probs[k][s][a];
                c += self.cost[k][s][a];
                if k + 1 < self.horizon {
                    w *= self.transition[s][a][path[k + 1].0];
                }
            }
            p.push(w);
            j.push(c);
        }
        FiniteMeasureSpace::new(normalized(p), j, self.rho())
    }

    /// `T log λ`, the part of `log p(y | trajectory)` that does not depend on
    /// the trajectory.
    fn log_lambda_term(&self) -> f64 {
        self.horizon as f64 * self.lambda.ln()
    }

    /// `log p_φ(y) = T log λ + log E_φ[e^{ρJ}]`.
    pub fn log_likelihood(&self, pol: &TabularPolicy) -> Result<f64> {
        Ok(log_sum_exp(&self.log_policy_and_obs(pol)))
    }

    /// Deterministic policy minimizing the free energy of the cumulative cost,
    /// by backward recursion on `log E[e^{ρJ}]`.
    pub fn free_energy_minimizer(&self) -> TabularPolicy {
        let rho = self.rho();
        let mut w = vec![0.0; self.n_states];
        let mut probs = vec![vec![vec![0.0; self.n_actions]; self.n_states]; self.horizon];
        for k in (0..self.horizon).rev() {
            let mut next = vec![0.0; self.n_states];
            for s in 0..self.n_states {
                let vals: Vec<f64> = (0..self.n_actions)
                    .map(|a| {
                        let cont = if k + 1 < self.horizon {
                            let terms: Vec<f64> = (0..self.n_states)
                                .map(|s2| self.transition[s][a][s2].ln() + w[s2])
                                .collect();
                            log_sum_exp(&terms)
                        } else {
                            0.0
                        };
                        rho * self.cost[k][s][a] + cont
                    })
                    .collect();
                let best = (0..self.n_actions).max_by(|x, y| vals[*x].total_cmp(&vals[*y])).unwrap();
                probs[k][s][best] = 1.0;
                next[s] = vals[best];
            }
            w = next;
        }
        TabularPolicy { probs }
    }

    fn log_policy_and_obs(&self, pol: &TabularPolicy) -> Vec<f64> {
        let rho = self.rho();
        self.outcomes()
            .iter()
            .map(|path| {
                let mut l = self.init[path[0].0].ln() + self.log_lambda_term();
                for (k, &(s, a)) in path.iter().enumerate() {
                    l += pol.probs[k][s][a].ln() + rho * self.cost[k][s][a];
                    if k + 1 < self.horizon {
                        l += self.transition[s][a][path[k + 1].0].ln();
                    }
                }
                l
            })
            .collect()
    }

    /// Posterior over trajectories given the observed costs, from log weights
    /// so that long products do not underflow.
    fn posterior(&self, pol: &TabularPolicy) -> (Vec<f64>, Vec<f64>, f64) {
        let log_joint = self.log_policy_and_obs(pol);
        let z = log_sum_exp(&log_joint);
        let q = log_joint.iter().map(|l| (l - z).exp()).collect();
        (q, log_joint, z)
    }

    /// Exact decomposition `log p_φ(y) = l(φ, Q) + KL(Q || p_φ(·|y))` with
    /// `Q` the posterior under `φ_i`.
    pub fn em_bound(&self, phi: &TabularPolicy, phi_i: &TabularPolicy) -> Result<EmBound> {
        let (_, log_joint, l_obs) = self.posterior(phi);
        let (q, log_q_joint, z_i) = self.posterior(phi_i);
        let mut expected_complete = 0.0;
        let mut entropy = 0.0;
        for ((qi, lj), lq) in q.iter().zip(&log_joint).zip(&log_q_joint) {
            if *qi > 0.0 {
                expected_complete += qi * lj;
                entropy -= qi * (lq - z_i);
            }
        }
        let l_bound = expected_complete + entropy;
        Ok(EmBound {
            l_obs,
            l_bound,
            kl_gap: l_obs - l_bound,
            expected_complete,
            entropy,
        })
    }

    /// One EM recursion: posterior under `pol`, then the action frequencies of
    /// that posterior as the new policy.
    pub fn em_step(&self, pol: &TabularPolicy) -> Result<TabularPolicy> {
        let (q, _, _) = self.posterior(pol);
        let mut counts = vec![vec![vec![0.0; self.n_actions]; self.n_states]; self.horizon];
        for (path, qi) in self.outcomes().iter().zip(&q) {
            for (k, &(s, a)) in path.iter().enumerate() {
                counts[k][s][a] += qi;
            }
        }
        let mut next = pol.clone();
        for k in 0..self.horizon {
            for s in 0..self.n_states {
                let z: f64 = counts[k][s].iter().sum();
                if z > 0.0 {
                    next.probs[k][s] = counts[k][s].iter().map(|c| c / z).collect();
                }
            }
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteComparison {
    /// `T log λ + ρ·F` at the free-energy minimizer
    pub free_energy_route: f64,
    /// observed-cost log-likelihood at the EM fixed point
    pub em_route: f64,
    pub difference: f64,
    pub em_iterations: usize,
    /// smallest EM bound increase seen over all recursions
    pub min_bound_increase: f64,
}

/// Run EM from the uniform policy and from `restarts` random policies, and
/// compare the best fixed point with the free-energy minimizer.
pub fn compare_routes<R: Rng + ?Sized>(
    p: &DiscreteControlProblem,
    restarts: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<RouteComparison> {
    let fe = p.free_energy_minimizer();
    let sp = p.trajectory_space(&fe)?;
    let free_energy_route = p.log_lambda_term() + p.rho() * super::finite::free_energy(&sp)?;
    let mut best = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut min_increase = f64::INFINITY;
    for r in 0..=restarts {
        let mut pol = if r == 0 { TabularPolicy::uniform(p) } else { TabularPolicy::random(p, rng) };
        let mut ll = p.log_likelihood(&pol)?;
        for _ in 0..max_iters {
            let next = p.em_step(&pol)?;
            let before = p.em_bound(&pol, &pol)?.l_bound;
            let after = p.em_bound(&next, &pol)?.l_bound;
            min_increase = min_increase.min(after - before);
            let ll_next = p.log_likelihood(&next)?;
            iterations += 1;
            pol = next;
            let done = (ll_next - ll).abs() < 1e-15;
            ll = ll_next;
            if done {
                break;
            }
        }
        best = best.max(ll);
    }
    Ok(RouteComparison {
        free_energy_route,
        em_route: best,
        difference: (free_energy_route - best).abs(),
        em_iterations: iterations,
        min_bound_increase: min_increase,
    })
}
