use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::finite::{gibbs_measure, legendre_gap, variational_objective, FiniteMeasureSpace};
use super::surrogate::{compare_routes, DiscreteControlProblem, RouteComparison};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualitySettings {
    pub seed: u64,
    pub spaces: usize,
    pub measures_per_space: usize,
    pub max_atoms: usize,
    pub rho_range: (f64, f64),
    pub grid_points: usize,
    pub surrogate_instances: usize,
}

impl Default for DualitySettings {
    fn default() -> Self {
        DualitySettings {
            seed: 0,
            spaces: 100,
            measures_per_space: 1000,
            max_atoms: 1000,
            rho_range: (-5.0, -0.1),
            grid_points: 200,
            surrogate_instances: 5,
        }
    }
}

pub const GAP_FLOOR: f64 = -1e-12;
pub const GIBBS_GAP_TOL: f64 = 1e-10;
pub const ROUTE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub space: usize,
    pub atoms: usize,
    pub rho: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub settings: DualitySettings,
    pub min_gap: WorstCase,
    pub mean_gap: f64,
    pub max_gibbs_gap: WorstCase,
    /// distance between the grid extremum and the Gibbs weight on the first atom
    pub grid_error: f64,
    pub grid_resolution: f64,
    pub routes: Vec<RouteComparison>,
    pub gaps_ok: bool,
    pub gibbs_ok: bool,
    pub grid_ok: bool,
    pub routes_ok: bool,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.gaps_ok && self.gibbs_ok && self.grid_ok && self.routes_ok
    }
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize, zero_frac: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < zero_frac {
                0.0
            } else {
                -rng.random::<f64>().max(1e-300).ln()
            }
        })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        w[0] = 1.0;
    }
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

/// Grid search for the extremum of the variational objective over the
/// two-atom simplex, returning the distance of the best grid point from `Q*`.
pub fn grid_oracle(sp: &FiniteMeasureSpace, points: usize) -> Result<(f64, f64)> {
    let q_star = gibbs_measure(sp)?;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        let v = variational_objective(sp, &[t, 1.0 - t])?;
        // ρ < 0: the free energy is the infimum
        let score = if sp.rho < 0.0 { v } else { -v };
        if score < best.0 {
            best = (score, t);
        }
    }
    Ok(((best.1 - q_star[0]).abs(), 1.0 / (points - 1) as f64))
}

pub fn verify_duality(settings: &DualitySettings) -> Result<DualityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut min_gap = WorstCase {
        space: 0,
        atoms: 0,
        rho: 0.0,
        value: f64::INFINITY,
    };
    let mut max_gibbs = WorstCase {
        space: 0,
        atoms: 0,
        rho: 0.0,
        value: f64::NEG_INFINITY,
    };
    let mut gap_sum = 0.0;
    let mut gap_count = 0usize;
    for idx in 0..settings.spaces {
        let n = rng.random_range(2..=settings.max_atoms);
        let rho = rng.random_range(settings.rho_range.0..=settings.rho_range.1);
        let p = random_weights(&mut rng, n, 0.1);
        let j: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sp = FiniteMeasureSpace::new(p, j, rho)?;
        let q_star = gibbs_measure(&sp)?;
        let g = legendre_gap(&sp, &q_star)?;
        if g.abs() > max_gibbs.value {
            max_gibbs = WorstCase {
                space: idx,
                atoms: n,
                rho,
                value: g.abs(),
            };
        }
        for _ in 0..settings.measures_per_space {
            // restrict to the support of P so the gap stays finite
            let sparsity = rng.random::<f64>() * 0.9;
            let mut q = random_weights(&mut rng, n, sparsity);
            for (qi, pi) in q.iter_mut().zip(&sp.p) {
                if *pi == 0.0 {
                    *qi = 0.0;
                }
            }
            let z: f64 = q.iter().sum();
            if z == 0.0 {
                continue;
            }
            q.iter_mut().for_each(|v| *v /= z);
            let g = legendre_gap(&sp, &q)?;
            gap_sum += g;
            gap_count += 1;
            if g < min_gap.value {
                min_gap = WorstCase {
                    space: idx,
                    atoms: n,
                    rho,
                    value: g,
                };
            }
        }
    }
    let two_atom = FiniteMeasureSpace::new(vec![0.5, 0.5], vec![0.0, 1.0], -1.0)?;
    let (grid_error, grid_resolution) = grid_oracle(&two_atom, settings.grid_points)?;
    let mut routes = Vec::with_capacity(settings.surrogate_instances);
    for _ in 0..settings.surrogate_instances {
        let p = DiscreteControlProblem::random(2, 2, 4, 2.0, &mut rng)?;
        routes.push(compare_routes(&p, 4, 20_000, &mut rng)?);
    }
    Ok(DualityReport {
        settings: settings.clone(),
        gaps_ok: min_gap.value >= GAP_FLOOR,
        gibbs_ok: max_gibbs.value < GIBBS_GAP_TOL,
        grid_ok: grid_error <= grid_resolution,
        routes_ok: routes.iter().all(|r| r.difference <= ROUTE_TOL),
        min_gap,
        mean_gap: gap_sum / gap_count.max(1) as f64,
        max_gibbs_gap: max_gibbs,
        grid_error,
        grid_resolution,
        routes,
    })
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

impl fmt::Display for DualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<34} {:>14} {:>6}", "check", "value", "")?;
        writeln!(
            f,
            "{:<34} {:>14.3e} {:>6}",
            "min gap over random Q",
            self.min_gap.value,
            mark(self.gaps_ok)
        )?;
        writeln!(
            f,
            "{:<34} {:>14}",
            "  worst space (atoms, rho)",
            format!("{}, {:.3}", self.min_gap.atoms, self.min_gap.rho)
        )?;
        writeln!(f, "{:<34} {:>14.3e}", "mean gap", self.mean_gap)?;
        writeln!(
            f,
            "{:<34} {:>14.3e} {:>6}",
            "max |gap| at Gibbs measure",
            self.max_gibbs_gap.value,
            mark(self.gibbs_ok)
        )?;
        writeln!(
            f,
            "{:<34} {:>14.3e} {:>6}",
            "grid extremum distance",
            self.grid_error,
            mark(self.grid_ok)
        )?;
        for (i, r) in self.routes.iter().enumerate() {
            writeln!(
                f,
                "{:<34} {:>14.3e} {:>6}",
                format!("route difference, instance {i}"),
                r.difference,
                mark(r.difference <= ROUTE_TOL)
            )?;
        }
        Ok(())
    }
}
