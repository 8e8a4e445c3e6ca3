use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cost::{observed_cost, TaskCost};
use super::plant::{observe, step_with, NoiseFactors, PlantSpec};
use crate::emdp::GaussianPolicy;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// One simulated episode. States carry `T+1` entries, everything else `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    /// true states `x_1..x_{T+1}`
    pub x: Vec<Vector>,
    /// measured states `s_1..s_{T+1}`
    pub s: Vec<Vector>,
    pub u: Vec<Vector>,
    pub big_y: Vec<f64>,
    pub y: Vec<f64>,
}

impl Episode {
    pub fn total_cost(&self) -> f64 {
        self.big_y.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub episodes: Vec<Episode>,
}

/// Per-episode seed derived from the base seed; a splitmix64 finalizer keeps
/// neighbouring episodes decorrelated.
pub fn episode_seed(base: u64, m: u64) -> u64 {
    let mut z = base ^ m.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_episode(
    plant: &PlantSpec,
    factors: &NoiseFactors,
    policy: &GaussianPolicy,
    cost: &TaskCost,
    seed: u64,
) -> Result<Episode> {
    let t = plant.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(t + 1);
    let mut s = Vec::with_capacity(t + 1);
    let mut u = Vec::with_capacity(t);
    let mut big_y = Vec::with_capacity(t);
    let mut y = Vec::with_capacity(t);
    x.push(linalg::sample_gaussian(&plant.init_mean, &factors.init, &mut rng));
    for k in 0..t {
        let meas = observe(&x[k], plant.rho2, &mut rng);
        let a = linalg::sample_gaussian(&policy.mean_action(k, &meas), &policy.cov_sqrt[k], &mut rng);
        let c = cost.eval(&x[k], &a)?;
        let next = step_with(plant, &factors.process, &x[k], &a, &mut rng)?;
        s.push(meas);
        u.push(a);
        big_y.push(c);
        y.push(observed_cost(c)?);
        x.push(next);
    }
    s.push(observe(&x[t], plant.rho2, &mut rng));
    Ok(Episode { seed, x, s, u, big_y, y })
}

/// Simulate `m` episodes under `policy`. Actions are drawn around the policy
/// mean evaluated at the measured state; the recorded cost uses the true state.
pub fn rollout(
    plant: &PlantSpec,
    policy: &GaussianPolicy,
    cost: &TaskCost,
    m: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    plant.validate()?;
    if policy.horizon() != plant.horizon {
        return Err(Error::Dimension(format!(
            "policy horizon {} differs from plant horizon {}",
            policy.horizon(),
            plant.horizon
        )));
    }
    if policy.n_s() != plant.n_s || policy.n_a() != plant.n_a {
        return Err(Error::Dimension("policy dimensions differ from plant".into()));
    }
    let factors = NoiseFactors::new(plant);
    let episodes = (0..m as u64)
        .into_par_iter()
        .map(|i| run_episode(plant, &factors, policy, cost, episode_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBatch { episodes })
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.episodes.first().map_or(0, |e| e.u.len())
    }

    /// Sum of stage costs per episode.
    pub fn total_costs(&self) -> Vec<f64> {
        self.episodes.iter().map(Episode::total_cost).collect()
    }

    /// `sqrt(tr Cov(x_k))` over episodes for `k = 1..T+1`, on true states.
    pub fn state_spread(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..=self.horizon())
            .map(|k| {
                let xs: Vec<&Vector> = self.episodes.iter().map(|e| &e.x[k]).collect();
                let mean = xs.iter().fold(Vector::zeros(xs[0].len()), |acc, x| acc + *x) / n;
                let var: f64 = xs.iter().map(|x| (*x - &mean).norm_squared()).sum::<f64>() / n;
                var.sqrt()
            })
            .collect()
    }

    /// Per-coordinate mean and standard deviation of the true state at every step.
    pub fn state_band(&self, dim: usize) -> Vec<(f64, f64)> {
        let n = self.len() as f64;
        (0..=self.horizon())
            .map(|k| {
                let vals: Vec<f64> = self.episodes.iter().map(|e| e.x[k][dim]).collect();
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// All recorded action components, flattened over steps and episodes.
    pub fn action_values(&self, dim: usize) -> Vec<f64> {
        self.episodes
            .iter()
            .flat_map(|e| e.u.iter().map(move |a| a[dim]))
            .collect()
    }

    /// Measured-state sample mean and covariance at step `k`.
    pub fn measured_moments(&self, k: usize) -> (Vector, Mat) {
        let n = self.len() as f64;
        let dim = self.episodes[0].s[k].len();
        let mean = self.episodes.iter().fold(Vector::zeros(dim), |acc, e| acc + &e.s[k]) / n;
        let cov = self
            .episodes
            .iter()
            .fold(Mat::zeros(dim, dim), |acc, e| acc + linalg::outer(&(&e.s[k] - &mean), &(&e.s[k] - &mean)))
            / n;
        (mean, cov)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let Some(first) = self.episodes.first() else {
            return Err(Error::Empty("trajectory batch".into()));
        };
        let n_s = first.x[0].len();
        let n_a = first.u.first().map_or(0, |u| u.len());
        let mut header = vec!["m".to_string(), "k".to_string()];
        header.extend((0..n_s).map(|i| format!("x{i}")));
        header.extend((0..n_a).map(|i| format!("u{i}")));
        header.extend((0..n_s).map(|i| format!("x_next{i}")));
        header.extend((0..n_s).map(|i| format!("s{i}")));
        header.extend(["Y".to_string(), "y".to_string(), "seed".to_string()]);
        w.write_record(&header)?;
        for (m, e) in self.episodes.iter().enumerate() {
            for k in 0..e.u.len() {
                let mut row = vec![m.to_string(), (k + 1).to_string()];
                row.extend(e.x[k].iter().map(|v| v.to_string()));
                row.extend(e.u[k].iter().map(|v| v.to_string()));
                row.extend(e.x[k + 1].iter().map(|v| v.to_string()));
                row.extend(e.s[k].iter().map(|v| v.to_string()));
                row.push(e.big_y[k].to_string());
                row.push(e.y[k].to_string());
                row.push(e.seed.to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
