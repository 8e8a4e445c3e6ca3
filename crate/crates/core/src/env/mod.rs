//! Simulated plants, the quadratic stage cost and the exponentiated cost
//! observation channel.

mod cost;
mod plant;
mod rollout;

pub use cost::{cost_density, instantaneous_cost, observed_cost, CostModel, ReachTerm, TaskCost};
pub use plant::{observe, step, ArmParams, PlantSpec, StepFn};
pub use rollout::{episode_seed, rollout, Episode, TrajectoryBatch};

use crate::linalg::{Mat, Vector};

/// Planar point mass driven by force: state `(p, v)` in two dimensions,
/// `p' = p + dt·v`, `v' = v + dt·u`.
pub fn double_integrator_2d(
    horizon: usize,
    dt: f64,
    process_var: f64,
    rho2: f64,
    init_mean: Vector,
    init_var: f64,
) -> PlantSpec {
    let mut a = Mat::identity(4, 4);
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    let mut b = Mat::zeros(4, 2);
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    PlantSpec {
        n_s: 4,
        n_a: 2,
        horizon,
        step_fn: StepFn::Linear { a, b },
        process_noise_cov: Mat::identity(4, 4) * process_var,
        rho2,
        init_mean,
        init_cov: Mat::identity(4, 4) * init_var,
    }
}

pub fn two_link_arm(
    horizon: usize,
    params: ArmParams,
    process_var: f64,
    rho2: f64,
    init_mean: Vector,
    init_var: f64,
) -> PlantSpec {
    PlantSpec {
        n_s: 4,
        n_a: 2,
        horizon,
        step_fn: StepFn::TwoLinkArm(params),
        process_noise_cov: Mat::identity(4, 4) * process_var,
        rho2,
        init_mean,
        init_cov: Mat::identity(4, 4) * init_var,
    }
}
