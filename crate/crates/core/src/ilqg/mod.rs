//! iLQG baseline and the KL-constrained refinement around a reference policy.

mod kl;
mod lqr;
mod quadratic;

pub use kl::{
    kl_constrained_update, kl_divergence, trajectory_kl, DualStep, KlBudget, KlSchedule, KlUpdate, KL_SLACK,
};
pub use lqr::{
    expected_model_cost, ilqg_step, lqr_backward_pass, maxent_objective, policy_entropy, state_marginals,
};
pub use quadratic::{quadratize, QuadraticQModel};
