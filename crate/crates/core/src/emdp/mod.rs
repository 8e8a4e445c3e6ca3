//! Policy improvement by maximizing the expected complete-data likelihood.

mod normal;
mod policy;
mod surrogate;
mod update;

pub use normal::{
    assemble_normal_equation, backward_dp_update, hessian_certificate, solve_stationary, BackwardDpResult,
    HessianReport, NormalEquation,
};
pub use policy::GaussianPolicy;
pub use surrogate::{
    expected_initial_loglik, expected_posterior_cost, expected_residual, expected_stage_cost, mixture_likelihood,
    policy_surrogate, surrogate_term, tail_objective,
};
pub use update::{
    cost_safeguard, em_update, improvement_certificates, Certificates, EmUpdate, COST_TOL, LIKELIHOOD_TOL,
};
