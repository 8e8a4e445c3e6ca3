//! Free-energy / relative-entropy duality on finite spaces and the exact EM
//! bound decomposition.

mod em_bound;
mod finite;
mod report;
mod surrogate;

pub use em_bound::{em_bound_decomposition, posterior_kl, EmBound};
pub use finite::{
    free_energy, gibbs_measure, legendre_gap, log_sum_exp, relative_entropy, variational_objective,
    FiniteMeasureSpace,
};
pub use report::{
    grid_oracle, verify_duality, DualityReport, DualitySettings, WorstCase, GAP_FLOOR, GIBBS_GAP_TOL, ROUTE_TOL,
};
pub use surrogate::{compare_routes, DiscreteControlProblem, RouteComparison, TabularPolicy, MAX_OUTCOMES};
