//! End-to-end orchestration: baseline, EM recursions, KL-constrained
//! refinement, evaluation, persistence and plots.

mod compare;
mod config;
mod persist;
mod plots;
mod record;
mod run;

pub use compare::{compare_runs, Comparison, CostCurve};
pub use config::{
    BaselineConfig, CostConfig, EmConfig, PlantConfig, ReachConfig, RefinementConfig, RunConfig, SwitchRule,
};
pub use persist::{load_record, persist_run};
pub use plots::{emit_comparison_plots, emit_plots};
pub use record::{
    BoundCheck, Dispersion, EmRecord, Evaluation, FitSummary, IterationRecord, Phase, RefinementRecord, RunRecord,
    StageFailure, TaskFingerprint,
};
pub use run::{run_pipeline, run_pipeline_with, RunOutput, Timing};
