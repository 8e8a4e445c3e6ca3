//! Posterior over the latent state sequence given the cost observations.

mod closed_loop;
mod kalman;
mod moments;
mod oracle;

pub use closed_loop::{build_closed_loop, ClosedLoopModel};
pub use kalman::{kalman_filter, rts_smoother, FilterOutput, StateMoments};
pub use moments::{e_step, policy_blocks, MomentBlocks, SmoothedMoments};
pub use oracle::{exact_posterior_oracle, joint_gaussian, ExactPosterior, JointGaussian, ORACLE_MAX_SIZE};
