pub mod duality;
pub mod dynfit;
pub mod emdp;
pub mod env;
pub mod error;
pub mod ilqg;
pub mod inference;
pub mod linalg;
pub mod pipeline;
pub mod serde_mat;

pub use error::{Error, Result};
