//! Score matching and generalized score matching estimation for models with
//! intractable normalizing constants, with sandwich inference, hypothesis
//! tests, exact samplers and a replication harness.

pub mod cmp;
pub mod continuous;
pub mod data;
pub mod error;
pub mod inference;
pub mod numkit;
pub mod objective;
pub mod ordinal;
pub mod params;
pub mod samplers;
pub mod study;
pub mod vmf;

pub use data::{Dataset, Responses};
pub use error::{Error, Result};
pub use numkit::Matrix;
pub use objective::{FitOptions, FitResult, Method, RowObjective};
pub use params::ParamVec;
