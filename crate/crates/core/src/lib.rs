//! Federated CP tensor factorization.
//!
//! Hospitals hold horizontally partitioned shards of a sparse count tensor
//! (patients × features × …). A coordinator and the hospitals jointly fit a
//! CP model with consensus ADMM, exchanging only feature-mode factors and
//! multipliers; patient-mode factors and raw entries stay local. Feature
//! vocabularies are aligned beforehand with a blinded set-polynomial protocol.

pub mod admm;
pub mod align;
pub mod baselines;
pub mod data;
pub mod error;
pub mod federation;
mod linalg;
pub mod report;
pub mod tensor;

pub use admm::AdmmConfig;
pub use error::{Error, Result};
pub use tensor::{CpModel, FactorMatrix, SparseTensor};
