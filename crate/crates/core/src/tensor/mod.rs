//! Sparse and dense tensor representations and the kernels built on them.

mod io;
pub mod kernels;
mod matrix;
mod model;
mod sparse;

pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file};
pub use kernels::{khatri_rao, matricize, mttkrp, pi_product, SparseMatrix};
pub use matrix::FactorMatrix;
pub use model::{
    objective, orthogonality_penalty, rmse, rmse_partitioned, rmse_with, squared_error, CpModel,
    RmseScope,
};
pub use sparse::{linear_index, SparseTensor};
