//! Direct and domain-decomposition solvers built around the parallel
//! dichotomy algorithm for block-tridiagonal systems with many right-hand
//! sides.

pub mod acoustic;
pub mod block;
pub mod dichotomy;
pub mod error;
pub mod harness;
pub mod io;
pub mod schur;

pub use block::{BlockLU, BlockTriMatrix, BlockVector, DenseBlock, Matrix, ThomasFactorization};
pub use dichotomy::{build_partition_tree, plan_build, plan_solve, DichotomyPlan, PartitionTree};
pub use error::{Error, Result};
