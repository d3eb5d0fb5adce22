//! Matrix-free Krylov solvers and spectral utilities for covariance systems.

mod cg;
mod operator;
mod pcg;
mod spectral;

pub use cg::{cg_solve, cg_solve_op, CgConfig, CgState, SolveReport};
pub use operator::{CovarianceOperator, DenseOperator, LinearOperator, ShiftedOperator};
pub use pcg::{pcg_solve, pcg_solve_op};
pub use spectral::{
    condition_number, condition_sweep, lanczos_extremes, ConditionMode, SweepRow, DENSE_LIMIT,
};
