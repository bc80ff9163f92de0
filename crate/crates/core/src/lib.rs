//! Reserves, path simulation and contract modifications for multi-state
//! insurance contracts driven by a state process `X` and a mode process `J`.

// `!(a > b)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod modifications;
pub mod montecarlo;
pub mod parallel;
pub mod piecewise;
pub mod quadrature;
pub mod reserve_linear;
pub mod reserve_nonlinear;
pub mod simulate;
mod thiele;
pub mod value;

pub use config::load_contract;
pub use error::{Error, Result};
pub use model::{validate_assumptions, ContractSpec, ModelKind, ValidationReport};
pub use reserve_linear::{
    pathwise_bsde_residual, solve_thiele_markov, solve_thiele_semimarkov, sum_at_risk, SumAtRisk,
};
pub use simulate::{simulate_path, simulate_paths, Path};
pub use value::{ReserveLookup, ValueFunction};
