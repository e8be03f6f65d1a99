//! Explicit monotone finite differences for the fully nonlinear decoupling PDE
//!
//! ```text
//! u_t + u_x b(t,x,u) + G(u_xx σ²(t,x,u) + 2 u_x h(t,x,u) + 2 g(t,x,u,u_x σ)) + f(t,x,u,u_x σ) = 0,
//! u(T, x) = Φ(x)
//! ```
//!
//! on a truncated interval with linear extrapolation (`u_xx = 0`) at both ends.

mod field;
mod grid;
mod solver;

use thiserror::Error;

use crate::dsl::EvalError;

pub use field::{DecouplingField, Derivatives, Transform};
pub use grid::{cfl_steps, probe_cfl, value_band, CflBound, Grid1D};
pub use solver::{solve_from_terminal, solve_pde, solve_pde_report, terminal_samples, SolveReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error(
        "CFL violation: dt = {dt:.6e} exceeds {dt_max:.6e} (sup sigma^2 = {sigma2_max:.4}, sup |b| = {b_max:.4}, sup |h| = {h_max:.4})"
    )]
    Cfl {
        dt: f64,
        dt_max: f64,
        sigma2_max: f64,
        b_max: f64,
        h_max: f64,
    },
    #[error("non-finite value at t = {t}, x = {x}")]
    NonFinite { t: f64, x: f64 },
    #[error("point (t = {t}, x = {x}) lies outside the field")]
    OutOfHull { t: f64, x: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}
