//! Numerical laboratory for fully coupled forward-backward SDEs driven by
//! G-Brownian motion in one dimension.
//!
//! The pieces, bottom-up:
//!
//! * [`g`]: the G-function and its volatility interval.
//! * [`dsl`] and [`coeffs`]: coefficient expressions and bundles.
//! * [`lattice`]: sublinear expectations on a trinomial lattice.
//! * [`pde`]: the fully nonlinear decoupling PDE.
//! * [`mollifier`]: the compactly supported smoothing kernel.
//! * [`paths`]: forward simulation and the `(X, Y, Z, K)` read-off.
//! * [`picard`]: small-horizon contraction and time stitching.
//! * [`dependence`]: the coefficient-dependence harness.
//! * [`config`], [`validate`] and [`report`]: run configuration and the cross-check suite.

pub mod coeffs;
pub mod config;
pub mod dependence;
pub mod dsl;
pub mod g;
pub mod lattice;
pub mod mollifier;
pub mod paths;
pub mod picard;
pub mod report;
pub mod pde;
pub mod stats;
pub mod validate;

pub use coeffs::{CoefficientBundle, Coefficients, Constants};
pub use g::GParams;
pub use pde::{DecouplingField, Grid1D};
