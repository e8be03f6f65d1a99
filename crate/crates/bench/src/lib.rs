//! Shared fixtures for the benchmark harness.

use gfbsde::{CoefficientBundle, GParams, Grid1D};

pub fn params() -> GParams {
    GParams::new(0.8, 1.2).expect("valid interval")
}

pub fn heat_bundle(phi: &str) -> CoefficientBundle {
    CoefficientBundle::builder()
        .phi(phi)
        .build()
        .expect("valid bundle")
}

pub fn heat_grid(nx: usize, nt: usize) -> Grid1D {
    Grid1D::new(-6.0, 6.0, nx, 1.0, nt)
}
