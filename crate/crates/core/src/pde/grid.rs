use serde::{Deserialize, Serialize};

use super::PdeError;
use crate::coeffs::Coefficients;
use crate::g::GParams;

/// Uniform space-time grid `[x_min, x_max] × [t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub nt: usize,
}

impl Grid1D {
    /// Grid on `[0, horizon]`.
    pub fn new(x_min: f64, x_max: f64, nx: usize, horizon: f64, nt: usize) -> Self {
        Grid1D {
            x_min,
            x_max,
            nx,
            t_start: 0.0,
            t_end: horizon,
            nt,
        }
    }

    /// Same spatial layout on `[t_start, t_end]` with `nt` steps.
    pub fn with_time(&self, t_start: f64, t_end: f64, nt: usize) -> Self {
        Grid1D {
            t_start,
            t_end,
            nt,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let bad = |msg: String| Err(PdeError::Grid(msg));
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return bad(format!("need x_min < x_max, got [{}, {}]", self.x_min, self.x_max));
        }
        if self.nx < 3 {
            return bad(format!("need nx >= 3, got {}", self.nx));
        }
        if self.nt < 1 {
            return bad("need nt >= 1".into());
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return bad(format!(
                "need t_start < t_end, got [{}, {}]",
                self.t_start, self.t_end
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon() / self.nt as f64
    }

    /// `x_j`, computed so that symmetric domains give exactly symmetric nodes.
    pub fn x(&self, j: usize) -> f64 {
        let last = self.nx - 1;
        if j == 0 {
            return self.x_min;
        }
        if j == last {
            return self.x_max;
        }
        let center = 0.5 * (self.x_min + self.x_max);
        let half = 0.5 * (self.x_max - self.x_min);
        let m = 2 * j as i64 - last as i64;
        center + half * m as f64 / last as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.nt {
            return self.t_end;
        }
        self.t_start + self.horizon() * k as f64 / self.nt as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }
}

/// Coefficient magnitudes entering the explicit-scheme stability bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflBound {
    pub sigma2_max: f64,
    pub b_max: f64,
    pub h_max: f64,
    /// Largest admissible time step.
    pub dt_max: f64,
}

impl CflBound {
    pub fn from_magnitudes(params: &GParams, dx: f64, sigma2_max: f64, b_max: f64, h_max: f64) -> Self {
        let gh = params.gamma_hi();
        let rate = gh * sigma2_max / (dx * dx) + b_max / dx + 2.0 * h_max * gh / dx;
        CflBound {
            sigma2_max,
            b_max,
            h_max,
            dt_max: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY },
        }
    }

    pub fn admits(&self, dt: f64) -> bool {
        dt <= self.dt_max * (1.0 + 1e-12)
    }
}

/// Rough a-priori band for `|u|`: terminal sup plus one linear-growth increment.
pub fn value_band<C: Coefficients + ?Sized>(
    c: &C,
    grid: &Grid1D,
    lipschitz: f64,
) -> Result<f64, PdeError> {
    let mut phi_max: f64 = 0.0;
    for j in 0..grid.nx {
        phi_max = phi_max.max(c.phi(grid.x(j))?.abs());
    }
    Ok(phi_max + grid.horizon() * lipschitz * (1.0 + phi_max))
}

/// Probe `σ², |b|, |h|` over grid columns, a few time levels and `|y| ≤ band`.
pub fn probe_cfl<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    band: f64,
) -> Result<CflBound, PdeError> {
    grid.validate()?;
    let nt_probe = grid.nt.min(10);
    let mut s2: f64 = 0.0;
    let mut bm: f64 = 0.0;
    let mut hm: f64 = 0.0;
    for it in 0..=nt_probe {
        let t = grid.t_start + grid.horizon() * it as f64 / nt_probe as f64;
        for j in 0..grid.nx {
            let x = grid.x(j);
            for iy in 0..=8 {
                let y = -band + 2.0 * band * iy as f64 / 8.0;
                let s = c.sigma(t, x, y)?;
                s2 = s2.max(s * s);
                bm = bm.max(c.b(t, x, y)?.abs());
                hm = hm.max(c.h(t, x, y)?.abs());
            }
        }
    }
    Ok(CflBound::from_magnitudes(params, grid.dx(), s2, bm, hm))
}

/// Smallest `nt` whose step satisfies the probed bound with a safety factor.
pub fn cfl_steps<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    lipschitz: f64,
    safety: f64,
) -> Result<usize, PdeError> {
    let probe_grid = Grid1D { nt: grid.nt.max(1), ..*grid };
    let band = value_band(c, &probe_grid, lipschitz)?;
    let bound = probe_cfl(c, params, &probe_grid, band)?;
    let nt = (grid.horizon() / (safety * bound.dt_max)).ceil();
    Ok((nt as usize).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientBundle;

    #[test]
    fn symmetric_nodes() {
        let g = Grid1D::new(-6.0, 6.0, 241, 1.0, 10);
        assert_eq!(g.x(120), 0.0);
        for j in 0..241 {
            assert_eq!(g.x(j), -g.x(240 - j));
        }
        assert_eq!(g.t(10), 1.0);
        assert!((g.dx() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(Grid1D::new(1.0, -1.0, 10, 1.0, 10).validate().is_err());
        assert!(Grid1D::new(-1.0, 1.0, 2, 1.0, 10).validate().is_err());
        assert!(Grid1D::new(-1.0, 1.0, 3, 1.0, 0).validate().is_err());
        assert!(Grid1D::new(-1.0, 1.0, 3, 1.0, 1).validate().is_ok());
    }

    #[test]
    fn heat_cfl() {
        let p = GParams::new(0.8, 1.2).unwrap();
        let c = CoefficientBundle::builder().phi("x^2").build().unwrap();
        let g = Grid1D::new(-6.0, 6.0, 241, 1.0, 100);
        let bound = probe_cfl(&c, &p, &g, 1.0).unwrap();
        assert!((bound.dt_max - 0.0025 / 1.44).abs() < 1e-15);
        let nt = cfl_steps(&c, &p, &g, 1.0, 1.0).unwrap();
        assert!(1.0 / nt as f64 <= bound.dt_max);
        assert!(1.0 / (nt - 1) as f64 > bound.dt_max);
    }
}
