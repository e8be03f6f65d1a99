use super::field::column_derivatives;
use super::grid::{probe_cfl, value_band, CflBound};
use super::{DecouplingField, Grid1D, PdeError};
use crate::coeffs::Coefficients;
use crate::g::GParams;

/// Summary of a PDE solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub dt: f64,
    /// A-priori stability bound from probing the coefficients.
    pub cfl: CflBound,
    pub m0: f64,
    pub lip: f64,
    /// `max_j |u(T, x_j) − Φ(x_j)|`.
    pub terminal_residual: f64,
    /// `max |u_xx|` over the last few levels before `T`.
    pub uxx_near_terminal: f64,
    /// `max |u_xx|` over the remaining levels.
    pub uxx_interior: f64,
}

/// Terminal samples `Φ(x_j)`.
pub fn terminal_samples<C: Coefficients + ?Sized>(c: &C, grid: &Grid1D) -> Result<Vec<f64>, PdeError> {
    (0..grid.nx)
        .map(|j| Ok(c.phi(grid.x(j))?))
        .collect()
}

/// Solve the decoupling PDE backward from `u(T) = Φ`.
pub fn solve_pde<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
) -> Result<DecouplingField, PdeError> {
    solve_pde_report(c, params, grid).map(|(field, _)| field)
}

/// As [`solve_pde`], also returning diagnostics.
pub fn solve_pde_report<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
) -> Result<(DecouplingField, SolveReport), PdeError> {
    grid.validate()?;
    let terminal = terminal_samples(c, grid)?;
    let field = solve_from_terminal(c, params, grid, &terminal)?;
    let report = report(&field, &terminal, params, c, grid)?;
    Ok((field, report))
}

/// Solve backward on `grid` from arbitrary terminal samples at `grid.t_end`.
///
/// One step, with all differences and coefficients taken at level `k+1`:
///
/// ```text
/// u_k = u_{k+1} + dt [u_x b + G(u_xx σ² + 2 u_x h + 2 g) + f]
/// ```
pub fn solve_from_terminal<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    terminal: &[f64],
) -> Result<DecouplingField, PdeError> {
    grid.validate()?;
    assert_eq!(terminal.len(), grid.nx);
    let band = terminal.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + grid.horizon() * (1.0 + terminal.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let cfl = probe_cfl(c, params, grid, band)?;
    let dt = grid.dt();
    if !cfl.admits(dt) {
        return Err(PdeError::Cfl {
            dt,
            dt_max: cfl.dt_max,
            sigma2_max: cfl.sigma2_max,
            b_max: cfl.b_max,
            h_max: cfl.h_max,
        });
    }
    let dx = grid.dx();
    let mut levels = vec![Vec::new(); grid.nt + 1];
    levels[grid.nt] = terminal.to_vec();
    for k in (0..grid.nt).rev() {
        let t_next = grid.t(k + 1);
        let next = &levels[k + 1];
        let mut out = Vec::with_capacity(grid.nx);
        let (mut s2, mut bm, mut hm) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..grid.nx {
            let x = grid.x(j);
            let d = column_derivatives(next, j, dx);
            let s = c.sigma(t_next, x, d.u)?;
            let b = c.b(t_next, x, d.u)?;
            let h = c.h(t_next, x, d.u)?;
            let z = d.ux * s;
            let g = c.g(t_next, x, d.u, z)?;
            let f = c.f(t_next, x, d.u, z)?;
            s2 = s2.max(s * s);
            bm = bm.max(b.abs());
            hm = hm.max(h.abs());
            let a = d.uxx * s * s + 2.0 * d.ux * h + 2.0 * g;
            let v = d.u + dt * (d.ux * b + params.g_eval(a) + f);
            if !v.is_finite() {
                return Err(PdeError::NonFinite { t: grid.t(k), x });
            }
            out.push(v);
        }
        let actual = CflBound::from_magnitudes(params, dx, s2, bm, hm);
        if !actual.admits(dt) {
            return Err(PdeError::Cfl {
                dt,
                dt_max: actual.dt_max,
                sigma2_max: s2,
                b_max: bm,
                h_max: hm,
            });
        }
        levels[k] = out;
    }
    Ok(DecouplingField::from_levels(*grid, levels))
}

fn report<C: Coefficients + ?Sized>(
    field: &DecouplingField,
    terminal: &[f64],
    params: &GParams,
    c: &C,
    grid: &Grid1D,
) -> Result<SolveReport, PdeError> {
    let terminal_residual = field
        .level(grid.nt)
        .iter()
        .zip(terminal)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let near = grid.nt.min(5);
    let mut uxx_near_terminal: f64 = 0.0;
    let mut uxx_interior: f64 = 0.0;
    for k in 0..=grid.nt {
        let m = (1..grid.nx - 1)
            .map(|j| field.node_derivatives(k, j).uxx.abs())
            .fold(0.0f64, f64::max);
        if k + near >= grid.nt {
            uxx_near_terminal = uxx_near_terminal.max(m);
        } else {
            uxx_interior = uxx_interior.max(m);
        }
    }
    let band = value_band(c, grid, 1.0)?;
    Ok(SolveReport {
        dt: grid.dt(),
        cfl: probe_cfl(c, params, grid, band)?,
        m0: field.m0,
        lip: field.lip,
        terminal_residual,
        uxx_near_terminal,
        uxx_interior,
    })
}
