//! Small-horizon fixed-point iteration on Markovian fields and time stitching.
//!
//! One application of the map takes a guess `y(t, x)` for the decoupling
//! field, freezes the forward coefficients at `b, h, σ(t, x, y(t, x))`, and
//! solves the backward equation on the grid by dynamic programming:
//!
//! ```text
//! Y_k(x) = max_γ [ p₊ Y_{k+1}(x+dx) + p₀ Y_{k+1}(x) + p₋ Y_{k+1}(x−dx) + dt γ g ] + dt f
//! p± = dt (γσ²/(2dx²) ± (b + γh)/(2dx)),   p₀ = 1 − dt γσ²/dx²
//! ```
//!
//! with `f, g` evaluated at the new value `Y_k(x)` (an inner fixed point) and
//! `Z = σ (Y_{k+1}(x+dx) − Y_{k+1}(x−dx)) / (2dx)`.

use thiserror::Error;

use crate::coeffs::Coefficients;
use crate::dsl::EvalError;
use crate::g::GParams;
use crate::pde::{cfl_steps, CflBound, DecouplingField, Grid1D, PdeError};
use crate::stats::median;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PicardError {
    #[error(
        "no contraction on [{t_start}, {t_end}]: step ratio {ratio:.3} >= 1 for 5 iterations; bisect the horizon"
    )]
    NonContraction { t_start: f64, t_end: f64, ratio: f64 },
    #[error("inner fixed point did not converge at t = {t}, x = {x} after {iterations} iterations")]
    Inner { t: f64, x: f64, iterations: usize },
    #[error("cell {index} of the partition failed: {source}")]
    Cell {
        index: usize,
        #[source]
        source: Box<PicardError>,
    },
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Initial guess; defaults to the terminal data held constant in time.
    pub initial: Option<DecouplingField>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            max_iter: 60,
            tol: 1e-10,
            initial: None,
        }
    }
}

/// Iteration trace of a Picard solve.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    /// `d_k = max |y_{k+1} − y_k|` over the grid.
    pub history: Vec<f64>,
    /// Index of the first `d_k ≤ tol`, or the number of applications if never reached.
    pub iter: usize,
    pub converged: bool,
    /// Median of successive ratios `d_{k+1} / d_k`.
    pub ratio: f64,
    /// `max |Φ| + T L (1 + max|y| + max|Z|)`.
    pub growth_bound: f64,
    pub bound_ok: bool,
}

const INNER_TOL: f64 = 1e-12;
const INNER_MAX: usize = 200;

/// Apply the map once: backward sweep with forward coefficients frozen at `guess`.
pub fn picard_map<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    guess: &DecouplingField,
    terminal: &[f64],
) -> Result<DecouplingField, PicardError> {
    let grid = guess.grid;
    let dx = grid.dx();
    let dt = grid.dt();
    let n = grid.nx;
    let gammas = [params.gamma_lo(), params.gamma_hi()];
    let mut levels = vec![Vec::new(); grid.nt + 1];
    levels[grid.nt] = terminal.to_vec();
    for k in (0..grid.nt).rev() {
        let t = grid.t(k + 1);
        let next = &levels[k + 1];
        let frozen = guess.level(k + 1);
        let mut out = Vec::with_capacity(n);
        let (mut s2, mut bm, mut hm) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..n {
            let x = grid.x(j);
            let yf = frozen[j];
            let sigma = c.sigma(t, x, yf)?;
            let b = c.b(t, x, yf)?;
            let h = c.h(t, x, yf)?;
            s2 = s2.max(sigma * sigma);
            bm = bm.max(b.abs());
            hm = hm.max(h.abs());
            let (slope, interior) = if j == 0 {
                ((next[1] - next[0]) / dx, false)
            } else if j == n - 1 {
                ((next[n - 1] - next[n - 2]) / dx, false)
            } else {
                ((next[j + 1] - next[j - 1]) / (2.0 * dx), true)
            };
            let z = slope * sigma;
            let expect = |gamma: f64| {
                let drift = b + gamma * h;
                if interior {
                    let diff = dt * gamma * sigma * sigma / (2.0 * dx * dx);
                    let adv = dt * drift / (2.0 * dx);
                    (diff + adv) * next[j + 1] + (1.0 - 2.0 * diff) * next[j] + (diff - adv) * next[j - 1]
                } else {
                    next[j] + dt * drift * slope
                }
            };
            let base = [expect(gammas[0]), expect(gammas[1])];
            let update = |y: f64| -> Result<f64, EvalError> {
                let g = c.g(t, x, y, z)?;
                let best = (base[0] + dt * gammas[0] * g).max(base[1] + dt * gammas[1] * g);
                Ok(best + dt * c.f(t, x, y, z)?)
            };
            let v = inner_fixed_point(update, next[j]).map_err(|e| match e {
                InnerFailure::Eval(e) => PicardError::Eval(e),
                InnerFailure::Stalled(iterations) => PicardError::Inner { t: grid.t(k), x, iterations },
            })?;
            if !v.is_finite() {
                return Err(PdeError::NonFinite { t: grid.t(k), x }.into());
            }
            out.push(v);
        }
        let bound = CflBound::from_magnitudes(params, dx, s2, bm, hm);
        if !bound.admits(dt) {
            return Err(PdeError::Cfl {
                dt,
                dt_max: bound.dt_max,
                sigma2_max: s2,
                b_max: bm,
                h_max: hm,
            }
            .into());
        }
        levels[k] = out;
    }
    Ok(DecouplingField::from_levels(grid, levels))
}

enum InnerFailure {
    Eval(EvalError),
    Stalled(usize),
}

/// Solve `y = update(y)`; switches to half-damped steps once the residual
/// changes sign without shrinking.
fn inner_fixed_point(
    update: impl Fn(f64) -> Result<f64, EvalError>,
    start: f64,
) -> Result<f64, InnerFailure> {
    let mut y = start;
    let mut prev_step = f64::INFINITY;
    let mut prev_sign = 0.0;
    let mut damping = 1.0;
    for _ in 0..INNER_MAX {
        let next = update(y).map_err(InnerFailure::Eval)?;
        let step = next - y;
        if step.abs() <= INNER_TOL * (1.0 + y.abs()) {
            return Ok(next);
        }
        if step.signum() == -prev_sign && step.abs() >= prev_step {
            damping = 0.5;
        }
        prev_sign = step.signum();
        prev_step = step.abs();
        y += damping * step;
    }
    Err(InnerFailure::Stalled(INNER_MAX))
}

/// Fixed-point iteration of [`picard_map`] on `grid` from `terminal` at `grid.t_end`.
pub fn picard_solve<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    terminal: &[f64],
    lipschitz: f64,
    opts: &PicardOptions,
) -> Result<(DecouplingField, IterationState), PicardError> {
    grid.validate()?;
    assert_eq!(terminal.len(), grid.nx, "terminal samples must match the grid");
    let mut y = match &opts.initial {
        Some(f) => {
            assert_eq!(f.grid, *grid, "initial guess must live on the solve grid");
            f.clone()
        }
        None => DecouplingField::from_levels(*grid, vec![terminal.to_vec(); grid.nt + 1]),
    };
    let mut history = Vec::new();
    let mut converged = false;
    let mut iter = opts.max_iter;
    for k in 0..opts.max_iter.max(1) {
        let next = picard_map(c, params, &y, terminal)?;
        let d = next
            .levels()
            .iter()
            .flatten()
            .zip(y.levels().iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        history.push(d);
        y = next;
        if d <= opts.tol {
            converged = true;
            iter = k;
            break;
        }
        let ratios = successive_ratios(&history);
        if ratios.len() >= 5 && ratios[ratios.len() - 5..].iter().all(|r| *r >= 1.0) {
            return Err(PicardError::NonContraction {
                t_start: grid.t_start,
                t_end: grid.t_end,
                ratio: median(&ratios[ratios.len() - 5..]),
            });
        }
    }
    let ratios = successive_ratios(&history);
    let ratio = if ratios.is_empty() { 0.0 } else { median(&ratios) };
    let phi_max = terminal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let z_max = (0..=grid.nt)
        .flat_map(|k| (0..grid.nx).map(move |j| (k, j)))
        .map(|(k, j)| {
            let x = grid.x(j);
            let d = y.node_derivatives(k, j);
            c.sigma(grid.t(k), x, d.u).map(|s| (d.ux * s).abs())
        })
        .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))?;
    let growth_bound = phi_max + grid.horizon() * lipschitz * (1.0 + y.m0 + z_max);
    let state = IterationState {
        history,
        iter,
        converged,
        ratio,
        growth_bound,
        bound_ok: y.m0 <= growth_bound,
    };
    Ok((y, state))
}

fn successive_ratios(history: &[f64]) -> Vec<f64> {
    history
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect()
}

/// Grid on `[t_start, t_end]` with the spatial layout of `grid` and a
/// time step satisfying the probed stability bound with safety `0.9`.
pub fn grid_for_span<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    lipschitz: f64,
    t_start: f64,
    t_end: f64,
) -> Result<Grid1D, PicardError> {
    let span = grid.with_time(t_start, t_end, 1);
    let nt = cfl_steps(c, params, &span, lipschitz, 0.9)?;
    Ok(span.with_time(t_start, t_end, nt))
}

/// Result of [`estimate_delta`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub delta: f64,
    /// `(horizon, ratio)` for every probe, in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

/// Largest horizon in `(0, t_max]` whose Picard ratio over 10 iterations is
/// at most `½`, by bisection with `bisections` halvings.
pub fn estimate_delta<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    lipschitz: f64,
    t_max: f64,
    bisections: usize,
) -> Result<DeltaEstimate, PicardError> {
    let mut trace = Vec::new();
    let mut probe = |horizon: f64| -> Result<bool, PicardError> {
        let g = grid_for_span(c, params, grid, lipschitz, 0.0, horizon)?;
        let terminal = crate::pde::terminal_samples(c, &g)?;
        let opts = PicardOptions {
            max_iter: 10,
            tol: 0.0,
            initial: None,
        };
        let ratio = match picard_solve(c, params, &g, &terminal, lipschitz, &opts) {
            Ok((_, state)) => state.ratio,
            Err(PicardError::NonContraction { ratio, .. }) => ratio,
            Err(e) => return Err(e),
        };
        trace.push((horizon, ratio));
        Ok(ratio <= 0.5)
    };
    if probe(t_max)? {
        return Ok(DeltaEstimate { delta: t_max, trace });
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..bisections {
        let mid = 0.5 * (lo + hi);
        if probe(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DeltaEstimate { delta: lo, trace })
}

/// Uniform partition of `[0, horizon]` into cells of length at most `delta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub breakpoints: Vec<f64>,
    pub delta0: f64,
}

impl Partition {
    pub fn uniform(horizon: f64, delta0: f64) -> Result<Self, PicardError> {
        if !(horizon > 0.0 && delta0 > 0.0 && horizon.is_finite() && delta0.is_finite()) {
            return Err(PicardError::Partition(format!(
                "need positive horizon and mesh, got T = {horizon}, delta0 = {delta0}"
            )));
        }
        let cells = ((horizon / delta0) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let breakpoints = (0..=cells)
            .map(|i| if i == cells { horizon } else { horizon * i as f64 / cells as f64 })
            .collect();
        Ok(Partition { breakpoints, delta0 })
    }

    pub fn cells(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub t_start: f64,
    pub t_end: f64,
    pub state: IterationState,
    /// Empirical spatial Lipschitz constant of the cell's field.
    pub lip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchResult {
    pub field: DecouplingField,
    pub partition: Partition,
    /// Cells in time order.
    pub cells: Vec<CellReport>,
    /// `max |u^i(t_seam) − u^{i+1}(t_seam)|` over seams.
    pub seam_gap: f64,
}

/// Solve cell by cell backward over a uniform partition, gluing each cell's
/// initial level to the next cell's terminal data.
pub fn stitch_solve<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    horizon: f64,
    delta0: f64,
    grid: &Grid1D,
    lipschitz: f64,
    opts: &PicardOptions,
) -> Result<StitchResult, PicardError> {
    let partition = Partition::uniform(horizon, delta0)?;
    let n_cells = partition.cells();
    // one step size for every cell so the cells concatenate onto one grid
    let whole = grid_for_span(c, params, grid, lipschitz, 0.0, horizon)?;
    let per_cell = whole.nt.div_ceil(n_cells).max(1);
    let full = whole.with_time(0.0, horizon, per_cell * n_cells);
    let mut terminal = crate::pde::terminal_samples(c, &full)?;
    let mut fields: Vec<DecouplingField> = Vec::with_capacity(n_cells);
    let mut cells = Vec::with_capacity(n_cells);
    for i in (0..n_cells).rev() {
        let (a, b) = (partition.breakpoints[i], partition.breakpoints[i + 1]);
        let cell_grid = grid.with_time(a, b, per_cell);
        let cell_opts = PicardOptions {
            initial: None,
            ..opts.clone()
        };
        let (field, state) = picard_solve(c, params, &cell_grid, &terminal, lipschitz, &cell_opts)
            .map_err(|e| PicardError::Cell {
                index: i,
                source: Box::new(e),
            })?;
        terminal = field.level(0).to_vec();
        cells.push(CellReport {
            t_start: a,
            t_end: b,
            lip: field.lip,
            state,
        });
        fields.push(field);
    }
    fields.reverse();
    cells.reverse();
    let mut seam_gap: f64 = 0.0;
    for w in fields.windows(2) {
        let end = w[0].level(w[0].grid.nt);
        let start = w[1].level(0);
        for (p, q) in end.iter().zip(start) {
            seam_gap = seam_gap.max((p - q).abs());
        }
    }
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(full.nt + 1);
    for (i, f) in fields.iter().enumerate() {
        let skip = usize::from(i > 0);
        levels.extend(f.levels().iter().skip(skip).cloned());
    }
    Ok(StitchResult {
        field: DecouplingField::from_levels(full, levels),
        partition,
        cells,
        seam_gap,
    })
}
