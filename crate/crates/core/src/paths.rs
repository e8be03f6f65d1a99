//! Forward simulation under a volatility scenario and the read-off
//! `Y = u(t, X)`, `Z = u_x σ`, `dK = (½γA − G(A)) dt` from a decoupling field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::coeffs::Coefficients;
use crate::dsl::EvalError;
use crate::g::GParams;
use crate::pde::{DecouplingField, PdeError};
use crate::stats::{derive_seed, max_abs, mean, pairwise_sum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("scenario value {gamma} outside [{lo}, {hi}]")]
    Gamma { gamma: f64, lo: f64, hi: f64 },
    #[error("scenario breakpoints must be increasing inside ({start}, {end}), got {at}")]
    Breakpoint { at: f64, start: f64, end: f64 },
    #[error("scenario breakpoint t = {at} is not on the simulation grid (dt = {dt})")]
    Misaligned { at: f64, dt: f64 },
    #[error("need at least one path and one step")]
    Size,
    #[error("paths do not match the inputs: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Field(#[from] PdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Source of the quadratic-variation density `γ` along a path.
pub trait VolatilityPolicy: Sync {
    /// `γ` for the step starting at `t` in state `x`, where `a` is the
    /// generator argument `u_xx σ² + 2 u_x h + 2 g` there.
    fn gamma(&self, t: f64, x: f64, a: f64) -> f64;

    /// Times at which the policy may switch value, if it is open-loop.
    fn breakpoints(&self) -> &[f64] {
        &[]
    }
}

/// Piecewise-constant `γ_t`: `values[i]` on `[breaks[i-1], breaks[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityScenario {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl VolatilityScenario {
    pub fn constant(params: &GParams, gamma: f64) -> Result<Self, PathError> {
        Self::piecewise(params, (0.0, f64::INFINITY), vec![], vec![gamma])
    }

    /// `values.len() == breaks.len() + 1`, breaks strictly increasing inside `span`.
    pub fn piecewise(
        params: &GParams,
        span: (f64, f64),
        breaks: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self, PathError> {
        assert_eq!(values.len(), breaks.len() + 1, "one value per piece");
        let values = values
            .into_iter()
            .map(|gamma| {
                params.snap_gamma(gamma).ok_or(PathError::Gamma {
                    gamma,
                    lo: params.gamma_lo(),
                    hi: params.gamma_hi(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut prev = span.0;
        for &at in &breaks {
            if !(at > prev && at < span.1) {
                return Err(PathError::Breakpoint {
                    at,
                    start: span.0,
                    end: span.1,
                });
            }
            prev = at;
        }
        Ok(VolatilityScenario { breaks, values })
    }

    /// `pieces` equal pieces on `[t_start, t_end]` with values drawn
    /// uniformly from `Γ`.
    pub fn random(params: &GParams, t_start: f64, t_end: f64, pieces: usize, rng: &mut impl Rng) -> Self {
        let pieces = pieces.max(1);
        let breaks = (1..pieces)
            .map(|i| t_start + (t_end - t_start) * i as f64 / pieces as f64)
            .collect();
        let values = (0..pieces)
            .map(|_| rng.gen_range(params.gamma_lo()..=params.gamma_hi()))
            .collect();
        VolatilityScenario { breaks, values }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.breaks.partition_point(|&b| b <= t);
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl VolatilityPolicy for VolatilityScenario {
    fn gamma(&self, t: f64, _x: f64, _a: f64) -> f64 {
        self.value_at(t)
    }

    fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }
}

/// Feedback policy `γ*(t, x) = argmax_γ ½γA(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub params: GParams,
}

impl VolatilityPolicy for WorstCase {
    fn gamma(&self, _t: f64, _x: f64, a: f64) -> f64 {
        self.params.g_argmax(a)
    }
}

impl WorstCase {
    /// Evaluate `γ*(t, x)` through the field.
    pub fn at<C: Coefficients + ?Sized>(
        &self,
        c: &C,
        field: &DecouplingField,
        t: f64,
        x: f64,
    ) -> Result<f64, PathError> {
        let local = LocalState::read(c, field, t, x)?;
        Ok(self.params.g_argmax(local.a))
    }
}

/// The worst-case feedback policy for the bundle and its decoupling field.
pub fn worst_case_scenario<C: Coefficients + ?Sized>(
    _c: &C,
    field: &DecouplingField,
    params: &GParams,
) -> Result<WorstCase, PathError> {
    field.grid.validate()?;
    Ok(WorstCase { params: *params })
}

/// Field and coefficient values at one point of a path.
#[derive(Debug, Clone, Copy)]
struct LocalState {
    y: f64,
    z: f64,
    sigma: f64,
    b: f64,
    h: f64,
    a: f64,
}

impl LocalState {
    fn read<C: Coefficients + ?Sized>(
        c: &C,
        field: &DecouplingField,
        t: f64,
        x: f64,
    ) -> Result<Self, PathError> {
        let d = field.derivatives(t, x)?;
        let sigma = c.sigma(t, x, d.u)?;
        let b = c.b(t, x, d.u)?;
        let h = c.h(t, x, d.u)?;
        let z = d.ux * sigma;
        let g = c.g(t, x, d.u, z)?;
        let a = d.uxx * sigma * sigma + 2.0 * d.ux * h + 2.0 * g;
        Ok(LocalState {
            y: d.u,
            z,
            sigma,
            b,
            h,
            a,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub x0: f64,
    /// Standard normal increments instead of `±1`.
    pub gaussian: bool,
}

impl SimOptions {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimOptions {
            n_paths,
            n_steps,
            seed,
            x0: 0.0,
            gaussian: false,
        }
    }

    pub fn x0(self, x0: f64) -> Self {
        SimOptions { x0, ..self }
    }

    pub fn gaussian(self, gaussian: bool) -> Self {
        SimOptions { gaussian, ..self }
    }
}

/// One simulated path of `(X, Y, Z, K)`.
///
/// Arrays hold `len + 1` states; `noise[k]` and `gamma[k]` drive step `k → k+1`.
/// A path leaving the field's hull stops at its last interior state.
#[derive(Debug, Clone, PartialEq)]
pub struct PathQuadruple {
    pub id: usize,
    pub seed: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub k: Vec<f64>,
    pub noise: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Step index at which the path left the hull.
    pub exited: Option<usize>,
}

impl PathQuadruple {
    pub fn completed(&self) -> bool {
        self.exited.is_none()
    }

    pub fn k_terminal(&self) -> f64 {
        *self.k.last().expect("non-empty path")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub times: Vec<f64>,
    pub paths: Vec<PathQuadruple>,
    pub seed: u64,
}

impl PathSet {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn completed(&self) -> impl Iterator<Item = &PathQuadruple> {
        self.paths.iter().filter(|p| p.completed())
    }

    /// `(path id, step)` for every path that left the hull.
    pub fn exits(&self) -> Vec<(usize, usize)> {
        self.paths
            .iter()
            .filter_map(|p| p.exited.map(|s| (p.id, s)))
            .collect()
    }

    /// Terminal `K` of every completed path.
    pub fn k_terminal(&self) -> Vec<f64> {
        self.completed().map(|p| p.k_terminal()).collect()
    }
}

/// Simulate `n_paths` paths on `n_steps` equal steps over the field's time span.
pub fn simulate<C: Coefficients + ?Sized>(
    c: &C,
    field: &DecouplingField,
    params: &GParams,
    policy: &dyn VolatilityPolicy,
    opts: SimOptions,
) -> Result<PathSet, PathError> {
    if opts.n_paths == 0 || opts.n_steps == 0 {
        return Err(PathError::Size);
    }
    let grid = field.grid;
    let dt = grid.horizon() / opts.n_steps as f64;
    for &at in policy.breakpoints() {
        let steps = (at - grid.t_start) / dt;
        if at > grid.t_start && at < grid.t_end && (steps - steps.round()).abs() > 1e-9 {
            return Err(PathError::Misaligned { at, dt });
        }
    }
    let times: Vec<f64> = (0..=opts.n_steps)
        .map(|k| {
            if k == opts.n_steps {
                grid.t_end
            } else {
                grid.t_start + grid.horizon() * k as f64 / opts.n_steps as f64
            }
        })
        .collect();
    let paths = (0..opts.n_paths)
        .into_par_iter()
        .map(|id| simulate_one(c, field, params, policy, &opts, &times, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PathSet {
        times,
        paths,
        seed: opts.seed,
    })
}

fn simulate_one<C: Coefficients + ?Sized>(
    c: &C,
    field: &DecouplingField,
    params: &GParams,
    policy: &dyn VolatilityPolicy,
    opts: &SimOptions,
    times: &[f64],
    id: usize,
) -> Result<PathQuadruple, PathError> {
    let seed = derive_seed(opts.seed, "simulate", id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = opts.n_steps;
    let mut path = PathQuadruple {
        id,
        seed,
        x: Vec::with_capacity(n + 1),
        y: Vec::with_capacity(n + 1),
        z: Vec::with_capacity(n + 1),
        k: Vec::with_capacity(n + 1),
        noise: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        exited: None,
    };
    let mut x = opts.x0;
    let mut k_acc = 0.0;
    for step in 0..=n {
        let t = times[step];
        let local = match LocalState::read(c, field, t, x) {
            Ok(l) => l,
            Err(PathError::Field(PdeError::OutOfHull { .. })) => {
                path.exited = Some(step);
                path.noise.truncate(step.saturating_sub(1));
                path.gamma.truncate(path.noise.len());
                break;
            }
            Err(e) => return Err(e),
        };
        path.x.push(x);
        path.y.push(local.y);
        path.z.push(local.z);
        path.k.push(k_acc);
        if step == n {
            break;
        }
        let dt = times[step + 1] - t;
        let xi = if opts.gaussian {
            rng.sample::<f64, _>(StandardNormal)
        } else if rng.gen::<bool>() {
            1.0
        } else {
            -1.0
        };
        let gamma = policy.gamma(t, x, local.a);
        // ½γA − G(A) = ½(γ − γ*)A, which is exactly ≤ 0 in floating point
        let gamma_star = params.g_argmax(local.a);
        k_acc += 0.5 * (gamma - gamma_star) * local.a * dt;
        x += local.b * dt + local.h * gamma * dt + local.sigma * (gamma * dt).sqrt() * xi;
        path.noise.push(xi);
        path.gamma.push(gamma);
    }
    Ok(path)
}

/// Residuals of the simulated quadruples against the equations they solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `max |ΔY_k − (−f dt − g γ dt + Z √(γ dt) ξ + ΔK)|`.
    pub backward_max: f64,
    pub backward_mean: f64,
    /// `max |ΔX_k − (b dt + h γ dt + σ √(γ dt) ξ)|`.
    pub forward_max: f64,
    /// `max |Y_k − u(t_k, X_k)|`.
    pub field_identity: f64,
    /// `max |Y_N − Φ(X_N)|` over completed paths.
    pub terminal: f64,
    /// `sup_{s<t} mean |X_t − X_s|² / (t − s)` over a time subgrid.
    pub continuity: f64,
    /// Largest single `K` increment.
    pub k_increment_max: f64,
    pub completed: usize,
    pub exited: usize,
}

/// Recompute every step of every path and report residuals.
pub fn check_solution<C: Coefficients + ?Sized>(
    c: &C,
    field: &DecouplingField,
    paths: &PathSet,
) -> Result<ResidualReport, PathError> {
    if paths.times.first() != Some(&field.grid.t_start) || paths.times.last() != Some(&field.grid.t_end) {
        return Err(PathError::Mismatch("time span differs from the field".into()));
    }
    let per_path = paths
        .paths
        .par_iter()
        .map(|p| path_residuals(c, field, &paths.times, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut backward_max: f64 = 0.0;
    let mut forward_max: f64 = 0.0;
    let mut identity: f64 = 0.0;
    let mut terminal: f64 = 0.0;
    let mut k_inc: f64 = f64::NEG_INFINITY;
    let mut sums = Vec::with_capacity(per_path.len());
    let mut count = 0usize;
    for (p, r) in paths.paths.iter().zip(&per_path) {
        backward_max = backward_max.max(r.backward_max);
        forward_max = forward_max.max(r.forward_max);
        identity = identity.max(r.identity);
        k_inc = k_inc.max(r.k_inc);
        sums.push(r.backward_sum);
        count += r.steps;
        if p.completed() {
            terminal = terminal.max(r.terminal);
        }
    }
    let backward_mean = if count > 0 {
        pairwise_sum(&sums) / count as f64
    } else {
        0.0
    };
    Ok(ResidualReport {
        backward_max,
        backward_mean,
        forward_max,
        field_identity: identity,
        terminal,
        continuity: continuity_statistic(paths),
        k_increment_max: if k_inc.is_finite() { k_inc } else { 0.0 },
        completed: paths.completed().count(),
        exited: paths.paths.len() - paths.completed().count(),
    })
}

struct PathResiduals {
    backward_max: f64,
    backward_sum: f64,
    forward_max: f64,
    identity: f64,
    terminal: f64,
    k_inc: f64,
    steps: usize,
}

fn path_residuals<C: Coefficients + ?Sized>(
    c: &C,
    field: &DecouplingField,
    times: &[f64],
    p: &PathQuadruple,
) -> Result<PathResiduals, PathError> {
    let mut r = PathResiduals {
        backward_max: 0.0,
        backward_sum: 0.0,
        forward_max: 0.0,
        identity: 0.0,
        terminal: 0.0,
        k_inc: f64::NEG_INFINITY,
        steps: 0,
    };
    let states = p.x.len();
    for k in 0..states {
        let t = times[k];
        let u = field.derivatives(t, p.x[k])?.u;
        r.identity = r.identity.max((p.y[k] - u).abs());
        if k + 1 >= states || k >= p.noise.len() {
            continue;
        }
        let dt = times[k + 1] - t;
        let local = LocalState::read(c, field, t, p.x[k])?;
        let (x, y, z) = (p.x[k], p.y[k], p.z[k]);
        let gamma = p.gamma[k];
        let db = (gamma * dt).sqrt() * p.noise[k];
        let dk = p.k[k + 1] - p.k[k];
        let rhs = -c.f(t, x, y, z)? * dt - c.g(t, x, y, z)? * gamma * dt + z * db + dk;
        let res = (p.y[k + 1] - y - rhs).abs();
        r.backward_max = r.backward_max.max(res);
        r.backward_sum += res;
        let fwd = p.x[k + 1] - x - (local.b * dt + local.h * gamma * dt + local.sigma * db);
        r.forward_max = r.forward_max.max(fwd.abs());
        r.k_inc = r.k_inc.max(dk);
        r.steps += 1;
    }
    if p.completed() {
        let xn = *p.x.last().unwrap();
        r.terminal = (p.y.last().unwrap() - c.phi(xn)?).abs();
    }
    Ok(r)
}

/// `sup_{s<t} mean_paths |X_t − X_s|² / (t − s)` on at most 21 time points.
pub fn continuity_statistic(paths: &PathSet) -> f64 {
    let n = paths.times.len() - 1;
    let stride = n.div_ceil(20).max(1);
    let mut idx: Vec<usize> = (0..=n).step_by(stride).collect();
    if *idx.last().unwrap() != n {
        idx.push(n);
    }
    let complete: Vec<&PathQuadruple> = paths.completed().collect();
    if complete.is_empty() {
        return f64::NAN;
    }
    let mut sup: f64 = 0.0;
    for (a, &s) in idx.iter().enumerate() {
        for &t in &idx[a + 1..] {
            let sq: Vec<f64> = complete.iter().map(|p| (p.x[t] - p.x[s]).powi(2)).collect();
            sup = sup.max(mean(&sq) / (paths.times[t] - paths.times[s]));
        }
    }
    sup
}

/// Largest increment of `K` along any path.
pub fn max_k_increment(paths: &PathSet) -> f64 {
    paths
        .paths
        .iter()
        .flat_map(|p| p.k.windows(2).map(|w| w[1] - w[0]))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Terminal `max |Y_N − Φ(X_N)|` tolerance for a field of mesh `dx`:
/// linear interpolation error `dx² max|Φ''| / 8`.
pub fn terminal_tolerance(dx: f64, phi_second_max: f64) -> f64 {
    dx * dx * phi_second_max / 8.0
}

/// Largest `|Y|` seen, a cheap sanity statistic.
pub fn y_sup(paths: &PathSet) -> f64 {
    max_abs(paths.paths.iter().flat_map(|p| p.y.iter().copied()))
}
