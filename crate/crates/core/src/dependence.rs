//! Paired runs of two coefficient bundles: the coefficient-difference
//! functional `I_α` and the solution distance it controls.
//!
//! Both systems are solved for their decoupling fields, then simulated with
//! the same noise under every scenario of a finite family. The sublinear
//! expectation of each statistic is the maximum of its path mean over the
//! family.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::coeffs::Coefficients;
use crate::dsl::EvalError;
use crate::g::GParams;
use crate::paths::{simulate, PathError, PathSet, SimOptions, VolatilityPolicy, VolatilityScenario, WorstCase};
use crate::pde::{terminal_samples, DecouplingField, Grid1D};
use crate::picard::{picard_solve, PicardError, PicardOptions};
use crate::stats::{derive_seed, mean};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DependenceError {
    #[error("exponent 2 + alpha = {exponent} must lie in (2, {beta}) for moment exponent beta = {beta}")]
    Exponent { exponent: f64, beta: f64 },
    #[error("horizon outside the small-time regime: {0}")]
    Regime(PicardError),
    #[error("ladder needs at least two positive perturbation sizes")]
    Ladder,
    #[error(transparent)]
    Picard(PicardError),
    #[error(transparent)]
    Paths(#[from] PathError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<PicardError> for DependenceError {
    fn from(e: PicardError) -> Self {
        match e {
            PicardError::NonContraction { .. } => DependenceError::Regime(e),
            other => DependenceError::Picard(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceConfig {
    pub alpha: f64,
    pub x0: f64,
    pub x0_prime: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Random piecewise-constant scenarios added to the family.
    pub random_scenarios: usize,
    /// Pieces per random scenario.
    pub pieces: usize,
}

impl DependenceConfig {
    pub fn new(alpha: f64, n_paths: usize, n_steps: usize, seed: u64) -> Self {
        DependenceConfig {
            alpha,
            x0: 0.0,
            x0_prime: 0.0,
            n_paths,
            n_steps,
            seed,
            random_scenarios: 8,
            pieces: 4,
        }
    }

    pub fn exponent(&self) -> f64 {
        2.0 + self.alpha
    }

    /// `2 < 2 + α < min(β, β')`.
    pub fn validate(&self, beta: f64, beta_prime: f64) -> Result<(), DependenceError> {
        let beta = beta.min(beta_prime);
        let exponent = self.exponent();
        if !(self.alpha > 0.0 && exponent < beta) {
            return Err(DependenceError::Exponent { exponent, beta });
        }
        Ok(())
    }
}

/// `γ*`, constant `σ̲²`, constant `σ̄²`, then the random scenarios.
pub fn scenario_family(
    params: &GParams,
    grid: &Grid1D,
    cfg: &DependenceConfig,
) -> Result<Vec<Box<dyn VolatilityPolicy>>, DependenceError> {
    let mut family: Vec<Box<dyn VolatilityPolicy>> = vec![
        Box::new(WorstCase { params: *params }),
        Box::new(VolatilityScenario::constant(params, params.gamma_lo())?),
        Box::new(VolatilityScenario::constant(params, params.gamma_hi())?),
    ];
    // breakpoints must sit on the simulation grid
    let pieces = (1..=cfg.pieces.max(1))
        .rev()
        .find(|p| cfg.n_steps.is_multiple_of(*p))
        .unwrap_or(1);
    for i in 0..cfg.random_scenarios {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "scenario", i as u64));
        family.push(Box::new(VolatilityScenario::random(
            params,
            grid.t_start,
            grid.t_end,
            pieces,
            &mut rng,
        )));
    }
    Ok(family)
}

/// Decoupling field of one system by Picard iteration on `grid`.
pub fn solve_system<C: Coefficients + ?Sized>(
    c: &C,
    params: &GParams,
    grid: &Grid1D,
    lipschitz: f64,
    opts: &PicardOptions,
) -> Result<DecouplingField, DependenceError> {
    let terminal = terminal_samples(c, grid).map_err(PicardError::from)?;
    let (field, _) = picard_solve(c, params, grid, &terminal, lipschitz, opts)?;
    Ok(field)
}

/// One path set per scenario, all sharing the master seed.
pub fn run_system<C: Coefficients + ?Sized>(
    c: &C,
    field: &DecouplingField,
    params: &GParams,
    family: &[Box<dyn VolatilityPolicy>],
    cfg: &DependenceConfig,
    x0: f64,
) -> Result<Vec<PathSet>, DependenceError> {
    let opts = SimOptions::new(cfg.n_paths, cfg.n_steps, cfg.seed).x0(x0);
    family
        .iter()
        .map(|policy| Ok(simulate(c, field, params, policy.as_ref(), opts)?))
        .collect()
}

/// Terms of `I_α`, each already maximized over the scenario family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IAlpha {
    pub initial: f64,
    /// `∫ |b̂|^p + |ĥ|^p + |σ̂|^p ds`.
    pub forward: f64,
    pub terminal: f64,
    /// `∫ |f̂|^p + |ĝ|^p ds`.
    pub backward: f64,
}

impl IAlpha {
    pub fn total(&self) -> f64 {
        self.initial + self.forward + self.terminal + self.backward
    }
}

/// `I_α` along the paths of the first system.
pub fn i_alpha<C1, C2>(
    c: &C1,
    c_prime: &C2,
    runs: &[PathSet],
    cfg: &DependenceConfig,
    exponent: f64,
) -> Result<IAlpha, DependenceError>
where
    C1: Coefficients + ?Sized,
    C2: Coefficients + ?Sized,
{
    let pw = |v: f64| v.abs().powf(exponent);
    let mut out = IAlpha {
        initial: pw(cfg.x0 - cfg.x0_prime),
        forward: 0.0,
        terminal: 0.0,
        backward: 0.0,
    };
    for set in runs {
        let per_path = set
            .paths
            .par_iter()
            .filter(|p| p.completed())
            .map(|p| -> Result<[f64; 3], EvalError> {
                let mut fwd = 0.0;
                let mut bwd = 0.0;
                for k in 0..p.x.len() - 1 {
                    let dt = set.times[k + 1] - set.times[k];
                    let (t, x, y, z) = (set.times[k], p.x[k], p.y[k], p.z[k]);
                    fwd += (pw(c.b(t, x, y)? - c_prime.b(t, x, y)?)
                        + pw(c.h(t, x, y)? - c_prime.h(t, x, y)?)
                        + pw(c.sigma(t, x, y)? - c_prime.sigma(t, x, y)?))
                        * dt;
                    bwd += (pw(c.f(t, x, y, z)? - c_prime.f(t, x, y, z)?)
                        + pw(c.g(t, x, y, z)? - c_prime.g(t, x, y, z)?))
                        * dt;
                }
                let xn = *p.x.last().unwrap();
                let term = pw(c.phi(xn)? - c_prime.phi(xn)?);
                Ok([fwd, term, bwd])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let column = |i: usize| mean(&per_path.iter().map(|v| v[i]).collect::<Vec<_>>());
        out.forward = out.forward.max(column(0));
        out.terminal = out.terminal.max(column(1));
        out.backward = out.backward.max(column(2));
    }
    Ok(out)
}

/// Solution distance, each term maximized over the scenario family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionGap {
    /// `Ê sup_t |X̂_t|²`.
    pub x_sup: f64,
    /// `Ê sup_t |Ŷ_t|²`.
    pub y_sup: f64,
    /// `Ê ∫ |Ẑ_t|² dt`.
    pub z_int: f64,
    /// `Ê |K̂_T|²`.
    pub k_terminal: f64,
}

impl SolutionGap {
    pub fn total(&self) -> f64 {
        self.x_sup + self.y_sup + self.z_int + self.k_terminal
    }
}

/// Pairwise distance between two runs over the same family and noise.
pub fn solution_gap(first: &[PathSet], second: &[PathSet]) -> SolutionGap {
    let mut gap = SolutionGap {
        x_sup: 0.0,
        y_sup: 0.0,
        z_int: 0.0,
        k_terminal: 0.0,
    };
    for (a, b) in first.iter().zip(second) {
        let per_path: Vec<[f64; 4]> = a
            .paths
            .iter()
            .zip(&b.paths)
            .filter(|(p, q)| p.completed() && q.completed())
            .map(|(p, q)| {
                let sup = |u: &[f64], v: &[f64]| {
                    u.iter().zip(v).map(|(s, r)| (s - r) * (s - r)).fold(0.0, f64::max)
                };
                let z: f64 = (0..p.z.len() - 1)
                    .map(|k| (p.z[k] - q.z[k]).powi(2) * (a.times[k + 1] - a.times[k]))
                    .sum();
                [
                    sup(&p.x, &q.x),
                    sup(&p.y, &q.y),
                    z,
                    (p.k_terminal() - q.k_terminal()).powi(2),
                ]
            })
            .collect();
        let column = |i: usize| mean(&per_path.iter().map(|v| v[i]).collect::<Vec<_>>());
        gap.x_sup = gap.x_sup.max(column(0));
        gap.y_sup = gap.y_sup.max(column(1));
        gap.z_int = gap.z_int.max(column(2));
        gap.k_terminal = gap.k_terminal.max(column(3));
    }
    gap
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub lhs: SolutionGap,
    pub i0: IAlpha,
    pub i_alpha: IAlpha,
    /// `I₀ + I_α + I_α^{1/(2+α)}`.
    pub bound: f64,
    /// `LHS / bound`, undefined when the bound vanishes.
    pub ratio: Option<f64>,
    /// Both runs produced bitwise-identical paths.
    pub exact_match: bool,
}

/// Solve and simulate both systems and compare them.
#[allow(clippy::too_many_arguments)]
pub fn dependence_check<C1, C2>(
    c: &C1,
    c_prime: &C2,
    params: &GParams,
    grid: &Grid1D,
    lipschitz: f64,
    betas: (f64, f64),
    cfg: &DependenceConfig,
    opts: &PicardOptions,
) -> Result<DependenceReport, DependenceError>
where
    C1: Coefficients + ?Sized,
    C2: Coefficients + ?Sized,
{
    cfg.validate(betas.0, betas.1)?;
    let family = scenario_family(params, grid, cfg)?;
    let field = solve_system(c, params, grid, lipschitz, opts)?;
    let field_prime = solve_system(c_prime, params, grid, lipschitz, opts)?;
    let first = run_system(c, &field, params, &family, cfg, cfg.x0)?;
    let second = run_system(c_prime, &field_prime, params, &family, cfg, cfg.x0_prime)?;
    let lhs = solution_gap(&first, &second);
    let i0 = i_alpha(c, c_prime, &first, cfg, 2.0)?;
    let ia = i_alpha(c, c_prime, &first, cfg, cfg.exponent())?;
    let bound = i0.total() + ia.total() + ia.total().powf(1.0 / cfg.exponent());
    Ok(DependenceReport {
        lhs,
        i0,
        i_alpha: ia,
        bound,
        ratio: (bound > 0.0).then(|| lhs.total() / bound),
        exact_match: first == second,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderReport {
    /// `(ε, report)` in ladder order.
    pub points: Vec<(f64, DependenceReport)>,
    /// `max R / min R` across the ladder.
    pub spread: f64,
    /// LHS strictly decreasing along the ladder.
    pub decreasing: bool,
}

impl LadderReport {
    pub fn pass(&self, max_spread: f64) -> bool {
        self.decreasing && self.spread <= max_spread
    }
}

/// Run [`dependence_check`] for `c` against `perturb(ε)` for each `ε`, which
/// must be given in decreasing order.
#[allow(clippy::too_many_arguments)]
pub fn ladder_check<C1, C2, F>(
    c: &C1,
    perturb: F,
    params: &GParams,
    grid: &Grid1D,
    lipschitz: f64,
    beta: f64,
    ladder: &[f64],
    cfg: &DependenceConfig,
    opts: &PicardOptions,
) -> Result<LadderReport, DependenceError>
where
    C1: Coefficients + ?Sized,
    C2: Coefficients,
    F: Fn(f64) -> C2 + Sync,
{
    if ladder.len() < 2 || ladder.iter().any(|e| e.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(DependenceError::Ladder);
    }
    let points = ladder
        .par_iter()
        .map(|&eps| {
            let other = perturb(eps);
            dependence_check(c, &other, params, grid, lipschitz, (beta, beta), cfg, opts).map(|r| (eps, r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ratios: Vec<f64> = points.iter().filter_map(|(_, r)| r.ratio).collect();
    let spread = if ratios.len() == points.len() {
        let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    } else {
        f64::INFINITY
    };
    let decreasing = points
        .windows(2)
        .all(|w| w[1].1.lhs.total() < w[0].1.lhs.total());
    Ok(LadderReport {
        points,
        spread,
        decreasing,
    })
}
