//! The cross-check suite behind the `validate` command.
//!
//! Checks run in a fixed order and every number in the report is a pure
//! function of the configuration, so reruns are byte-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coeffs::{CoefficientBundle, Coefficients};
use crate::config::RunConfig;
use crate::dependence::{dependence_check, ladder_check, DependenceConfig, DependenceError};
use crate::g::GParams;
use crate::lattice;
use crate::mollifier::{lipschitz_quotient, mollify, MollifierKernel};
use crate::paths::{check_solution, max_k_increment, simulate, PathError, SimOptions, VolatilityScenario, WorstCase};
use crate::pde::{solve_from_terminal, solve_pde, solve_pde_report, terminal_samples, DecouplingField, Grid1D, PdeError};
use crate::picard::{grid_for_span, picard_solve, stitch_solve, PicardError, PicardOptions};
use crate::report::Sidecar;
use crate::stats::{derive_seed, mean_and_se};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub details: Sidecar,
    pub message: Option<String>,
}

/// Why the suite stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Abort {
    /// A stage could not run (for example a stability violation).
    Failed,
    /// Non-finite values appeared.
    BlowUp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub aborted: Option<Abort>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.aborted.is_none() && self.checks.iter().all(|c| c.pass)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }

    pub fn blow_up(&self) -> bool {
        self.aborted == Some(Abort::BlowUp)
    }

    /// One `[name]` table per check, in run order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!("[{}]\n", c.name));
            out.push_str(&format!("status = \"{}\"\n", if c.pass { "pass" } else { "fail" }));
            if let Some(m) = &c.message {
                out.push_str(&format!("message = {m:?}\n"));
            }
            out.push_str(&c.details.render());
            out.push('\n');
        }
        out.push_str(&format!(
            "[summary]\nchecks = {}\nfailed = {}\naborted = {}\nstatus = \"{}\"\n",
            self.checks.len(),
            self.failing().len(),
            self.aborted.is_some(),
            if self.all_pass() { "pass" } else { "fail" }
        ));
        out
    }
}

/// Names of the checks in run order.
pub const CHECKS: [&str; 11] = [
    "g-core",
    "lattice-moments",
    "solve-pde",
    "feynman-kac",
    "manufactured",
    "k-invariants",
    "picard-pde",
    "stitch-pde",
    "mollifier",
    "dependence",
    "assumptions",
];

enum Failure {
    Message(String),
    BlowUp(String),
}

impl From<PdeError> for Failure {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::NonFinite { .. } => Failure::BlowUp(e.to_string()),
            other => Failure::Message(other.to_string()),
        }
    }
}

impl From<PicardError> for Failure {
    fn from(e: PicardError) -> Self {
        match e {
            PicardError::Pde(p) => p.into(),
            other => Failure::Message(other.to_string()),
        }
    }
}

impl From<PathError> for Failure {
    fn from(e: PathError) -> Self {
        match e {
            PathError::Field(p) => p.into(),
            other => Failure::Message(other.to_string()),
        }
    }
}

impl From<DependenceError> for Failure {
    fn from(e: DependenceError) -> Self {
        match e {
            DependenceError::Picard(p) => p.into(),
            DependenceError::Paths(p) => p.into(),
            other => Failure::Message(other.to_string()),
        }
    }
}

impl From<lattice::LatticeError> for Failure {
    fn from(e: lattice::LatticeError) -> Self {
        match e {
            lattice::LatticeError::NonFinite { .. } => Failure::BlowUp(e.to_string()),
            other => Failure::Message(other.to_string()),
        }
    }
}

impl From<crate::dsl::EvalError> for Failure {
    fn from(e: crate::dsl::EvalError) -> Self {
        Failure::Message(e.to_string())
    }
}

impl From<crate::mollifier::MollifyError> for Failure {
    fn from(e: crate::mollifier::MollifyError) -> Self {
        Failure::Message(e.to_string())
    }
}

type CheckOut = Result<(bool, Sidecar), Failure>;

/// Run every check in order; stops after a failed `solve-pde` stage.
pub fn validate(cfg: &RunConfig) -> ValidationReport {
    validate_with(cfg, |_, _| {})
}

/// As [`validate`], calling `progress(name, seconds)` after each check.
pub fn validate_with(cfg: &RunConfig, mut progress: impl FnMut(&'static str, f64)) -> ValidationReport {
    let mut checks = Vec::new();
    let mut aborted = None;
    let mut field: Option<DecouplingField> = None;
    for name in CHECKS {
        let start = std::time::Instant::now();
        let out = match name {
            "g-core" => check_g_core(cfg),
            "lattice-moments" => check_lattice(cfg),
            "solve-pde" => check_solve(cfg).map(|(f, pass, d)| {
                field = Some(f);
                (pass, d)
            }),
            "feynman-kac" => check_feynman_kac(cfg),
            "manufactured" => check_manufactured(),
            "k-invariants" => check_k(cfg, field.as_ref().expect("solve stage ran")),
            "picard-pde" => check_picard(cfg),
            "stitch-pde" => check_stitch(cfg),
            "mollifier" => check_mollifier(),
            "dependence" => check_dependence(cfg),
            "assumptions" => check_assumptions(cfg),
            _ => unreachable!(),
        };
        progress(name, start.elapsed().as_secs_f64());
        let (result, abort) = match out {
            Ok((pass, details)) => (
                CheckResult {
                    name,
                    pass,
                    details,
                    message: None,
                },
                None,
            ),
            Err(Failure::Message(m)) => (
                CheckResult {
                    name,
                    pass: false,
                    details: Sidecar::new(),
                    message: Some(m),
                },
                (name == "solve-pde").then_some(Abort::Failed),
            ),
            Err(Failure::BlowUp(m)) => (
                CheckResult {
                    name,
                    pass: false,
                    details: Sidecar::new(),
                    message: Some(m),
                },
                Some(Abort::BlowUp),
            ),
        };
        checks.push(result);
        if abort.is_some() {
            aborted = abort;
            break;
        }
    }
    ValidationReport { checks, aborted }
}

fn check_g_core(cfg: &RunConfig) -> CheckOut {
    let p = cfg.g;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.run.seed, "g-core", 0));
    let (glo, ghi) = (p.gamma_lo(), p.gamma_hi());
    let mut formula_err: f64 = 0.0;
    let mut argmax_err: f64 = 0.0;
    for _ in 0..1_000_000 {
        let a: f64 = rng.gen_range(-1e3..1e3);
        let reference = 0.5 * ghi * a.max(0.0) - 0.5 * glo * (-a).max(0.0);
        let g = p.g_eval(a);
        formula_err = formula_err.max((g - reference).abs() / reference.abs().max(f64::MIN_POSITIVE));
        argmax_err = argmax_err.max((0.5 * p.g_argmax(a) * a - g).abs());
    }
    let mut mono_exact = 0u32;
    let mut mono_violations = 0u32;
    let mut subadd_violations = 0u32;
    for _ in 0..100_000 {
        let x: f64 = rng.gen_range(-1e3..1e3);
        let y: f64 = rng.gen_range(-1e3..1e3);
        let (a, b) = if x >= y { (x, y) } else { (y, x) };
        let (ga, gb, floor) = (p.g_eval(a), p.g_eval(b), 0.5 * glo * (a - b));
        if ga - gb < floor {
            mono_exact += 1;
            // on a, b < 0 both sides agree in exact arithmetic
            if ga - gb < floor - 4.0 * f64::EPSILON * (ga.abs() + gb.abs()) {
                mono_violations += 1;
            }
        }
        let slack = 4.0 * f64::EPSILON * (p.g_eval(x).abs() + p.g_eval(y).abs());
        if p.g_eval(x + y) > p.g_eval(x) + p.g_eval(y) + slack {
            subadd_violations += 1;
        }
    }
    let mut d = Sidecar::new();
    d.real("formula_rel_error", formula_err)
        .real("argmax_error", argmax_err)
        .int("monotone_roundoff_ties", mono_exact - mono_violations)
        .int("monotone_violations", mono_violations)
        .int("subadditive_violations", subadd_violations)
        .flag("classical", p.is_classical());
    let pass = formula_err <= f64::EPSILON && argmax_err == 0.0 && mono_violations == 0 && subadd_violations == 0;
    Ok((pass, d))
}

fn check_lattice(cfg: &RunConfig) -> CheckOut {
    let p = cfg.g;
    let t = cfg.coefficients.horizon();
    let run = |f: &dyn Fn(f64) -> f64, n| lattice::g_expectation(&p, &|x: f64| f(x), t, n);
    let sq200 = run(&|x| x * x, 200)? - p.gamma_hi() * t;
    let sq800 = run(&|x| x * x, 800)? - p.gamma_hi() * t;
    let nsq200 = run(&|x| -x * x, 200)? + p.gamma_lo() * t;
    let nsq800 = run(&|x| -x * x, 800)? + p.gamma_lo() * t;
    let lin = run(&|x| x, 200)?;
    // refinement halves the error, or the error is already at round-off
    let halves = |a: f64, b: f64| b.abs() <= 0.6 * a.abs() || a.abs().max(b.abs()) < 1e-12;
    let mut d = Sidecar::new();
    d.real("square_error_200", sq200)
        .real("square_error_800", sq800)
        .real("neg_square_error_200", nsq200)
        .real("neg_square_error_800", nsq800)
        .real("linear_value", lin);
    let mut pass = sq200.abs() <= 0.02
        && nsq200.abs() <= 0.02
        && halves(sq200, sq800)
        && halves(nsq200, nsq800)
        && lin.abs() <= 1e-14;
    if p.is_classical() {
        // both moments collapse onto the single variance
        let gap = (run(&|x| x * x, 200)? + run(&|x| -x * x, 200)?).abs();
        d.real("moment_gap", gap);
        pass &= gap <= 1e-12;
    }
    Ok((pass, d))
}

fn check_solve(cfg: &RunConfig) -> Result<(DecouplingField, bool, Sidecar), Failure> {
    let grid = cfg.solve_grid()?;
    let (field, rep) = solve_pde_report(&cfg.coefficients, &cfg.g, &grid)?;
    let mut d = Sidecar::new();
    d.int("nx", grid.nx as u64)
        .int("nt", grid.nt as u64)
        .real("dt", rep.dt)
        .real("cfl_dt_max", rep.cfl.dt_max)
        .real("m0", rep.m0)
        .real("lip", rep.lip)
        .real("terminal_residual", rep.terminal_residual)
        .real("uxx_near_terminal", rep.uxx_near_terminal)
        .real("uxx_interior", rep.uxx_interior)
        .real("u_origin", field.derivatives(0.0, 0.0).map(|d| d.u).unwrap_or(f64::NAN));
    let pass = rep.terminal_residual == 0.0;
    Ok((field, pass, d))
}

fn check_feynman_kac(cfg: &RunConfig) -> CheckOut {
    let p = cfg.g;
    let c = CoefficientBundle::builder().phi("tanh(x)").build().expect("fixed bundle");
    let gap = |nx: usize, n: usize| -> Result<f64, Failure> {
        let base = Grid1D::new(cfg.grid.x_min, cfg.grid.x_max, nx, 1.0, 1);
        let nt = crate::pde::cfl_steps(&c, &p, &base, 1.0, 0.9)?;
        let u = solve_pde(&c, &p, &Grid1D { nt, ..base })?;
        let v = lattice::g_expectation(&p, &|x: f64| x.tanh(), 1.0, n)?;
        Ok((u.derivatives(0.0, 0.0)?.u - v).abs())
    };
    let coarse = gap(cfg.grid.nx, 400)?;
    let fine = gap(2 * cfg.grid.nx - 1, 800)?;
    let mut d = Sidecar::new();
    d.real("gap", coarse).real("gap_refined", fine);
    Ok((coarse <= 5e-3 && fine < coarse, d))
}

/// Max-norm errors of the classical solver against `e^{−(1−t)} tanh x` on
/// three grids with `dt = dx²/2`, and the observed orders in `dx`.
pub fn manufactured_errors(levels: &[usize]) -> Result<Vec<(f64, f64)>, PdeError> {
    let params = GParams::classical(1.0).expect("unit volatility");
    let c = CoefficientBundle::builder()
        .phi("tanh(x)")
        .f("-exp(t-1)*tanh(x)^3")
        .build()
        .expect("fixed bundle");
    levels
        .iter()
        .map(|&nx| {
            let dx = 12.0 / (nx - 1) as f64;
            let nt = (2.0 / (dx * dx)).ceil() as usize;
            let grid = Grid1D::new(-6.0, 6.0, nx, 1.0, nt);
            let u = solve_pde(&c, &params, &grid)?;
            let mut err: f64 = 0.0;
            for k in 0..=nt {
                let t = grid.t(k);
                for (j, v) in u.level(k).iter().enumerate() {
                    err = err.max((v - (t - 1.0).exp() * grid.x(j).tanh()).abs());
                }
            }
            Ok((dx, err))
        })
        .collect()
}

fn check_manufactured() -> CheckOut {
    let errs = manufactured_errors(&[61, 121, 241])?;
    let orders: Vec<f64> = errs
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect();
    let mut d = Sidecar::new();
    d.reals("errors", &errs.iter().map(|e| e.1).collect::<Vec<_>>())
        .reals("orders", &orders);
    Ok((orders.iter().all(|o| *o >= 1.8), d))
}

fn check_k(cfg: &RunConfig, field: &DecouplingField) -> CheckOut {
    let c = &cfg.coefficients;
    let p = cfg.g;
    let opts = SimOptions::new(cfg.run.n_paths, cfg.run.n_steps, cfg.run.seed);
    let worst = simulate(c, field, &p, &WorstCase { params: p }, opts)?;
    let low = simulate(c, field, &p, &VolatilityScenario::constant(&p, p.gamma_lo())?, opts)?;
    let high = simulate(c, field, &p, &VolatilityScenario::constant(&p, p.gamma_hi())?, opts)?;
    let inc = max_k_increment(&worst)
        .max(max_k_increment(&low))
        .max(max_k_increment(&high));
    let (mw, sw) = mean_and_se(&worst.k_terminal());
    let (ml, sl) = mean_and_se(&low.k_terminal());
    let (mh, _) = mean_and_se(&high.k_terminal());
    let residuals = check_solution(c, field, &worst)?;
    let mut d = Sidecar::new();
    d.real("max_k_increment", inc)
        .real("mean_k_worst", mw)
        .real("se_k_worst", sw)
        .real("mean_k_low", ml)
        .real("se_k_low", sl)
        .real("mean_k_high", mh)
        .real("backward_residual_max", residuals.backward_max)
        .real("backward_residual_mean", residuals.backward_mean)
        .real("forward_residual_max", residuals.forward_max)
        .real("field_identity", residuals.field_identity)
        .real("terminal_gap", residuals.terminal)
        .real("continuity", residuals.continuity)
        .int("exited", worst.exits().len() as u64);
    let worst_ok = mw.abs() <= 3.0 * sw || mw == 0.0;
    // the family maximum of E[K_T] sits at the worst case
    let sup_ok = mw >= ml.max(mh);
    let low_ok = if p.is_classical() {
        ml == 0.0 && mw == 0.0
    } else {
        ml < -3.0 * sl
    };
    let pass = inc <= 0.0 && worst_ok && sup_ok && low_ok && residuals.field_identity == 0.0;
    Ok((pass, d))
}

fn picard_opts(cfg: &RunConfig) -> PicardOptions {
    PicardOptions {
        max_iter: cfg.run.max_iter,
        tol: cfg.run.tol,
        initial: None,
    }
}

fn check_picard(cfg: &RunConfig) -> CheckOut {
    let c = &cfg.coefficients;
    let l = c.constants.lipschitz;
    let t_end = c.horizon();
    let space = Grid1D::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.nx, t_end, 1);
    let mut ratios = Vec::new();
    let mut gap = f64::NAN;
    let mut short_ratio = f64::NAN;
    let mut converged = false;
    for h in [0.4, 0.2, 0.1, 0.05] {
        if h > t_end {
            continue;
        }
        let g = grid_for_span(c, &cfg.g, &space, l, t_end - h, t_end)?;
        let terminal = terminal_samples(c, &g)?;
        let (u, state) = picard_solve(c, &cfg.g, &g, &terminal, l, &picard_opts(cfg))?;
        ratios.push(state.ratio);
        if h == 0.05 {
            let v = solve_from_terminal(c, &cfg.g, &g, &terminal)?;
            gap = u.sup_gap(&v, cfg.run.window);
            short_ratio = state.ratio;
            converged = state.converged && state.bound_ok;
        }
    }
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]) || ratios.iter().all(|r| *r == 0.0);
    let mut d = Sidecar::new();
    d.reals("ratios", &ratios)
        .real("ratio", short_ratio)
        .real("pde_gap", gap)
        .flag("decreasing", decreasing);
    Ok((converged && short_ratio <= 0.5 && gap <= 1e-3 && decreasing, d))
}

fn check_stitch(cfg: &RunConfig) -> CheckOut {
    let c = &cfg.coefficients;
    let l = c.constants.lipschitz;
    let t = c.horizon();
    let space = Grid1D::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.nx, t, 1);
    let st = stitch_solve(c, &cfg.g, t, cfg.run.delta0, &space, l, &picard_opts(cfg))?;
    let v = solve_pde(c, &cfg.g, &st.field.grid)?;
    let gap = st.field.sup_gap(&v, cfg.run.window);
    let cell_lip = st.cells.iter().map(|c| c.lip).fold(0.0, f64::max);
    let mut d = Sidecar::new();
    d.int("cells", st.cells.len() as u64)
        .real("pde_gap", gap)
        .real("seam_gap", st.seam_gap)
        .real("cell_lip_max", cell_lip)
        .real("pde_lip", v.lip);
    Ok((gap <= 5e-3 && st.seam_gap == 0.0, d))
}

fn check_mollifier() -> CheckOut {
    let dx = 1e-3;
    let xs: Vec<f64> = (0..=4000).map(|i| -2.0 + i as f64 * dx).collect();
    let abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
    let lip_in = lipschitz_quotient(&abs, dx);
    let mut pass = true;
    let mut devs = Vec::new();
    let mut mass_err: f64 = 0.0;
    for n in [5, 10, 20, 40] {
        let w = MollifierKernel::new(n)?.discrete_weights(dx)?;
        mass_err = mass_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let out = mollify(&abs, dx, n)?;
        let dev = out.iter().zip(&abs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pass &= dev <= 1.0 / n as f64 + 1e-6 && lipschitz_quotient(&out, dx) <= lip_in + 1e-10;
        devs.push(dev);
    }
    let mut d = Sidecar::new();
    d.real("c0", crate::mollifier::kernel_c0())
        .real("mass_error", mass_err)
        .reals("deviations", &devs);
    Ok((pass && mass_err <= 1e-8, d))
}

fn check_dependence(cfg: &RunConfig) -> CheckOut {
    let c = &cfg.coefficients;
    let l = c.constants.lipschitz;
    let beta = c.constants.beta;
    let horizon = c.horizon().min(0.25);
    let t_end = c.horizon();
    let space = Grid1D::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.nx, t_end, 1);
    let grid = grid_for_span(c, &cfg.g, &space, l, 0.0, horizon)?;
    let dep = DependenceConfig::new(cfg.run.alpha, cfg.run.n_paths.min(2000), 20, cfg.run.seed);
    let opts = picard_opts(cfg);
    let same = dependence_check(c, c, &cfg.g, &grid, l, (beta, beta), &dep, &opts)?;
    let ladder = [0.2, 0.1, 0.05, 0.025];
    let rep = ladder_check(c, |e| c.with_f_shift(e), &cfg.g, &grid, l, beta, &ladder, &dep, &opts)?;
    let lhs: Vec<f64> = rep.points.iter().map(|(_, r)| r.lhs.total()).collect();
    let ratios: Vec<f64> = rep.points.iter().map(|(_, r)| r.ratio.unwrap_or(f64::NAN)).collect();
    let mut d = Sidecar::new();
    d.reals("ladder", &ladder)
        .reals("lhs", &lhs)
        .reals("ratios", &ratios)
        .real("spread", rep.spread)
        .flag("identical_exact", same.exact_match && same.lhs.total() == 0.0);
    Ok((rep.pass(10.0) && same.exact_match && same.lhs.total() == 0.0, d))
}

/// Advisory: reported, never failing.
fn check_assumptions(cfg: &RunConfig) -> CheckOut {
    let c = &cfg.coefficients;
    let probe = crate::coeffs::ProbeGrid::for_horizon(c.horizon());
    let rep = crate::coeffs::verify_assumptions(c, &probe, 1e-9)?;
    let mut d = Sidecar::new();
    for clause in &rep.clauses {
        d.real(&format!("{}_observed", clause.clause.replace(':', "_")), clause.observed)
            .flag(&format!("{}_pass", clause.clause.replace(':', "_")), clause.pass);
    }
    let _ = c.phi(0.0)?;
    Ok((true, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn cfl_violation_fails_fast() {
        let text = "[g]\nsigma_lo = 0.8\nsigma_hi = 1.2\n[coefficients]\nphi = \"tanh(x)\"\n[grid]\nnt = 10\n";
        let cfg = parse_config(text, "t.toml").unwrap();
        let rep = validate(&cfg);
        assert_eq!(rep.aborted, Some(Abort::Failed));
        let last = rep.checks.last().unwrap();
        assert_eq!(last.name, "solve-pde");
        assert!(last.message.as_ref().unwrap().contains("CFL"));
        assert!(!rep.all_pass());
        assert!(rep.render().contains("[solve-pde]\nstatus = \"fail\""));
    }

    #[test]
    fn manufactured_order_is_two() {
        let errs = manufactured_errors(&[31, 61, 121]).unwrap();
        for w in errs.windows(2) {
            let order = (w[0].1 / w[1].1).log2();
            assert!(order > 1.8, "{order}");
        }
    }
}
