use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gfbsde::config::{load_config, RunConfig};
use gfbsde::dependence::{dependence_check, ladder_check, DependenceConfig, DependenceError, DependenceReport};
use gfbsde::lattice::{conditional_field, LatticeError};
use gfbsde::mollifier::{lipschitz_quotient, mollify};
use gfbsde::paths::{check_solution, simulate, PathError, SimOptions, VolatilityPolicy, VolatilityScenario, WorstCase};
use gfbsde::pde::{solve_from_terminal, solve_pde_report, terminal_samples, PdeError};
use gfbsde::picard::{grid_for_span, picard_solve, stitch_solve, PicardError, PicardOptions};
use gfbsde::report::{real, write_field, write_paths, CsvWriter, Sidecar};
use gfbsde::stats::mean_and_se;
use gfbsde::validate::validate_with;
use gfbsde::Grid1D;

/// Numerical experiments for forward-backward SDEs under volatility uncertainty.
///
/// Exit status: 0 success, 1 check failure, 2 usage or configuration error,
/// 3 numerical blow-up.
#[derive(Parser)]
#[command(name = "gfbsde", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lattice G-expectation of the configured terminal function; writes (t, x, v).
    Gheat(GheatArgs),
    /// Solve the decoupling PDE; writes (t, x, u, u_x, u_xx).
    SolvePde(SolveArgs),
    /// Simulate (X, Y, Z, K) paths under a volatility scenario.
    Simulate(SimulateArgs),
    /// Picard iteration on one time span.
    Picard(PicardArgs),
    /// Picard iteration stitched over a partition of [0, T].
    Stitch(StitchArgs),
    /// Smooth sampled data with the bump kernel at scale 1/n.
    Mollify(MollifyArgs),
    /// Compare two coefficient bundles, or run an f-shift ladder.
    Perturb(PerturbArgs),
    /// Run the full cross-check suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
}

#[derive(Args)]
struct GheatArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Lattice time steps.
    #[arg(long, default_value_t = 400)]
    steps: usize,
    /// Horizon; defaults to the configured T.
    #[arg(long)]
    horizon: Option<f64>,
    /// Output CSV (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Output CSV (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write the solve summary (m0, Lipschitz bound, CFL dt, terminal residual).
    #[arg(long, value_name = "FILE")]
    emit_meta: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// `worst`, `const:<gamma>`, or `file:<csv>` with header `t,gamma`
    /// giving each piece's start time and value.
    #[arg(long, default_value = "worst")]
    scenario: String,
    /// Number of paths (default from config).
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps per path (default from config).
    #[arg(long)]
    steps: Option<usize>,
    /// Master seed (default from config).
    #[arg(long)]
    seed: Option<u64>,
    /// Starting point.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    x0: f64,
    /// Gaussian increments instead of symmetric ±1 steps.
    #[arg(long)]
    gaussian: bool,
    /// Output CSV of (path_id, t, X, Y, Z, K) (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write residual and K statistics.
    #[arg(long, value_name = "FILE")]
    emit_meta: Option<PathBuf>,
}

#[derive(Args)]
struct PicardArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Time span `a,b` with 0 <= a < b <= T (default `0,T`).
    #[arg(long, value_name = "A,B", value_delimiter = ',')]
    horizon: Option<Vec<f64>>,
    /// Stopping tolerance on successive sup-norm differences.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output CSV of the converged field (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write the iteration history and contraction estimate.
    #[arg(long, value_name = "FILE")]
    emit_meta: Option<PathBuf>,
}

#[derive(Args)]
struct StitchArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Cell length (default from config).
    #[arg(long)]
    delta0: Option<f64>,
    /// Output CSV of the stitched field (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write per-cell iteration counts, ratios and the seam gap.
    #[arg(long, value_name = "FILE")]
    emit_meta: Option<PathBuf>,
}

#[derive(Args)]
struct MollifyArgs {
    /// CSV with header `x,value` on a uniform grid.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Kernel scale: support radius 1/n.
    #[arg(long)]
    n: usize,
    /// Output CSV of (x, value, mollified) (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Second configuration; its coefficients are compared with the first.
    #[arg(long, value_name = "FILE", required_unless_present = "ladder")]
    config2: Option<PathBuf>,
    /// Exponent excess alpha in (0, beta - 2] (default from config).
    #[arg(long)]
    alpha: Option<f64>,
    /// Decreasing shifts of f, e.g. `0.2,0.1,0.05,0.025`; replaces --config2.
    #[arg(long, value_delimiter = ',', conflicts_with = "config2")]
    ladder: Option<Vec<f64>>,
    /// Paths per scenario (default from config).
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps per path.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Report file (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Report file (stdout if absent).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Print per-check timings to stderr.
    #[arg(long)]
    timings: bool,
}

enum Failure {
    Check(String),
    Usage(String),
    BlowUp(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::BlowUp(_) => 3,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<PdeError> for Failure {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::NonFinite { .. } => Failure::BlowUp(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<LatticeError> for Failure {
    fn from(e: LatticeError) -> Self {
        match e {
            LatticeError::NonFinite { .. } => Failure::BlowUp(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<PicardError> for Failure {
    fn from(e: PicardError) -> Self {
        match e {
            PicardError::Pde(p) => p.into(),
            PicardError::Cell { index, source } => match Failure::from(*source) {
                Failure::BlowUp(m) => Failure::BlowUp(format!("cell {index}: {m}")),
                Failure::Usage(m) | Failure::Check(m) => Failure::Check(format!("cell {index}: {m}")),
            },
            PicardError::Partition(_) | PicardError::Eval(_) => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<PathError> for Failure {
    fn from(e: PathError) -> Self {
        match e {
            PathError::Field(p) => p.into(),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<DependenceError> for Failure {
    fn from(e: DependenceError) -> Self {
        match e {
            DependenceError::Picard(p) | DependenceError::Regime(p) => p.into(),
            DependenceError::Paths(p) => p.into(),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Check(m) | Failure::Usage(m) | Failure::BlowUp(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gheat(a) => gheat(a),
        Command::SolvePde(a) => solve(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Picard(a) => picard(a),
        Command::Stitch(a) => stitch(a),
        Command::Mollify(a) => mollify_cmd(a),
        Command::Perturb(a) => perturb(a),
        Command::Validate(a) => validate_cmd(a),
    }
}

fn config(arg: &ConfigArg) -> Result<RunConfig, Failure> {
    load_config(&arg.config).map_err(|e| Failure::Usage(e.to_string()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            Failure::Usage(format!("{}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_meta(path: Option<&Path>, meta: &Sidecar) -> Result<(), Failure> {
    if let Some(p) = path {
        std::fs::write(p, meta.render()).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn picard_options(cfg: &RunConfig) -> PicardOptions {
    PicardOptions {
        max_iter: cfg.run.max_iter,
        tol: cfg.run.tol,
        initial: None,
    }
}

fn space_grid(cfg: &RunConfig) -> Grid1D {
    Grid1D::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.nx, cfg.coefficients.horizon(), 1)
}

fn gheat(a: GheatArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let horizon = a.horizon.unwrap_or(cfg.coefficients.horizon());
    let phi = cfg.coefficients.expr(gfbsde::coeffs::Slot::Phi);
    let field = conditional_field(&cfg.g, phi, horizon, a.steps)?;
    let mut csv = CsvWriter::new(sink(a.out.as_deref())?, &["t", "x", "v"])?;
    for (t, x, v) in field.triples() {
        csv.reals(&[t, x, v])?;
    }
    csv.finish()?;
    eprintln!("v0 = {}, N = {}", real(field.root()), a.steps);
    Ok(())
}

fn solve(a: SolveArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let grid = cfg.solve_grid()?;
    let (field, rep) = solve_pde_report(&cfg.coefficients, &cfg.g, &grid)?;
    write_field(sink(a.out.as_deref())?, &field)?;
    let mut meta = Sidecar::new();
    meta.int("nx", grid.nx as u64)
        .int("nt", grid.nt as u64)
        .real("dt", rep.dt)
        .real("cfl_dt_max", rep.cfl.dt_max)
        .real("m0", rep.m0)
        .real("lip", rep.lip)
        .real("terminal_residual", rep.terminal_residual);
    write_meta(a.emit_meta.as_deref(), &meta)
}

fn scenario(spec: &str, cfg: &RunConfig) -> Result<Box<dyn VolatilityPolicy>, Failure> {
    let p = cfg.g;
    if spec == "worst" {
        return Ok(Box::new(WorstCase { params: p }));
    }
    if let Some(v) = spec.strip_prefix("const:") {
        let gamma: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("bad scenario value `{v}`")))?;
        return Ok(Box::new(VolatilityScenario::constant(&p, gamma)?));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let rows = read_pairs(Path::new(path), ["t", "gamma"])?;
        if rows.is_empty() {
            return Err(Failure::Usage(format!("{path}: no scenario rows")));
        }
        let breaks = rows[1..].iter().map(|r| r.0).collect();
        let values = rows.iter().map(|r| r.1).collect();
        let span = (rows[0].0, cfg.coefficients.horizon());
        return Ok(Box::new(VolatilityScenario::piecewise(&p, span, breaks, values)?));
    }
    Err(Failure::Usage(format!(
        "unknown scenario `{spec}`; expected worst, const:<gamma> or file:<csv>"
    )))
}

/// Two-column CSV with the given header.
fn read_pairs(path: &Path, header: [&str; 2]) -> Result<Vec<(f64, f64)>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let expected = header.join(",");
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == expected => {}
        _ => return Err(Failure::Usage(format!("{}:1: expected header `{expected}`", path.display()))),
    }
    lines
        .map(|(i, l)| {
            let bad = || Failure::Usage(format!("{}:{}: expected two numbers", path.display(), i + 1));
            let (a, b) = l.split_once(',').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let c = &cfg.coefficients;
    let grid = cfg.solve_grid()?;
    let (field, _) = solve_pde_report(c, &cfg.g, &grid)?;
    let policy = scenario(&a.scenario, &cfg)?;
    let opts = SimOptions::new(
        a.paths.unwrap_or(cfg.run.n_paths),
        a.steps.unwrap_or(cfg.run.n_steps),
        a.seed.unwrap_or(cfg.run.seed),
    )
    .x0(a.x0)
    .gaussian(a.gaussian);
    let set = simulate(c, &field, &cfg.g, policy.as_ref(), opts)?;
    write_paths(sink(a.out.as_deref())?, &set)?;
    let res = check_solution(c, &field, &set)?;
    let (mk, se) = mean_and_se(&set.k_terminal());
    let mut meta = Sidecar::new();
    meta.text("scenario", &a.scenario)
        .int("paths", opts.n_paths as u64)
        .int("steps", opts.n_steps as u64)
        .int("seed", opts.seed)
        .int("exited", set.exits().len() as u64)
        .real("mean_k_terminal", mk)
        .real("se_k_terminal", se)
        .real("k_increment_max", res.k_increment_max)
        .real("backward_residual_max", res.backward_max)
        .real("forward_residual_max", res.forward_max)
        .real("terminal_gap", res.terminal)
        .real("continuity", res.continuity);
    write_meta(a.emit_meta.as_deref(), &meta)
}

fn picard(a: PicardArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let c = &cfg.coefficients;
    let t_end_full = c.horizon();
    let (t0, t1) = match a.horizon.as_deref() {
        Some([t0, t1]) => (*t0, *t1),
        Some(_) => return Err(Failure::Usage("--horizon takes two values `a,b`".into())),
        None => (0.0, t_end_full),
    };
    if !(0.0 <= t0 && t0 < t1 && t1 <= t_end_full) {
        return Err(Failure::Usage(format!(
            "horizon {t0},{t1} must satisfy 0 <= a < b <= {t_end_full}"
        )));
    }
    let l = c.constants.lipschitz;
    let space = space_grid(&cfg);
    let grid = grid_for_span(c, &cfg.g, &space, l, t0, t1)?;
    // data at b: the terminal function, or the PDE solution carried back from T
    let terminal = if t1 == t_end_full {
        terminal_samples(c, &grid)?
    } else {
        let tail = grid_for_span(c, &cfg.g, &space, l, t1, t_end_full)?;
        let v = solve_from_terminal(c, &cfg.g, &tail, &terminal_samples(c, &tail)?)?;
        v.level(0).to_vec()
    };
    let mut opts = picard_options(&cfg);
    opts.tol = a.tol.unwrap_or(opts.tol);
    opts.max_iter = a.max_iter.unwrap_or(opts.max_iter);
    let (field, state) = picard_solve(c, &cfg.g, &grid, &terminal, l, &opts)?;
    write_field(sink(a.out.as_deref())?, &field)?;
    let mut meta = Sidecar::new();
    meta.real("t_start", t0)
        .real("t_end", t1)
        .int("nt", grid.nt as u64)
        .int("iterations", state.iter as u64)
        .flag("converged", state.converged)
        .real("ratio", state.ratio)
        .flag("growth_bound_ok", state.bound_ok)
        .reals("history", &state.history);
    write_meta(a.emit_meta.as_deref(), &meta)?;
    if !state.converged {
        return Err(Failure::Check(format!(
            "no convergence to {:e} within {} iterations",
            opts.tol, opts.max_iter
        )));
    }
    Ok(())
}

fn stitch(a: StitchArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let c = &cfg.coefficients;
    let delta0 = a.delta0.unwrap_or(cfg.run.delta0);
    let res = stitch_solve(
        c,
        &cfg.g,
        c.horizon(),
        delta0,
        &space_grid(&cfg),
        c.constants.lipschitz,
        &picard_options(&cfg),
    )?;
    write_field(sink(a.out.as_deref())?, &res.field)?;
    let mut meta = Sidecar::new();
    meta.real("delta0", delta0)
        .int("cells", res.cells.len() as u64)
        .real("seam_gap", res.seam_gap)
        .reals("breakpoints", &res.partition.breakpoints);
    for (i, cell) in res.cells.iter().enumerate() {
        meta.int(&format!("cell_{i}_iterations"), cell.state.iter as u64)
            .real(&format!("cell_{i}_ratio"), cell.state.ratio)
            .real(&format!("cell_{i}_lip"), cell.lip);
    }
    write_meta(a.emit_meta.as_deref(), &meta)
}

fn mollify_cmd(a: MollifyArgs) -> Result<(), Failure> {
    let rows = read_pairs(&a.input, ["x", "value"])?;
    if rows.len() < 2 {
        return Err(Failure::Usage("need at least two samples".into()));
    }
    let dx = rows[1].0 - rows[0].0;
    let uniform = rows
        .windows(2)
        .all(|w| ((w[1].0 - w[0].0) - dx).abs() <= 1e-9 * dx.abs().max(1.0));
    if dx.is_nan() || dx <= 0.0 || !uniform {
        return Err(Failure::Usage("x must be increasing with uniform spacing".into()));
    }
    let values: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let smooth = mollify(&values, dx, a.n).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut csv = CsvWriter::new(sink(a.out.as_deref())?, &["x", "value", "mollified"])?;
    for (r, s) in rows.iter().zip(&smooth) {
        csv.reals(&[r.0, r.1, *s])?;
    }
    csv.finish()?;
    eprintln!(
        "lipschitz in = {}, out = {}",
        real(lipschitz_quotient(&values, dx)),
        real(lipschitz_quotient(&smooth, dx))
    );
    Ok(())
}

fn dependence_lines(meta: &mut Sidecar, prefix: &str, r: &DependenceReport) {
    meta.real(&format!("{prefix}lhs"), r.lhs.total())
        .real(&format!("{prefix}lhs_x"), r.lhs.x_sup)
        .real(&format!("{prefix}lhs_y"), r.lhs.y_sup)
        .real(&format!("{prefix}lhs_z"), r.lhs.z_int)
        .real(&format!("{prefix}lhs_k"), r.lhs.k_terminal)
        .real(&format!("{prefix}i0"), r.i0.total())
        .real(&format!("{prefix}i_alpha"), r.i_alpha.total())
        .real(&format!("{prefix}bound"), r.bound)
        .real(&format!("{prefix}ratio"), r.ratio.unwrap_or(f64::NAN))
        .flag(&format!("{prefix}exact_match"), r.exact_match);
}

fn perturb(a: PerturbArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let c = &cfg.coefficients;
    let l = c.constants.lipschitz;
    let grid = grid_for_span(c, &cfg.g, &space_grid(&cfg), l, 0.0, c.horizon())?;
    let dep = DependenceConfig::new(
        a.alpha.unwrap_or(cfg.run.alpha),
        a.paths.unwrap_or(cfg.run.n_paths),
        a.steps,
        cfg.run.seed,
    );
    let opts = picard_options(&cfg);
    let mut meta = Sidecar::new();
    let pass = if let Some(ladder) = &a.ladder {
        let rep = ladder_check(c, |e| c.with_f_shift(e), &cfg.g, &grid, l, c.constants.beta, ladder, &dep, &opts)?;
        meta.reals("ladder", ladder);
        for (i, (_, r)) in rep.points.iter().enumerate() {
            dependence_lines(&mut meta, &format!("rung_{i}_"), r);
        }
        meta.real("spread", rep.spread).flag("decreasing", rep.decreasing);
        rep.pass(10.0)
    } else {
        let path = a.config2.as_ref().expect("clap requires one of the two");
        let other = load_config(path).map_err(|e| Failure::Usage(e.to_string()))?;
        if other.g != cfg.g {
            return Err(Failure::Usage("both configurations must share the [g] section".into()));
        }
        let betas = (c.constants.beta, other.coefficients.constants.beta);
        let rep = dependence_check(c, &other.coefficients, &cfg.g, &grid, l, betas, &dep, &opts)?;
        dependence_lines(&mut meta, "", &rep);
        true
    };
    let mut out = sink(a.out.as_deref())?;
    out.write_all(meta.render().as_bytes())?;
    out.flush()?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Check("ladder is not decreasing or its ratio spread exceeds 10".into()))
    }
}

fn validate_cmd(a: ValidateArgs) -> Result<(), Failure> {
    let cfg = config(&a.config)?;
    let timings = a.timings;
    let report = validate_with(&cfg, |name, secs| {
        if timings {
            eprintln!("{name}: {secs:.2} s");
        }
    });
    let mut out = sink(a.out.as_deref())?;
    out.write_all(report.render().as_bytes())?;
    out.flush()?;
    if report.all_pass() {
        Ok(())
    } else if report.blow_up() {
        Err(Failure::BlowUp(format!("numerical blow-up in {}", report.failing().join(", "))))
    } else {
        Err(Failure::Check(format!("failed: {}", report.failing().join(", "))))
    }
}
