//! Sublinear expectation of terminal functionals `Ê[φ(B_T)]` on a recombining
//! trinomial lattice.
//!
//! Level `k` holds the `2k + 1` offsets `{-k dx, …, k dx}` with
//! `dx = σ̄ √dt`. One backward step is
//!
//! ```text
//! v_k(x) = max_{γ ∈ {σ̲², σ̄²}} p(γ) v(x+dx) + p(γ) v(x−dx) + (1 − 2p(γ)) v(x),
//! p(γ) = γ dt / (2 dx²)
//! ```
//!
//! The one-step value is linear in `γ`, so the supremum over `[σ̲², σ̄²]` is
//! attained at an endpoint.

use thiserror::Error;

use crate::dsl::{Env, EvalError, Expr};
use crate::g::GParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice needs at least one step, got {0}")]
    Steps(usize),
    #[error("lattice horizon must be finite and > 0, got {0}")]
    Horizon(f64),
    #[error("terminal functional is not finite at x = {x} (value {value})")]
    NonFinite { x: f64, value: f64 },
    #[error("scenario volatility {gamma} at level {level} lies outside [{lo}, {hi}]")]
    Scenario {
        gamma: f64,
        level: usize,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A terminal functional of one variable.
pub trait Terminal {
    fn value(&self, x: f64) -> Result<f64, EvalError>;
}

impl<F: Fn(f64) -> f64> Terminal for F {
    fn value(&self, x: f64) -> Result<f64, EvalError> {
        Ok(self(x))
    }
}

impl Terminal for Expr {
    fn value(&self, x: f64) -> Result<f64, EvalError> {
        self.eval(&Env {
            x,
            ..Env::default()
        })
    }
}

/// Geometry of a lattice with `steps` levels over `horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub steps: usize,
    pub horizon: f64,
    pub dt: f64,
    pub dx: f64,
}

impl Lattice {
    pub fn new(params: &GParams, horizon: f64, steps: usize) -> Result<Self, LatticeError> {
        if steps == 0 {
            return Err(LatticeError::Steps(steps));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(LatticeError::Horizon(horizon));
        }
        let dt = horizon / steps as f64;
        Ok(Lattice {
            steps,
            horizon,
            dt,
            dx: params.sigma_hi() * dt.sqrt(),
        })
    }

    /// Middle-branch mass is `1 − 2p`; `p(σ̄²) = ½` by the choice of `dx`.
    pub fn p(&self, gamma: f64) -> f64 {
        gamma * self.dt / (2.0 * self.dx * self.dx)
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Spatial coordinate of offset `j` (relative to the root).
    pub fn x(&self, j: i64) -> f64 {
        j as f64 * self.dx
    }

    fn terminal_values<P: Terminal + ?Sized>(
        &self,
        phi: &P,
        origin: f64,
    ) -> Result<Vec<f64>, LatticeError> {
        let n = self.steps as i64;
        (-n..=n)
            .map(|j| {
                let x = origin + self.x(j);
                let value = phi.value(x)?;
                if !value.is_finite() {
                    return Err(LatticeError::NonFinite { x, value });
                }
                Ok(value)
            })
            .collect()
    }
}

/// The conditional value function `v_k(x)` on every lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    pub lattice: Lattice,
    pub params: GParams,
    /// `levels[k][k + j]` is the value at level `k`, offset `j ∈ [-k, k]`.
    levels: Vec<Vec<f64>>,
}

impl LatticeField {
    pub fn value(&self, level: usize, offset: i64) -> f64 {
        self.levels[level][(level as i64 + offset) as usize]
    }

    pub fn level(&self, level: usize) -> &[f64] {
        &self.levels[level]
    }

    pub fn root(&self) -> f64 {
        self.levels[0][0]
    }

    /// Maximizing volatility at node `(level, offset)` for `level < steps`.
    pub fn argmax(&self, level: usize, offset: i64) -> f64 {
        let next = &self.levels[level + 1];
        let i = (level as i64 + 1 + offset) as usize;
        let d = (next[i + 1] - next[i]) - (next[i] - next[i - 1]);
        self.params.g_argmax(d)
    }

    /// Iterate `(t, x, v)` over all nodes, level by level.
    pub fn triples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.levels.iter().enumerate().flat_map(move |(k, vals)| {
            vals.iter().enumerate().map(move |(i, v)| {
                (
                    self.lattice.time(k),
                    self.lattice.x(i as i64 - k as i64),
                    *v,
                )
            })
        })
    }
}

fn g_step(p_lo: f64, p_hi: f64, next: &[f64]) -> Vec<f64> {
    (1..next.len() - 1)
        .map(|i| {
            let (up, mid, down) = (next[i + 1], next[i], next[i - 1]);
            let lo = p_lo * up + p_lo * down + (1.0 - 2.0 * p_lo) * mid;
            let hi = p_hi * up + p_hi * down + (1.0 - 2.0 * p_hi) * mid;
            lo.max(hi)
        })
        .collect()
}

/// All conditional values `v_k(x)` of `Ê[φ(B_T)]`.
pub fn conditional_field<P: Terminal + ?Sized>(
    params: &GParams,
    phi: &P,
    horizon: f64,
    steps: usize,
) -> Result<LatticeField, LatticeError> {
    let lattice = Lattice::new(params, horizon, steps)?;
    let p_lo = lattice.p(params.gamma_lo());
    let p_hi = lattice.p(params.gamma_hi());
    let mut levels = vec![Vec::new(); steps + 1];
    levels[steps] = lattice.terminal_values(phi, 0.0)?;
    for k in (0..steps).rev() {
        levels[k] = g_step(p_lo, p_hi, &levels[k + 1]);
    }
    Ok(LatticeField {
        lattice,
        params: *params,
        levels,
    })
}

/// `Ê[φ(B_T)]` by backward recursion.
pub fn g_expectation<P: Terminal + ?Sized>(
    params: &GParams,
    phi: &P,
    horizon: f64,
    steps: usize,
) -> Result<f64, LatticeError> {
    g_expectation_from(params, phi, 0.0, horizon, steps)
}

/// `Ê[φ(x₀ + B_T)]`, keeping only two levels in memory.
pub fn g_expectation_from<P: Terminal + ?Sized>(
    params: &GParams,
    phi: &P,
    origin: f64,
    horizon: f64,
    steps: usize,
) -> Result<f64, LatticeError> {
    let lattice = Lattice::new(params, horizon, steps)?;
    let p_lo = lattice.p(params.gamma_lo());
    let p_hi = lattice.p(params.gamma_hi());
    let mut level = lattice.terminal_values(phi, origin)?;
    for _ in 0..steps {
        level = g_step(p_lo, p_hi, &level);
    }
    Ok(level[0])
}

/// Linear expectation under a node-wise volatility choice `γ(level, offset)`.
///
/// With `γ` taken from [`LatticeField::argmax`] this reproduces the G-value;
/// any other admissible choice is dominated by it.
pub fn linear_expectation<P, S>(
    params: &GParams,
    phi: &P,
    horizon: f64,
    steps: usize,
    scenario: S,
) -> Result<f64, LatticeError>
where
    P: Terminal + ?Sized,
    S: Fn(usize, i64) -> f64,
{
    let lattice = Lattice::new(params, horizon, steps)?;
    let mut level = lattice.terminal_values(phi, 0.0)?;
    for k in (0..steps).rev() {
        let mut out = Vec::with_capacity(2 * k + 1);
        for i in 1..level.len() - 1 {
            let offset = i as i64 - 1 - k as i64;
            let raw = scenario(k, offset);
            let gamma = params.snap_gamma(raw).ok_or(LatticeError::Scenario {
                gamma: raw,
                level: k,
                lo: params.gamma_lo(),
                hi: params.gamma_hi(),
            })?;
            let p = lattice.p(gamma);
            out.push(p * level[i + 1] + p * level[i - 1] + (1.0 - 2.0 * p) * level[i]);
        }
        level = out;
    }
    Ok(level[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> GParams {
        GParams::new(0.8, 1.2).unwrap()
    }

    #[test]
    fn geometry() {
        let l = Lattice::new(&p(), 1.0, 100).unwrap();
        assert!((l.p(p().gamma_hi()) - 0.5).abs() < 1e-15);
        assert!(l.p(p().gamma_lo()) < 0.5);
        assert!(l.dx / l.dt.sqrt() >= p().sigma_hi() - 1e-15);
        let field = conditional_field(&p(), &|x: f64| x, 1.0, 7).unwrap();
        for k in 0..=7 {
            assert_eq!(field.level(k).len(), 2 * k + 1);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            g_expectation(&p(), &|x: f64| x, 1.0, 0),
            Err(LatticeError::Steps(0))
        );
        assert!(matches!(
            g_expectation(&p(), &|x: f64| x, -1.0, 10),
            Err(LatticeError::Horizon(_))
        ));
        assert!(matches!(
            g_expectation(&p(), &|x: f64| 1.0 / (x - x), 1.0, 10),
            Err(LatticeError::NonFinite { .. })
        ));
    }

    #[test]
    fn moments() {
        let v = g_expectation(&p(), &|x: f64| x, 1.0, 100).unwrap();
        assert!(v.abs() < 1e-14, "{v}");
        let v = g_expectation(&p(), &|x: f64| x * x, 1.0, 200).unwrap();
        assert!((v - 1.44).abs() < 0.02);
        let v = g_expectation(&p(), &|x: f64| -x * x, 1.0, 200).unwrap();
        assert!((v + 0.64).abs() < 0.02);
    }

    #[test]
    fn expr_terminal() {
        let e = parse("x^2").unwrap();
        let v = g_expectation(&p(), &e, 1.0, 50).unwrap();
        assert!((v - 1.44).abs() < 1e-12);
    }

    #[test]
    fn constants_preserved_everywhere() {
        let field = conditional_field(&p(), &|_: f64| 3.25, 1.0, 40).unwrap();
        for k in 0..=40 {
            assert!(field.level(k).iter().all(|v| *v == 3.25));
        }
    }

    #[test]
    fn conditional_square_matches_shorter_horizon() {
        let n = 80;
        let field = conditional_field(&p(), &|x: f64| x * x, 1.0, n).unwrap();
        for k in [0, 10, 40, 79] {
            let remaining = 1.0 - field.lattice.time(k);
            // oracle: a fresh lattice on the remaining horizon
            let oracle = g_expectation(&p(), &|x: f64| x * x, remaining, n - k).unwrap();
            assert!((field.value(k, 0) - oracle).abs() < 1e-12);
            assert!((field.value(k, 0) - 1.44 * remaining).abs() < 1e-10);
        }
    }

    #[test]
    fn tower_property() {
        let phi = |x: f64| (2.0 * x).sin() + 0.3 * x.abs();
        let n = 60;
        let k = 25;
        let field = conditional_field(&p(), &phi, 1.5, n).unwrap();
        // re-root: terminal data is the level-k slice on k steps
        let slice = field.level(k).to_vec();
        let dx = field.lattice.dx;
        let lookup = move |x: f64| {
            let j = (x / dx).round() as i64 + k as i64;
            slice[j as usize]
        };
        let rerooted = g_expectation(&p(), &lookup, field.lattice.time(k), k).unwrap();
        assert!((rerooted - field.root()).abs() < 1e-13);
    }

    #[test]
    fn scenario_dominance_and_attainment() {
        let phi = |x: f64| (3.0 * x).sin() + 0.5 * x * x.abs().min(1.0);
        let n = 50;
        let field = conditional_field(&p(), &phi, 1.0, n).unwrap();
        let attained =
            linear_expectation(&p(), &phi, 1.0, n, |k, j| field.argmax(k, j)).unwrap();
        assert!((attained - field.root()).abs() < 1e-13);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let gammas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.64..=1.44)).collect();
            let v = linear_expectation(&p(), &phi, 1.0, n, |k, _| gammas[k]).unwrap();
            assert!(v <= field.root() + 1e-13);
        }
        assert!(matches!(
            linear_expectation(&p(), &phi, 1.0, n, |_, _| 2.0),
            Err(LatticeError::Scenario { .. })
        ));
    }

    #[test]
    fn classical_reduction() {
        let c = GParams::classical(0.9).unwrap();
        for n in [50, 200] {
            let v = g_expectation(&c, &|x: f64| x * x, 2.0, n).unwrap();
            assert!((v - 0.81 * 2.0).abs() < 1.0 / n as f64);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sublinearity(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -1.0f64..1.0, lambda in 0.0f64..3.0) {
            let params = p();
            let phi = move |x: f64| (a * x).sin() + c * x.tanh();
            let psi = move |x: f64| (b * x).cos() * 0.5 - (x * c).abs();
            let n = 30;
            let e = |f: &dyn Fn(f64) -> f64| g_expectation(&params, &|x: f64| f(x), 1.0, n).unwrap();
            let sum = e(&|x| phi(x) + psi(x));
            prop_assert!(sum <= e(&phi) + e(&psi) + 1e-12);
            let scaled = e(&|x| lambda * phi(x));
            prop_assert!((scaled - lambda * e(&phi)).abs() < 1e-12);
            let upper = e(&|x| phi(x).max(psi(x)));
            prop_assert!(upper >= e(&phi) - 1e-12 && upper >= e(&psi) - 1e-12);
        }
    }
}
