//! The bump kernel `ρ(x) = c₀ e^{−1/(1−x²)} 𝟙_{(−1,1)}(x)`, its scalings
//! `ρ_n(x) = n ρ(n x)`, and discrete convolution on uniform grids.

use std::sync::OnceLock;

use thiserror::Error;

use crate::coeffs::Coefficients;
use crate::dsl::EvalError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MollifyError {
    #[error("smoothing index must be >= 1, got {0}")]
    Index(usize),
    #[error("grid spacing {dx} too coarse for n = {n}: need dx <= 1/(4n) = {limit}")]
    Resolution { dx: f64, n: usize, limit: f64 },
}

/// Unnormalized bump `e^{−1/(1−x²)}` on `(−1, 1)`.
fn bump(x: f64) -> f64 {
    let s = 1.0 - x * x;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Normalization `c₀ = 1 / ∫_{−1}^{1} e^{−1/(1−x²)} dx`, computed once.
pub fn kernel_c0() -> f64 {
    static C0: OnceLock<f64> = OnceLock::new();
    *C0.get_or_init(|| 1.0 / integrate(&bump, -1.0, 1.0, 1e-15))
}

/// `ρ(x)`.
pub fn rho(x: f64) -> f64 {
    kernel_c0() * bump(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierKernel {
    pub n: usize,
    pub c0: f64,
}

impl MollifierKernel {
    pub fn new(n: usize) -> Result<Self, MollifyError> {
        if n == 0 {
            return Err(MollifyError::Index(n));
        }
        Ok(MollifierKernel { n, c0: kernel_c0() })
    }

    /// `ρ_n(x) = n ρ(n x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.n as f64;
        n * self.c0 * bump(n * x)
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Trapezoid weights `w_k ∝ ρ_n(k dx)` for `|k dx| < 1/n`, rescaled to sum to one.
    ///
    /// Index `m + k` holds the weight of offset `k ∈ [−m, m]`.
    pub fn discrete_weights(&self, dx: f64) -> Result<Vec<f64>, MollifyError> {
        let limit = 0.25 / self.n as f64;
        if !(dx > 0.0 && dx <= limit * (1.0 + 1e-12)) {
            return Err(MollifyError::Resolution {
                dx,
                n: self.n,
                limit,
            });
        }
        let m = (self.radius() / dx).floor() as i64;
        let raw: Vec<f64> = (-m..=m).map(|k| self.eval(k as f64 * dx) * dx).collect();
        let mass: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|w| w / mass).collect())
    }
}

/// Convolve uniform-grid samples with `ρ_n`; edges use constant extension.
pub fn mollify(samples: &[f64], dx: f64, n: usize) -> Result<Vec<f64>, MollifyError> {
    let weights = MollifierKernel::new(n)?.discrete_weights(dx)?;
    Ok(convolve(samples, &weights))
}

fn convolve(samples: &[f64], weights: &[f64]) -> Vec<f64> {
    let len = samples.len() as i64;
    let m = (weights.len() / 2) as i64;
    (0..len)
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .map(|(w_idx, w)| {
                    let k = w_idx as i64 - m;
                    w * samples[(i - k).clamp(0, len - 1) as usize]
                })
                .sum()
        })
        .collect()
}

/// Coefficients convolved with `ρ_n` in the state variable `x`.
///
/// Each coefficient is smoothed in `x` only, with the other arguments held
/// fixed, using the discrete kernel at spacing `1/(n · points_per_radius)`.
#[derive(Debug, Clone)]
pub struct Mollified<C> {
    inner: C,
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

impl<C: Coefficients> Mollified<C> {
    pub fn new(inner: C, n: usize) -> Result<Self, MollifyError> {
        const POINTS_PER_RADIUS: usize = 16;
        let kernel = MollifierKernel::new(n)?;
        let h = kernel.radius() / POINTS_PER_RADIUS as f64;
        let weights = kernel.discrete_weights(h)?;
        let m = (weights.len() / 2) as i64;
        let offsets = (-m..=m).map(|k| k as f64 * h).collect();
        Ok(Mollified {
            inner,
            offsets,
            weights,
        })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    fn smooth(&self, x: f64, f: impl Fn(f64) -> Result<f64, EvalError>) -> Result<f64, EvalError> {
        let mut acc = 0.0;
        for (o, w) in self.offsets.iter().zip(&self.weights) {
            acc += w * f(x - o)?;
        }
        Ok(acc)
    }
}

impl<C: Coefficients> Coefficients for Mollified<C> {
    fn b(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        self.smooth(x, |s| self.inner.b(t, s, y))
    }
    fn h(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        self.smooth(x, |s| self.inner.h(t, s, y))
    }
    fn sigma(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        self.smooth(x, |s| self.inner.sigma(t, s, y))
    }
    fn f(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError> {
        self.smooth(x, |s| self.inner.f(t, s, y, z))
    }
    fn g(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError> {
        self.smooth(x, |s| self.inner.g(t, s, y, z))
    }
    fn phi(&self, x: f64) -> Result<f64, EvalError> {
        self.smooth(x, |s| self.inner.phi(s))
    }
}

/// Largest adjacent difference quotient of grid samples.
pub fn lipschitz_quotient(samples: &[f64], dx: f64) -> f64 {
    samples
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / dx)
        .fold(0.0, f64::max)
}
