//! The one-dimensional G-function and the volatility interval it encodes.
//!
//! With `Γ = [σ̲², σ̄²]`,
//!
//! ```text
//! G(a) = ½ sup_{γ∈Γ} γ a = ½ σ̄² a⁺ − ½ σ̲² a⁻
//! ```
//!
//! The supremum of a linear function over an interval sits at an endpoint, so
//! the interval form is exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GParamsError {
    #[error("GParams: sigma_lo must be finite and > 0, got {0}")]
    NonPositiveLower(f64),
    #[error("GParams: sigma_hi must be finite, got {0}")]
    NonFiniteUpper(f64),
    #[error("GParams: sigma_lo ({lo}) must not exceed sigma_hi ({hi})")]
    Ordering { lo: f64, hi: f64 },
}

/// Volatility uncertainty interval `[σ̲, σ̄]` with `0 < σ̲ ≤ σ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGParams", into = "RawGParams")]
pub struct GParams {
    sigma_lo: f64,
    sigma_hi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGParams {
    sigma_lo: f64,
    sigma_hi: f64,
}

impl TryFrom<RawGParams> for GParams {
    type Error = GParamsError;

    fn try_from(raw: RawGParams) -> Result<Self, Self::Error> {
        GParams::new(raw.sigma_lo, raw.sigma_hi)
    }
}

impl From<GParams> for RawGParams {
    fn from(p: GParams) -> Self {
        RawGParams {
            sigma_lo: p.sigma_lo,
            sigma_hi: p.sigma_hi,
        }
    }
}

impl GParams {
    pub fn new(sigma_lo: f64, sigma_hi: f64) -> Result<Self, GParamsError> {
        if !(sigma_lo.is_finite() && sigma_lo > 0.0) {
            return Err(GParamsError::NonPositiveLower(sigma_lo));
        }
        if !sigma_hi.is_finite() {
            return Err(GParamsError::NonFiniteUpper(sigma_hi));
        }
        if sigma_lo > sigma_hi {
            return Err(GParamsError::Ordering {
                lo: sigma_lo,
                hi: sigma_hi,
            });
        }
        Ok(Self { sigma_lo, sigma_hi })
    }

    /// Classical (single-volatility) parameters.
    pub fn classical(sigma: f64) -> Result<Self, GParamsError> {
        Self::new(sigma, sigma)
    }

    pub fn sigma_lo(&self) -> f64 {
        self.sigma_lo
    }

    pub fn sigma_hi(&self) -> f64 {
        self.sigma_hi
    }

    /// Lower end of the scenario set `Γ`.
    pub fn gamma_lo(&self) -> f64 {
        self.sigma_lo * self.sigma_lo
    }

    /// Upper end of the scenario set `Γ`.
    pub fn gamma_hi(&self) -> f64 {
        self.sigma_hi * self.sigma_hi
    }

    pub fn is_classical(&self) -> bool {
        self.sigma_lo == self.sigma_hi
    }

    /// Whether `gamma` lies in `Γ` (closed interval), allowing a few ulps so
    /// that a typed `0.64` counts as `0.8²`.
    pub fn contains_gamma(&self, gamma: f64) -> bool {
        self.snap_gamma(gamma).is_some()
    }

    /// `gamma` clamped into `Γ` when within round-off of it.
    pub fn snap_gamma(&self, gamma: f64) -> Option<f64> {
        let (lo, hi) = (self.gamma_lo(), self.gamma_hi());
        let slack = 4.0 * f64::EPSILON;
        (gamma >= lo * (1.0 - slack) && gamma <= hi * (1.0 + slack)).then(|| gamma.clamp(lo, hi))
    }

    /// `G(a) = ½σ̄²a⁺ − ½σ̲²a⁻`.
    #[inline]
    pub fn g_eval(&self, a: f64) -> f64 {
        0.5 * self.g_argmax(a) * a
    }

    /// The maximizing `γ ∈ Γ` of `½γa`. Ties at `a = 0` resolve to `σ̄²`.
    #[inline]
    pub fn g_argmax(&self, a: f64) -> f64 {
        if a < 0.0 {
            self.gamma_lo()
        } else {
            self.gamma_hi()
        }
    }
}

/// Free-function form of [`GParams::g_eval`].
pub fn g_eval(params: &GParams, a: f64) -> f64 {
    params.g_eval(a)
}

/// Free-function form of [`GParams::g_argmax`].
pub fn g_argmax(params: &GParams, a: f64) -> f64 {
    params.g_argmax(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> GParams {
        GParams::new(0.8, 1.2).unwrap()
    }

    #[test]
    fn examples() {
        assert!((g_eval(&p(), 2.0) - 1.44).abs() < 1e-15);
        assert_eq!(g_eval(&p(), 0.0), 0.0);
        assert!((g_eval(&p(), -1.0) + 0.32).abs() < 1e-15);
        assert!((g_argmax(&p(), 3.0) - 1.44).abs() < 1e-15);
        assert!((g_argmax(&p(), -3.0) - 0.64).abs() < 1e-15);
        assert!((g_argmax(&p(), 0.0) - 1.44).abs() < 1e-15);
    }

    #[test]
    fn typed_endpoints_snap_into_interval() {
        let params = p();
        assert_ne!(0.64, params.gamma_lo());
        assert_eq!(params.snap_gamma(0.64), Some(params.gamma_lo()));
        assert_eq!(params.snap_gamma(1.44), Some(params.gamma_hi()));
        assert_eq!(params.snap_gamma(1.0), Some(1.0));
        assert_eq!(params.snap_gamma(0.639), None);
        assert!(!params.contains_gamma(1.4401));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(
            GParams::new(0.0, 1.0),
            Err(GParamsError::NonPositiveLower(_))
        ));
        assert!(matches!(
            GParams::new(1.2, 0.8),
            Err(GParamsError::Ordering { .. })
        ));
        assert!(GParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn matches_sup_over_interval() {
        let params = p();
        for &a in &[-3.0, -0.1, 0.0, 0.7, 5.0] {
            let brute = (0..=1000)
                .map(|i| {
                    let gamma =
                        params.gamma_lo() + (params.gamma_hi() - params.gamma_lo()) * i as f64 / 1000.0;
                    0.5 * gamma * a
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((brute - params.g_eval(a)).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn monotone_gap(a in -1e3f64..1e3, d in 0f64..1e3, lo in 0.1f64..2.0, w in 0f64..2.0) {
            let params = GParams::new(lo, lo + w).unwrap();
            let b = a - d;
            let gap = params.g_eval(a) - params.g_eval(b);
            prop_assert!(gap >= 0.5 * params.gamma_lo() * (a - b) - 1e-9 * (1.0 + a.abs() + b.abs()));
        }

        #[test]
        fn subadditive_and_homogeneous(a in -1e3f64..1e3, b in -1e3f64..1e3, lambda in 0f64..10.0) {
            let params = p();
            prop_assert!(params.g_eval(a + b) <= params.g_eval(a) + params.g_eval(b) + 1e-9);
            let lhs = params.g_eval(lambda * a);
            let rhs = lambda * params.g_eval(a);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn argmax_consistent(a in -1e6f64..1e6) {
            let params = p();
            prop_assert_eq!(0.5 * params.g_argmax(a) * a, params.g_eval(a));
        }
    }
}
