//! Coefficient bundles `(b, h, σ, f, g, Φ)` and sampling-based assumption checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, Env, EvalError, Expr, ParseError, Var, VarSet};

/// Evaluable coefficient functions of the forward-backward system.
///
/// `b, h, σ` take `(t, x, y)`; `f, g` take `(t, x, y, z)`; `Φ` takes `x`.
pub trait Coefficients: Sync {
    fn b(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError>;
    fn h(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError>;
    fn sigma(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError>;
    fn f(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError>;
    fn g(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError>;
    fn phi(&self, x: f64) -> Result<f64, EvalError>;
}

impl<C: Coefficients + ?Sized> Coefficients for &C {
    fn b(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        (**self).b(t, x, y)
    }
    fn h(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        (**self).h(t, x, y)
    }
    fn sigma(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        (**self).sigma(t, x, y)
    }
    fn f(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError> {
        (**self).f(t, x, y, z)
    }
    fn g(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError> {
        (**self).g(t, x, y, z)
    }
    fn phi(&self, x: f64) -> Result<f64, EvalError> {
        (**self).phi(x)
    }
}

/// Which coefficient an expression fills. Fixes the admissible variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    B,
    H,
    Sigma,
    F,
    G,
    Phi,
}

impl Slot {
    pub const ALL: [Slot; 6] = [Slot::B, Slot::H, Slot::Sigma, Slot::F, Slot::G, Slot::Phi];

    pub fn name(self) -> &'static str {
        match self {
            Slot::B => "b",
            Slot::H => "h",
            Slot::Sigma => "sigma",
            Slot::F => "f",
            Slot::G => "g",
            Slot::Phi => "phi",
        }
    }

    pub fn allowed(self) -> VarSet {
        match self {
            Slot::B | Slot::H | Slot::Sigma => VarSet::of(&[Var::T, Var::X, Var::Y]),
            Slot::F | Slot::G => VarSet::of(&[Var::T, Var::X, Var::Y, Var::Z]),
            Slot::Phi => VarSet::of(&[Var::X]),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("coefficient {slot}: {source}")]
    Parse {
        slot: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("coefficient {slot} may not depend on variable {var}")]
    Arity { slot: &'static str, var: &'static str },
    #[error("constant {name} = {value} violates {rule}")]
    Constant {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
}

/// Structural constants attached to a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    /// Lipschitz (and linear growth) constant `L`.
    #[serde(rename = "L", default = "Constants::default_lipschitz")]
    pub lipschitz: f64,
    /// Uniform bound `M` for `|σ|` and `|Φ|`.
    #[serde(rename = "M", default = "Constants::default_bound")]
    pub bound: f64,
    /// Ellipticity floor `λ` with `σ² ≥ λ`.
    #[serde(default = "Constants::default_lambda")]
    pub lambda: f64,
    /// Moment exponent `β > 2`.
    #[serde(default = "Constants::default_beta")]
    pub beta: f64,
    /// Horizon.
    #[serde(rename = "T", default = "Constants::default_horizon")]
    pub horizon: f64,
}

impl Constants {
    fn default_lipschitz() -> f64 {
        1.0
    }
    fn default_bound() -> f64 {
        10.0
    }
    fn default_lambda() -> f64 {
        0.25
    }
    fn default_beta() -> f64 {
        4.0
    }
    fn default_horizon() -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        let check = |name, value: f64, ok: bool, rule| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(BundleError::Constant { name, value, rule })
            }
        };
        check("L", self.lipschitz, self.lipschitz > 0.0, "L > 0")?;
        check("M", self.bound, self.bound > 0.0, "M > 0")?;
        check("lambda", self.lambda, self.lambda > 0.0, "lambda > 0")?;
        check("beta", self.beta, self.beta > 2.0, "beta > 2")?;
        check("T", self.horizon, self.horizon > 0.0, "T > 0")
    }
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            lipschitz: Self::default_lipschitz(),
            bound: Self::default_bound(),
            lambda: Self::default_lambda(),
            beta: Self::default_beta(),
            horizon: Self::default_horizon(),
        }
    }
}

/// DSL-backed coefficient functions plus their constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBundle {
    b: Expr,
    h: Expr,
    sigma: Expr,
    f: Expr,
    g: Expr,
    phi: Expr,
    pub constants: Constants,
}

impl CoefficientBundle {
    /// Assemble a bundle, enforcing per-slot variable arity and the constants' ranges.
    pub fn new(exprs: [Expr; 6], constants: Constants) -> Result<Self, BundleError> {
        for (slot, e) in Slot::ALL.iter().zip(exprs.iter()) {
            let extra = e.variables();
            if !extra.is_subset(slot.allowed()) {
                let var = extra
                    .iter()
                    .find(|v| !slot.allowed().contains(*v))
                    .map(|v| v.name())
                    .unwrap_or("?");
                return Err(BundleError::Arity {
                    slot: slot.name(),
                    var,
                });
            }
        }
        constants.validate()?;
        let [b, h, sigma, f, g, phi] = exprs;
        Ok(CoefficientBundle {
            b,
            h,
            sigma,
            f,
            g,
            phi,
            constants,
        })
    }

    /// Parse all six coefficients from source text, in slot order `b, h, σ, f, g, Φ`.
    pub fn parse(sources: [&str; 6], constants: Constants) -> Result<Self, BundleError> {
        let mut exprs = Vec::with_capacity(6);
        for (slot, src) in Slot::ALL.iter().zip(sources) {
            exprs.push(dsl::parse(src).map_err(|source| BundleError::Parse {
                slot: slot.name(),
                source,
            })?);
        }
        let exprs: [Expr; 6] = exprs.try_into().expect("six slots");
        Self::new(exprs, constants)
    }

    pub fn builder() -> BundleBuilder {
        BundleBuilder::default()
    }

    pub fn expr(&self, slot: Slot) -> &Expr {
        match slot {
            Slot::B => &self.b,
            Slot::H => &self.h,
            Slot::Sigma => &self.sigma,
            Slot::F => &self.f,
            Slot::G => &self.g,
            Slot::Phi => &self.phi,
        }
    }

    /// Replace one coefficient expression.
    pub fn with_expr(&self, slot: Slot, e: Expr) -> Result<Self, BundleError> {
        let mut exprs = Slot::ALL.map(|s| self.expr(s).clone());
        exprs[Slot::ALL.iter().position(|s| *s == slot).unwrap()] = e;
        Self::new(exprs, self.constants)
    }

    /// The same bundle with `f` replaced by `f + eps`.
    pub fn with_f_shift(&self, eps: f64) -> Self {
        self.with_expr(Slot::F, self.f.clone() + Expr::num(eps))
            .expect("shifting f keeps its arity")
    }

    pub fn horizon(&self) -> f64 {
        self.constants.horizon
    }

    /// Whether any forward coefficient depends on `y`.
    pub fn forward_coupled(&self) -> bool {
        [&self.b, &self.h, &self.sigma]
            .iter()
            .any(|e| e.variables().contains(Var::Y))
    }
}

impl Coefficients for CoefficientBundle {
    fn b(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        self.b.eval(&Env::new(t, x, y, 0.0))
    }
    fn h(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        self.h.eval(&Env::new(t, x, y, 0.0))
    }
    fn sigma(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        self.sigma.eval(&Env::new(t, x, y, 0.0))
    }
    fn f(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError> {
        self.f.eval(&Env::new(t, x, y, z))
    }
    fn g(&self, t: f64, x: f64, y: f64, z: f64) -> Result<f64, EvalError> {
        self.g.eval(&Env::new(t, x, y, z))
    }
    fn phi(&self, x: f64) -> Result<f64, EvalError> {
        self.phi.eval(&Env::new(0.0, x, 0.0, 0.0))
    }
}

/// Convenience builder; unset coefficients default to `b = h = f = g = 0`,
/// `σ = 1`, `Φ = 0`.
#[derive(Debug, Clone)]
pub struct BundleBuilder {
    sources: [String; 6],
    constants: Constants,
}

impl Default for BundleBuilder {
    fn default() -> Self {
        BundleBuilder {
            sources: ["0", "0", "1", "0", "0", "0"].map(String::from),
            constants: Constants::default(),
        }
    }
}

impl BundleBuilder {
    fn set(mut self, slot: Slot, src: &str) -> Self {
        let i = Slot::ALL.iter().position(|s| *s == slot).unwrap();
        self.sources[i] = src.to_string();
        self
    }
    pub fn b(self, src: &str) -> Self {
        self.set(Slot::B, src)
    }
    pub fn h(self, src: &str) -> Self {
        self.set(Slot::H, src)
    }
    pub fn sigma(self, src: &str) -> Self {
        self.set(Slot::Sigma, src)
    }
    pub fn f(self, src: &str) -> Self {
        self.set(Slot::F, src)
    }
    pub fn g(self, src: &str) -> Self {
        self.set(Slot::G, src)
    }
    pub fn phi(self, src: &str) -> Self {
        self.set(Slot::Phi, src)
    }
    pub fn constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }
    pub fn lipschitz(mut self, l: f64) -> Self {
        self.constants.lipschitz = l;
        self
    }
    pub fn lambda(mut self, lambda: f64) -> Self {
        self.constants.lambda = lambda;
        self
    }
    pub fn bound(mut self, m: f64) -> Self {
        self.constants.bound = m;
        self
    }
    pub fn horizon(mut self, t: f64) -> Self {
        self.constants.horizon = t;
        self
    }
    pub fn build(self) -> Result<CoefficientBundle, BundleError> {
        let s = &self.sources;
        CoefficientBundle::parse(
            [&s[0], &s[1], &s[2], &s[3], &s[4], &s[5]].map(|x| x.as_str()),
            self.constants,
        )
    }
}

/// Uniformly spaced probe coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        Axis { min, max, n }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.n <= 1 {
            return vec![self.min];
        }
        (0..self.n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

/// Finite probe set in `(t, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGrid {
    pub t: Axis,
    pub x: Axis,
    pub y: Axis,
    pub z: Axis,
}

impl ProbeGrid {
    pub fn for_horizon(horizon: f64) -> Self {
        ProbeGrid {
            t: Axis::new(0.0, horizon, 5),
            x: Axis::new(-4.0, 4.0, 81),
            y: Axis::new(-2.0, 2.0, 9),
            z: Axis::new(-2.0, 2.0, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClauseReport {
    pub clause: String,
    /// Worst observed value (quotient, magnitude, or minimum for floors).
    pub observed: f64,
    /// The declared constant the observation is compared to.
    pub limit: f64,
    pub pass: bool,
    /// `(t, x, y, z)` where the worst value was seen.
    pub at: [f64; 4],
}

impl ClauseReport {
    pub fn ratio(&self) -> f64 {
        self.observed / self.limit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub clauses: Vec<ClauseReport>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.clauses.iter().all(|c| c.pass)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseReport> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

struct Worst {
    value: f64,
    at: [f64; 4],
}

impl Worst {
    fn max() -> Self {
        Worst {
            value: f64::NEG_INFINITY,
            at: [0.0; 4],
        }
    }
    fn min() -> Self {
        Worst {
            value: f64::INFINITY,
            at: [0.0; 4],
        }
    }
    fn push_max(&mut self, v: f64, at: [f64; 4]) {
        if v > self.value {
            self.value = v;
            self.at = at;
        }
    }
    fn push_min(&mut self, v: f64, at: [f64; 4]) {
        if v < self.value {
            self.value = v;
            self.at = at;
        }
    }
}

/// Check the standing assumptions on the probe set. Failures are reported, not raised.
pub fn verify_assumptions(
    c: &CoefficientBundle,
    probe: &ProbeGrid,
    tolerance: f64,
) -> Result<AssumptionReport, EvalError> {
    let k = c.constants;
    let ts = probe.t.points();
    let xs = probe.x.points();
    let ys = probe.y.points();
    let zs = probe.z.points();
    let mut clauses = Vec::new();
    let upper = |name: String, w: Worst, limit: f64| ClauseReport {
        pass: w.value <= limit + tolerance,
        clause: name,
        observed: w.value,
        limit,
        at: w.at,
    };

    // x- and y-Lipschitz (L1 metric), growth and time regularity for b, h, σ
    for slot in [Slot::B, Slot::H, Slot::Sigma] {
        let e = c.expr(slot);
        let eval = |t: f64, x: f64, y: f64| e.eval(&Env::new(t, x, y, 0.0));
        let mut lip = Worst::max();
        let mut growth = Worst::max();
        let mut tlip = Worst::max();
        for (it, &t) in ts.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                for (iy, &y) in ys.iter().enumerate() {
                    let v = eval(t, x, y)?;
                    let at = [t, x, y, 0.0];
                    growth.push_max(v.abs() / (1.0 + y.abs()), at);
                    if ix + 1 < xs.len() {
                        let q = (eval(t, xs[ix + 1], y)? - v).abs() / (xs[ix + 1] - x);
                        lip.push_max(q, at);
                    }
                    if iy + 1 < ys.len() {
                        let q = (eval(t, x, ys[iy + 1])? - v).abs() / (ys[iy + 1] - y);
                        lip.push_max(q, at);
                    }
                    if it + 1 < ts.len() {
                        let q = (eval(ts[it + 1], x, y)? - v).abs() / (ts[it + 1] - t);
                        tlip.push_max(q, at);
                    }
                }
            }
        }
        clauses.push(upper(format!("lipschitz:{}", slot.name()), lip, k.lipschitz));
        clauses.push(upper(format!("growth:{}", slot.name()), growth, k.lipschitz));
        if ts.len() > 1 {
            clauses.push(upper(format!("time-lipschitz:{}", slot.name()), tlip, k.lipschitz));
        }
    }

    for slot in [Slot::F, Slot::G] {
        let e = c.expr(slot);
        let eval = |t: f64, x: f64, y: f64, z: f64| e.eval(&Env::new(t, x, y, z));
        let mut lip = Worst::max();
        let mut growth = Worst::max();
        let mut tlip = Worst::max();
        for (it, &t) in ts.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                for (iy, &y) in ys.iter().enumerate() {
                    for (iz, &z) in zs.iter().enumerate() {
                        let v = eval(t, x, y, z)?;
                        let at = [t, x, y, z];
                        growth.push_max(v.abs() / (1.0 + y.abs() + z.abs()), at);
                        if ix + 1 < xs.len() {
                            let q = (eval(t, xs[ix + 1], y, z)? - v).abs() / (xs[ix + 1] - x);
                            lip.push_max(q, at);
                        }
                        if iy + 1 < ys.len() {
                            let q = (eval(t, x, ys[iy + 1], z)? - v).abs() / (ys[iy + 1] - y);
                            lip.push_max(q, at);
                        }
                        if iz + 1 < zs.len() {
                            let q = (eval(t, x, y, zs[iz + 1])? - v).abs() / (zs[iz + 1] - z);
                            lip.push_max(q, at);
                        }
                        if it + 1 < ts.len() {
                            let q = (eval(ts[it + 1], x, y, z)? - v).abs() / (ts[it + 1] - t);
                            tlip.push_max(q, at);
                        }
                    }
                }
            }
        }
        clauses.push(upper(format!("lipschitz:{}", slot.name()), lip, k.lipschitz));
        clauses.push(upper(format!("growth:{}", slot.name()), growth, k.lipschitz));
        if ts.len() > 1 {
            clauses.push(upper(format!("time-lipschitz:{}", slot.name()), tlip, k.lipschitz));
        }
    }

    let mut phi_lip = Worst::max();
    let mut phi_bound = Worst::max();
    for (ix, &x) in xs.iter().enumerate() {
        let v = c.phi(x)?;
        phi_bound.push_max(v.abs(), [0.0, x, 0.0, 0.0]);
        if ix + 1 < xs.len() {
            let q = (c.phi(xs[ix + 1])? - v).abs() / (xs[ix + 1] - x);
            phi_lip.push_max(q, [0.0, x, 0.0, 0.0]);
        }
    }
    clauses.push(upper("lipschitz:phi".into(), phi_lip, k.lipschitz));

    let mut ellipticity = Worst::min();
    let mut sigma_bound = Worst::max();
    for &t in &ts {
        for &x in &xs {
            for &y in &ys {
                let s = c.sigma(t, x, y)?;
                ellipticity.push_min(s * s, [t, x, y, 0.0]);
                sigma_bound.push_max(s.abs(), [t, x, y, 0.0]);
            }
        }
    }
    clauses.push(ClauseReport {
        clause: "ellipticity".into(),
        pass: ellipticity.value >= k.lambda - tolerance,
        observed: ellipticity.value,
        limit: k.lambda,
        at: ellipticity.at,
    });
    clauses.push(upper("bound:sigma".into(), sigma_bound, k.bound));
    clauses.push(upper("bound:phi".into(), phi_bound, k.bound));
    Ok(AssumptionReport { clauses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> ProbeGrid {
        ProbeGrid::for_horizon(1.0)
    }

    #[test]
    fn constant_sigma_passes_ellipticity() {
        let c = CoefficientBundle::builder()
            .sigma("1.0")
            .lambda(0.5)
            .build()
            .unwrap();
        let r = verify_assumptions(&c, &probe(), 1e-9).unwrap();
        let e = r.clause("ellipticity").unwrap();
        assert!(e.pass);
        assert_eq!(e.observed, 1.0);
    }

    #[test]
    fn steep_terminal_fails_lipschitz() {
        let c = CoefficientBundle::builder().phi("2*x").build().unwrap();
        let r = verify_assumptions(&c, &probe(), 1e-9).unwrap();
        let l = r.clause("lipschitz:phi").unwrap();
        assert!(!l.pass);
        assert!((l.observed - 2.0).abs() < 1e-12);
        assert!(!r.all_pass());
    }

    #[test]
    fn tanh_terminal_passes() {
        // dense difference quotients of tanh never exceed max |tanh'| = 1
        let c = CoefficientBundle::builder().phi("tanh(x)").build().unwrap();
        let mut p = probe();
        p.x = Axis::new(-3.0, 3.0, 6001);
        let r = verify_assumptions(&c, &p, 1e-9).unwrap();
        let l = r.clause("lipschitz:phi").unwrap();
        assert!(l.pass);
        assert!(l.observed <= 1.0);
        assert!(l.observed > 0.999);
    }

    #[test]
    fn arity_is_enforced() {
        let err = CoefficientBundle::builder().b("z + x").build().unwrap_err();
        assert_eq!(err, BundleError::Arity { slot: "b", var: "z" });
        let err = CoefficientBundle::builder().phi("t*x").build().unwrap_err();
        assert_eq!(err, BundleError::Arity { slot: "phi", var: "t" });
        assert!(CoefficientBundle::builder().f("z*y + t").build().is_ok());
    }

    #[test]
    fn constants_are_validated() {
        let k = Constants {
            beta: 2.0,
            ..Constants::default()
        };
        let err = CoefficientBundle::builder().constants(k).build().unwrap_err();
        assert!(matches!(err, BundleError::Constant { name: "beta", .. }));
    }

    #[test]
    fn domain_errors_carry_coordinates() {
        let c = CoefficientBundle::builder().b("1/x").build().unwrap();
        let mut p = probe();
        p.x = Axis::new(-1.0, 1.0, 3);
        let err = verify_assumptions(&c, &p, 1e-9).unwrap_err();
        assert_eq!(err.env.x, 0.0);
    }

    #[test]
    fn lipschitz_bundle_never_exceeds_constant() {
        let c = CoefficientBundle::builder()
            .b("0.5*sin(y) + 0.5*cos(x)")
            .h("0.2*tanh(x - y)")
            .sigma("1 + 0.25*tanh(y)")
            .f("0.3*sin(x) - 0.2*y + 0.1*tanh(z)")
            .g("0.1*cos(x + y)")
            .phi("tanh(x)")
            .build()
            .unwrap();
        let r = verify_assumptions(&c, &probe(), 1e-9).unwrap();
        for cl in r.clauses.iter().filter(|c| c.clause.starts_with("lipschitz")) {
            assert!(cl.pass, "{cl:?}");
        }
    }

    #[test]
    fn f_shift_adds_constant() {
        let c = CoefficientBundle::builder().f("x*z").build().unwrap();
        let s = c.with_f_shift(0.25);
        assert_eq!(s.f(0.0, 2.0, 0.0, 3.0).unwrap(), 6.25);
        assert!(!c.forward_coupled());
        let coupled = CoefficientBundle::builder().sigma("1 + 0.1*sin(y)").build().unwrap();
        assert!(coupled.forward_coupled());
    }
}
