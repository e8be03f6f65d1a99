use thiserror::Error;

use super::ast::{BinOp, Expr, Func, Var};

/// Variable bindings. Unused variables are simply ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Env {
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        Env { t, x, y, z }
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::T => self.t,
            Var::X => self.x,
            Var::Y => self.y,
            Var::Z => self.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    SqrtOfNegative,
    NegativeBasePower,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error ({kind:?}) in `{expr}` at t={}, x={}, y={}, z={}", env.t, env.x, env.y, env.z)]
pub struct EvalError {
    pub kind: DomainKind,
    /// Printed form of the offending sub-expression.
    pub expr: String,
    pub env: Env,
}

impl Expr {
    /// Evaluate under `env`.
    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        let fail = |kind, e: &Expr| EvalError {
            kind,
            expr: e.to_string(),
            env: *env,
        };
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => env.get(*v),
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Binary(op, a, b) => {
                let l = a.eval(env)?;
                let r = b.eval(env)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(fail(DomainKind::DivisionByZero, self));
                        }
                        l / r
                    }
                    BinOp::Pow => {
                        if r.fract() == 0.0 && r.abs() <= 64.0 {
                            if l == 0.0 && r < 0.0 {
                                return Err(fail(DomainKind::DivisionByZero, self));
                            }
                            l.powi(r as i32)
                        } else if l < 0.0 {
                            return Err(fail(DomainKind::NegativeBasePower, self));
                        } else {
                            l.powf(r)
                        }
                    }
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval(env)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(fail(DomainKind::SqrtOfNegative, self));
                        }
                        a.sqrt()
                    }
                    Func::Min => a.min(args[1].eval(env)?),
                    Func::Max => a.max(args[1].eval(env)?),
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    fn ev(src: &str, x: f64) -> Result<f64, EvalError> {
        parse(src).unwrap().eval(&Env {
            x,
            ..Env::default()
        })
    }

    #[test]
    fn examples() {
        assert_eq!(ev("x^2", 3.0).unwrap(), 9.0);
        let err = ev("1/x", 0.0).unwrap_err();
        assert_eq!(err.kind, DomainKind::DivisionByZero);
        assert_eq!(err.expr, "(1.0 / x)");
        let v = ev("exp(-1/(1-x^2))", 0.0).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3678794).abs() < 1e-7);
    }

    #[test]
    fn guarded_operations() {
        assert_eq!(
            ev("sqrt(x)", -1.0).unwrap_err().kind,
            DomainKind::SqrtOfNegative
        );
        assert_eq!(
            ev("x^0.5", -4.0).unwrap_err().kind,
            DomainKind::NegativeBasePower
        );
        assert_eq!(ev("x^3", -2.0).unwrap(), -8.0);
        assert_eq!(ev("max(x, 1) + min(x, 1)", 3.0).unwrap(), 4.0);
        assert_eq!(ev("abs(x) + tanh(0) + cos(0) + sin(0)", -2.0).unwrap(), 3.0);
    }

    #[test]
    fn deterministic() {
        let e = parse("sin(x)*exp(-x^2) + t*y - z").unwrap();
        let env = Env::new(0.3, 1.7, -0.2, 0.9);
        let a = e.eval(&env).unwrap();
        let b = e.eval(&env).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
