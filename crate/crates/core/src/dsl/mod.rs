//! A small arithmetic language for coefficient functions.
//!
//! Expressions range over the variables `t, x, y, z`, decimal literals, the
//! binary operators `+ - * / ^`, unary minus, and the functions
//! `sin cos exp tanh abs sqrt min max`.
//!
//! ```
//! use gfbsde::dsl::{parse, Env};
//! let e = parse("0.5*x + sin(y)").unwrap();
//! let v = e.eval(&Env { x: 2.0, ..Env::default() }).unwrap();
//! assert_eq!(v, 1.0);
//! ```

mod ast;
mod eval;
mod parser;

pub use ast::{BinOp, Expr, Func, Var, VarSet};
pub use eval::{DomainKind, Env, EvalError};
pub use parser::{parse, ParseError};
