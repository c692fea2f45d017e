//! Closed-form expression language used by metric, field and body files.
//!
//! The grammar is conventional infix arithmetic over the variables `x1..xn`.
//! `^` is right-associative and binds tighter than unary minus, so `-2^2`
//! evaluates to `-4`. The full EBNF lives in `docs/grammar.md`.

mod diff;
mod parse;

use std::fmt;

pub use parse::parse;

/// Built-in functions. `sign` is produced by differentiating `abs` and is
/// accepted by the parser as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn apply(self, a: f64) -> f64 {
        match self {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tan => a.tan(),
            Func::Exp => a.exp(),
            Func::Log => {
                if a > 0.0 {
                    a.ln()
                } else {
                    f64::NAN
                }
            }
            Func::Sqrt => {
                if a >= 0.0 {
                    a.sqrt()
                } else {
                    f64::NAN
                }
            }
            Func::Abs => a.abs(),
            Func::Sign => {
                if a > 0.0 {
                    1.0
                } else if a < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Expression tree. Variables are zero-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Atan2(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {column}: expected {}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
    },
    #[error("unknown identifier `{name}` at column {column}")]
    UnknownIdentifier { name: String, column: usize },
    #[error("non-finite value in `{subexpr}`")]
    NonFinite { subexpr: String },
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Largest variable index used plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Atan2(a, b) => a.arity().max(b.arity()),
        }
    }

    /// Fast evaluation without finiteness checks; used on hot paths where the
    /// caller validates the result.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => pow(a.eval(x), b, x),
            Expr::Call(f, a) => f.apply(a.eval(x)),
            Expr::Atan2(a, b) => a.eval(x).atan2(b.eval(x)),
        }
    }

    /// Checked evaluation: reports the innermost subexpression producing a
    /// non-finite value.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ExprError> {
        let checked = |e: &Expr, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ExprError::NonFinite {
                    subexpr: e.to_string(),
                })
            }
        };
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.evaluate(x)?,
            Expr::Add(a, b) => a.evaluate(x)? + b.evaluate(x)?,
            Expr::Sub(a, b) => a.evaluate(x)? - b.evaluate(x)?,
            Expr::Mul(a, b) => a.evaluate(x)? * b.evaluate(x)?,
            Expr::Div(a, b) => a.evaluate(x)? / b.evaluate(x)?,
            Expr::Pow(a, b) => {
                let base = a.evaluate(x)?;
                b.evaluate(x)?;
                pow(base, b, x)
            }
            Expr::Call(f, a) => f.apply(a.evaluate(x)?),
            Expr::Atan2(a, b) => a.evaluate(x)?.atan2(b.evaluate(x)?),
        };
        checked(self, v)
    }

    /// Symbolic partial derivative with respect to variable `var`
    /// (zero-based), simplified by constant folding only.
    pub fn differentiate(&self, var: usize) -> Expr {
        diff::derivative(self, var)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn pow(base: f64, exponent: &Expr, x: &[f64]) -> f64 {
    // integer literal exponents take the exact multiplication path
    if let Expr::Num(p) = exponent {
        if p.fract() == 0.0 && p.abs() <= 64.0 {
            return base.powi(*p as i32);
        }
    }
    base.powf(exponent.eval(x))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool| -> fmt::Result {
            if paren {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        let p = self.precedence();
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                // `-2` would read back as a literal
                wrap(f, a, a.precedence() < p || matches!(**a, Expr::Num(_)))
            }
            Expr::Add(a, b) | Expr::Mul(a, b) => {
                let op = if matches!(self, Expr::Add(..)) {
                    " + "
                } else {
                    " * "
                };
                wrap(f, a, a.precedence() < p)?;
                write!(f, "{op}")?;
                wrap(f, b, b.precedence() <= p)
            }
            Expr::Sub(a, b) | Expr::Div(a, b) => {
                let op = if matches!(self, Expr::Sub(..)) {
                    " - "
                } else {
                    " / "
                };
                wrap(f, a, a.precedence() < p)?;
                write!(f, "{op}")?;
                wrap(f, b, b.precedence() <= p)
            }
            Expr::Pow(a, b) => {
                wrap(f, a, a.precedence() <= p)?;
                write!(f, "^")?;
                // exponent parses as a unary expression
                wrap(f, b, b.precedence() < 3)
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Atan2(a, b) => write!(f, "atan2({a}, {b})"),
        }
    }
}
