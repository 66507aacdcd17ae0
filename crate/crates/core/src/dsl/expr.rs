use std::fmt;

use super::dual::Scalar;
use crate::error::{Error, Result};

/// Byte offsets plus the 1-based line/column of the start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: usize,
    pub column: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(f64),
    State(usize),
    Param(usize),
    Time,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Expression node. Equality ignores source spans.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// Evaluates with states, parameters and time bound. Division by zero,
    /// logarithms and square roots outside their domain, and non-integer
    /// powers of negative numbers are errors, as is any non-finite result.
    pub fn eval<S: Scalar>(&self, state: &[S], params: &[S], t: S) -> Result<S> {
        let fail = || Error::Divergence {
            t: t.value(),
            state: state.iter().map(|s| s.value()).collect(),
        };
        let v = match &self.kind {
            ExprKind::Const(c) => S::from_f64(*c),
            ExprKind::State(i) => state[*i],
            ExprKind::Param(i) => params[*i],
            ExprKind::Time => t,
            ExprKind::Neg(e) => -e.eval(state, params, t)?,
            ExprKind::Binary(op, a, b) => {
                let a = a.eval(state, params, t)?;
                let b = b.eval(state, params, t)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(fail());
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a.value() < 0.0 && b.value().fract() != 0.0 {
                            return Err(fail());
                        }
                        a.pow(b)
                    }
                }
            }
            ExprKind::Call(f, arg) => {
                let x = arg.eval(state, params, t)?;
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if !(x.value() > 0.0) {
                            return Err(fail());
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tanh => x.tanh(),
                    Func::Sqrt => {
                        if x.value() < 0.0 {
                            return Err(fail());
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(fail())
        }
    }

    /// Renders with explicit parentheses around every compound operand, using
    /// the given names for states and parameters.
    pub fn display<'a>(&'a self, states: &'a [String], params: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay {
            expr: self,
            states,
            params,
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    states: &'a [String],
    params: &'a [String],
}

impl ExprDisplay<'_> {
    fn child<'b>(&'b self, e: &'b Expr) -> ExprDisplay<'b> {
        ExprDisplay {
            expr: e,
            states: self.states,
            params: self.params,
        }
    }

    fn operand(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match e.kind {
            ExprKind::Binary(..) | ExprKind::Neg(_) => write!(f, "({})", self.child(e)),
            _ => write!(f, "{}", self.child(e)),
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.expr.kind {
            ExprKind::Const(c) => write!(f, "{c:?}"),
            ExprKind::State(i) => f.write_str(&self.states[*i]),
            ExprKind::Param(i) => f.write_str(&self.params[*i]),
            ExprKind::Time => f.write_str("t"),
            ExprKind::Neg(e) => {
                f.write_str("-")?;
                self.operand(e, f)
            }
            ExprKind::Binary(op, a, b) => {
                self.operand(a, f)?;
                write!(f, " {} ", op.symbol())?;
                self.operand(b, f)
            }
            ExprKind::Call(func, arg) => write!(f, "{}({})", func.name(), self.child(arg)),
        }
    }
}
