//! Textual model definitions: parsing, evaluation, forward-mode Jacobians
//! and printing back to source form.

mod dual;
mod expr;
mod parser;

use std::fmt;
use std::sync::Arc;

pub use dual::{Dual, Scalar};
pub use expr::{BinOp, Expr, ExprKind, Func, Span};

use crate::error::{Error, Result};
use crate::models::{ModelSystem, ParamSpec, VectorField};

/// Initial value for states declared without one.
pub const UNSPECIFIED_INITIAL_VALUE: f64 = 1.0;
const DSL_DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownIdentifier,
    MissingDerivative,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

/// A parsed model: one derivative expression per state, in state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDef {
    pub state_names: Vec<String>,
    pub param_names: Vec<String>,
    pub state_defaults: Vec<Option<f64>>,
    pub param_defaults: Vec<Option<f64>>,
    pub derivatives: Vec<Expr>,
}

pub fn parse_model(text: &str) -> std::result::Result<ModelDef, ParseError> {
    parser::parse(text)
}

/// Evaluates one expression at `(state, params, t)`.
pub fn eval_expr(expr: &Expr, state: &[f64], params: &[f64], t: f64) -> Result<f64> {
    expr.eval(state, params, t)
}

impl ModelDef {
    pub fn dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn eval_rhs(&self, state: &[f64], params: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_inputs(state, params)?;
        self.derivatives
            .iter()
            .map(|e| e.eval(state, params, t))
            .collect()
    }

    /// Row-major Jacobian from one dual-number pass per state column.
    pub fn jacobian_dual(&self, state: &[f64], params: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_inputs(state, params)?;
        let n = self.dim();
        let mut jac = vec![0.0; n * n];
        fill_jacobian(&self.derivatives, state, params, t, &mut jac)?;
        Ok(jac)
    }

    fn check_inputs(&self, state: &[f64], params: &[f64]) -> Result<()> {
        Error::check_len("state", state.len(), self.dim())?;
        Error::check_len("parameter vector", params.len(), self.param_names.len())
    }

    /// Source text that parses back to an equal definition.
    pub fn to_source(&self) -> String {
        self.to_string()
    }

    pub fn into_model(self, name: impl Into<String>) -> Result<ModelSystem> {
        let params = self
            .param_names
            .iter()
            .zip(&self.param_defaults)
            .map(|(n, d)| ParamSpec::new(n, *d))
            .collect();
        let initial = self
            .state_defaults
            .iter()
            .map(|d| d.unwrap_or(UNSPECIFIED_INITIAL_VALUE))
            .collect();
        let field = DslField {
            derivatives: self.derivatives,
        };
        ModelSystem::new(
            name,
            self.state_names,
            params,
            initial,
            DSL_DEFAULT_DT,
            Arc::new(field),
        )
    }
}

fn fill_jacobian(exprs: &[Expr], state: &[f64], params: &[f64], t: f64, jac: &mut [f64]) -> Result<()> {
    let n = state.len();
    let mut ds: Vec<Dual> = state.iter().map(|&v| Dual::constant(v)).collect();
    let dp: Vec<Dual> = params.iter().map(|&v| Dual::constant(v)).collect();
    let dt = Dual::constant(t);
    for j in 0..n {
        ds[j].deriv = 1.0;
        for (i, e) in exprs.iter().enumerate() {
            jac[i * n + j] = e.eval(&ds, &dp, dt)?.deriv;
        }
        ds[j].deriv = 0.0;
    }
    Ok(())
}

fn write_decls(f: &mut fmt::Formatter<'_>, header: &str, names: &[String], defaults: &[Option<f64>]) -> fmt::Result {
    if names.is_empty() {
        return Ok(());
    }
    write!(f, "{header}:")?;
    for (i, (name, default)) in names.iter().zip(defaults).enumerate() {
        f.write_str(if i == 0 { " " } else { ", " })?;
        f.write_str(name)?;
        if let Some(v) = default {
            write!(f, " = {v:?}")?;
        }
    }
    writeln!(f)
}

impl fmt::Display for ModelDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_decls(f, "states", &self.state_names, &self.state_defaults)?;
        write_decls(f, "params", &self.param_names, &self.param_defaults)?;
        for (name, e) in self.state_names.iter().zip(&self.derivatives) {
            writeln!(f, "d{name}/dt = {}", e.display(&self.state_names, &self.param_names))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct DslField {
    derivatives: Vec<Expr>,
}

impl VectorField for DslField {
    fn rhs(&self, t: f64, y: &[f64], p: &[f64], dy: &mut [f64]) -> Result<()> {
        for (out, e) in dy.iter_mut().zip(&self.derivatives) {
            *out = e.eval(y, p, t)?;
        }
        Ok(())
    }

    fn jacobian(&self, t: f64, y: &[f64], p: &[f64], jac: &mut [f64]) -> Result<()> {
        fill_jacobian(&self.derivatives, y, p, t, jac)
    }
}
