use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid specification: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("{source} (component {component}, node {node} at ({x}, {y}))")]
    AtNode {
        source: ExprError,
        component: usize,
        node: usize,
        x: f64,
        y: f64,
    },
    #[error("singular system: zero pivot in column {0}")]
    Singular(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(
        "norm collapse: ‖Φ(u)‖₁ = {norm:e} below floor {floor:e} at iteration {iteration}; \
         the positivity hypothesis (d) appears to fail"
    )]
    NormCollapse {
        norm: f64,
        floor: f64,
        iteration: usize,
    },
    #[error("no convergence after {iterations} iterations (step {step:e}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        step: f64,
        residual: f64,
    },
    #[error("converged iterate failed residual certification: residual {residual:e} > {tol:e}")]
    Uncertified { residual: f64, tol: f64 },
}
