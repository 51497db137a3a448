//! Positive eigenpairs of second-order elliptic systems with functional
//! boundary conditions.
//!
//! The system `L_i u_i = λ f_i(x, u, Du, w_i[u])` in Ω, `B_i u_i = λ ζ_i h_i[u]`
//! on ∂Ω is rewritten as the fixed-point problem `u = λ Φ(u)` with
//! `Φ(u)_i = K_i F_i(u) + γ_i h_i[u]`, and solved on the sphere `‖u‖₁ = ρ` of
//! the cone of non-negative `C¹` fields by normalized positive iteration.

mod band;
pub mod cli;
pub mod eigensolver;
pub mod elliptic;
pub mod error;
pub mod expr;
pub mod functionals;
pub mod hypotheses;
pub mod mesh;
pub mod system;

pub use error::{Error, Result};
