//! The problem object and the compact cone map
//! `Φ(u)_i = K_i F_i(u) + γ_i h_i[u]`, whose rays `u = λ Φ(u)` are the eigenpairs.

use std::sync::Arc;

use crate::elliptic::{BoundaryOperatorSpec, DiscreteOperator, EllipticOperatorSpec};
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr};
use crate::functionals::{field_var_names, fill_field_slots, Functional, FunctionalSpec};
use crate::mesh::Mesh;

/// Nodal values of an `n`-component field with cached Cartesian gradients.
#[derive(Debug, Clone)]
pub struct State {
    mesh: Arc<Mesh>,
    fields: Vec<Vec<f64>>,
    grads: Vec<Vec<[f64; 2]>>,
}

impl State {
    pub fn new(mesh: Arc<Mesh>, fields: Vec<Vec<f64>>) -> State {
        for f in &fields {
            assert_eq!(f.len(), mesh.len(), "field length does not match mesh");
        }
        let grads = fields.iter().map(|f| mesh.gradient(f)).collect();
        State {
            mesh,
            fields,
            grads,
        }
    }

    pub fn zeros(mesh: Arc<Mesh>, n: usize) -> State {
        State::constant(mesh, n, 0.0)
    }

    /// Every component identically `value`.
    pub fn constant(mesh: Arc<Mesh>, n: usize, value: f64) -> State {
        let len = mesh.len();
        let fields = vec![vec![value; len]; n];
        let grads = vec![vec![[0.0, 0.0]; len]; n];
        State {
            mesh,
            fields,
            grads,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n(&self) -> usize {
        self.fields.len()
    }

    /// Component `i` (0-based).
    pub fn field(&self, i: usize) -> &[f64] {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[Vec<f64>] {
        &self.fields
    }

    pub fn grad(&self, i: usize) -> &[[f64; 2]] {
        &self.grads[i]
    }

    pub fn into_fields(self) -> Vec<Vec<f64>> {
        self.fields
    }

    /// `max{‖u_i‖∞, ‖∂u_i/∂x_j‖∞}`.
    pub fn c1_norm(&self) -> f64 {
        let values = self.fields.iter().flatten().map(|v| v.abs());
        let partials = self.grads.iter().flatten().flat_map(|g| [g[0].abs(), g[1].abs()]);
        values.chain(partials).fold(0.0, f64::max)
    }

    /// Every nodal value is at least `-tol`.
    pub fn in_cone(&self, tol: f64) -> bool {
        self.min_value() >= -tol
    }

    pub fn min_value(&self) -> f64 {
        self.fields.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, factor: f64) -> State {
        let fields = self
            .fields
            .iter()
            .map(|f| f.iter().map(|v| v * factor).collect())
            .collect();
        State::new(self.mesh.clone(), fields)
    }

    /// `self − other`, gradients recomputed.
    pub fn sub(&self, other: &State) -> State {
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        State::new(self.mesh.clone(), fields)
    }
}

/// One equation of the system as read from configuration.
#[derive(Debug, Clone)]
pub struct ComponentSpec {
    pub operator: EllipticOperatorSpec,
    pub boundary: BoundaryOperatorSpec,
    pub zeta: Expr,
    pub f: Expr,
    pub w: FunctionalSpec,
    pub h: FunctionalSpec,
}

#[derive(Debug, Clone)]
struct Component {
    spec: ComponentSpec,
    op: DiscreteOperator,
    gamma: Vec<f64>,
    f: BoundExpr,
    w: Functional,
    h: Functional,
}

/// Assembled system: factored operators, lifts `γ_i` and prepared functionals.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    mesh: Arc<Mesh>,
    components: Vec<Component>,
    names: Vec<String>,
}

/// Names available to the nonlinearities `f_i`: the pointwise field names plus `w`.
pub fn nonlinearity_var_names(n: usize) -> Vec<String> {
    let mut names = field_var_names(n);
    names.push("w".into());
    names
}

impl ProblemSpec {
    pub fn new(mesh: Arc<Mesh>, specs: Vec<ComponentSpec>) -> Result<ProblemSpec> {
        let n = specs.len();
        if n == 0 {
            return Err(Error::Config("the system needs at least one component".into()));
        }
        let names = nonlinearity_var_names(n);
        let mut components = Vec::with_capacity(n);
        for (i, spec) in specs.into_iter().enumerate() {
            let ctx = |what: &str, e: &dyn std::fmt::Display| {
                Error::Config(format!("component {}: {what}: {e}", i + 1))
            };
            let op = DiscreteOperator::assemble(&spec.operator, &spec.boundary, mesh.clone())
                .map_err(|e| ctx("operator", &e))?;
            for b in mesh.boundary_nodes() {
                let p = mesh.node(b);
                let z = spec
                    .zeta
                    .eval(&[("x1", p[0]), ("x2", p[1]), ("pi", std::f64::consts::PI)])
                    .map_err(|e| ctx("zeta", &e))?;
                if z < 0.0 {
                    return Err(ctx("zeta must be non-negative", &format!("{z} at boundary node {b}")));
                }
            }
            let gamma = op.solve_lift(&spec.zeta)?;
            let gmin = gamma.iter().copied().fold(f64::INFINITY, f64::min);
            if gmin < -1e-12 {
                return Err(ctx("boundary lift gamma is negative", &gmin));
            }
            let f = spec.f.bind(&names).map_err(|e| ctx("f", &e))?;
            let w = spec.w.prepare(n, &mesh).map_err(|e| ctx("w", &e))?;
            let h = spec.h.prepare(n, &mesh).map_err(|e| ctx("h", &e))?;
            components.push(Component {
                spec,
                op,
                gamma,
                f,
                w,
                h,
            });
        }
        Ok(ProblemSpec {
            mesh,
            components,
            names,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn component_spec(&self, i: usize) -> &ComponentSpec {
        &self.components[i].spec
    }

    pub fn operator(&self, i: usize) -> &DiscreteOperator {
        &self.components[i].op
    }

    pub fn gamma(&self, i: usize) -> &[f64] {
        &self.components[i].gamma
    }

    /// Operator warnings (e.g. mixed derivatives), prefixed with the component.
    pub fn warnings(&self) -> Vec<String> {
        self.components
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.op.warnings().iter().map(move |w| format!("component {}: {w}", i + 1)))
            .collect()
    }

    fn check_state(&self, u: &State) -> Result<()> {
        if u.n() != self.n() || u.mesh().len() != self.mesh.len() {
            return Err(Error::Precondition(format!(
                "state has {} components on {} nodes, problem has {} on {}",
                u.n(),
                u.mesh().len(),
                self.n(),
                self.mesh.len()
            )));
        }
        Ok(())
    }

    pub fn w_value(&self, i: usize, u: &State) -> Result<f64> {
        self.components[i].w.evaluate(u)
    }

    pub fn h_value(&self, i: usize, u: &State) -> Result<f64> {
        self.components[i].h.evaluate(u)
    }

    /// `F_i(u)(x) = f_i(x, u(x), Du(x), w_i[u])` at every node.
    pub fn apply_f(&self, u: &State) -> Result<Vec<Vec<f64>>> {
        self.check_state(u)?;
        let width = self.names.len();
        let mut slots = vec![0.0; width];
        let mut out = Vec::with_capacity(self.n());
        for (i, c) in self.components.iter().enumerate() {
            let w = c.w.evaluate(u)?;
            slots[width - 1] = w;
            let mut values = Vec::with_capacity(self.mesh.len());
            for node in 0..self.mesh.len() {
                fill_field_slots(&mut slots, u, node);
                let v = c.f.eval_slots(&slots).map_err(|source| {
                    let p = self.mesh.node(node);
                    Error::AtNode {
                        source,
                        component: i + 1,
                        node,
                        x: p[0],
                        y: p[1],
                    }
                })?;
                values.push(v);
            }
            out.push(values);
        }
        Ok(out)
    }

    /// `Φ(u)_i = K_i F_i(u) + γ_i h_i[u]`.
    pub fn apply_phi(&self, u: &State) -> Result<State> {
        let forcing = self.apply_f(u)?;
        let mut fields = Vec::with_capacity(self.n());
        for (c, g) in self.components.iter().zip(forcing) {
            let mut v = c.op.solve_k(&g)?;
            let h = c.h.evaluate(u)?;
            if h != 0.0 {
                for (x, gam) in v.iter_mut().zip(&c.gamma) {
                    *x += h * gam;
                }
            }
            fields.push(v);
        }
        Ok(State::new(self.mesh.clone(), fields))
    }

    /// `‖u − λ Φ(u)‖₁`.
    pub fn residual(&self, u: &State, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Precondition(format!(
                "eigenvalue must be positive and finite, got {lambda}"
            )));
        }
        let phi = self.apply_phi(u)?;
        Ok(u.sub(&phi.scaled(lambda)).c1_norm())
    }
}

/// Numerical eigenpair: `u` on the sphere `‖u‖₁ = ρ` with `u ≈ λ Φ(u)`.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub u: State,
    pub lambda: f64,
    pub rho: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Largest negative nodal value removed by clipping over all iterations.
    pub clip: f64,
    /// Relaxation weight in effect at termination.
    pub relaxation: f64,
}
