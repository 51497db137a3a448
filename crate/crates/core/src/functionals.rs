//! Compact functionals `w_i[u]`, `h_i[u]` built from point values, gradient
//! point values and domain integrals, combined by an outer expression.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr};
use crate::mesh::Mesh;
use crate::system::State;

/// Functional AST. Components are 1-based; gradient axes are 1 (x₁) or 2 (x₂).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    /// `u_i(x₀)`, with `x₀` snapped to the nearest mesh node.
    Point { component: usize, at: [f64; 2] },
    /// `∂u_i/∂x_j (x₀)`, snapped like `Point`.
    GradPoint {
        component: usize,
        axis: usize,
        at: [f64; 2],
    },
    /// `∫_Ω g(x, u, Du) dx` over the mesh quadrature.
    Integral { integrand: Expr },
    /// Outer expression over named sub-functional values (and `pi`).
    Combine {
        expr: Expr,
        #[serde(default)]
        args: BTreeMap<String, FunctionalSpec>,
    },
}

/// Names visible to pointwise expressions over an `n`-component state:
/// `x1 x2 pi u1.. du1_dx1 du1_dx2 .. gn1sq ..`.
pub fn field_var_names(n: usize) -> Vec<String> {
    let mut names = vec!["x1".to_string(), "x2".to_string(), "pi".to_string()];
    names.extend((1..=n).map(|i| format!("u{i}")));
    for i in 1..=n {
        names.push(format!("du{i}_dx1"));
        names.push(format!("du{i}_dx2"));
    }
    names.extend((1..=n).map(|i| format!("gn{i}sq")));
    names
}

/// Fill the slots laid out by [`field_var_names`] for one node.
pub(crate) fn fill_field_slots(slots: &mut [f64], state: &State, node: usize) {
    let n = state.n();
    let p = state.mesh().node(node);
    slots[0] = p[0];
    slots[1] = p[1];
    slots[2] = PI;
    for i in 0..n {
        let g = state.grad(i)[node];
        slots[3 + i] = state.field(i)[node];
        slots[3 + n + 2 * i] = g[0];
        slots[3 + n + 2 * i + 1] = g[1];
        slots[3 + 3 * n + i] = g[0] * g[0] + g[1] * g[1];
    }
}

/// A functional resolved against a mesh and component count.
#[derive(Debug, Clone)]
pub enum Functional {
    Point { component: usize, node: usize },
    GradPoint { component: usize, axis: usize, node: usize },
    Integral { integrand: BoundExpr, width: usize },
    Combine { expr: BoundExpr, args: Vec<Functional> },
}

impl FunctionalSpec {
    pub fn point(component: usize, at: [f64; 2]) -> Self {
        FunctionalSpec::Point { component, at }
    }

    pub fn grad_point(component: usize, axis: usize, at: [f64; 2]) -> Self {
        FunctionalSpec::GradPoint {
            component,
            axis,
            at,
        }
    }

    pub fn integral(integrand: &str) -> Result<Self> {
        Ok(FunctionalSpec::Integral {
            integrand: Expr::parse(integrand)?,
        })
    }

    pub fn combine(expr: &str, args: Vec<(&str, FunctionalSpec)>) -> Result<Self> {
        Ok(FunctionalSpec::Combine {
            expr: Expr::parse(expr)?,
            args: args.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        })
    }

    /// The functional identically equal to `c`.
    pub fn constant(c: f64) -> Self {
        FunctionalSpec::Combine {
            expr: Expr::num(c),
            args: BTreeMap::new(),
        }
    }

    /// Check references against `n` components and snap evaluation points.
    pub fn prepare(&self, n: usize, mesh: &Mesh) -> Result<Functional> {
        let check_component = |c: usize| {
            if c == 0 || c > n {
                Err(Error::Config(format!(
                    "functional references component {c}, but the system has {n}"
                )))
            } else {
                Ok(c - 1)
            }
        };
        Ok(match self {
            FunctionalSpec::Point { component, at } => Functional::Point {
                component: check_component(*component)?,
                node: mesh.nearest_node(*at)?,
            },
            FunctionalSpec::GradPoint {
                component,
                axis,
                at,
            } => {
                if !(1..=2).contains(axis) {
                    return Err(Error::Config(format!("gradient axis must be 1 or 2, got {axis}")));
                }
                Functional::GradPoint {
                    component: check_component(*component)?,
                    axis: axis - 1,
                    node: mesh.nearest_node(*at)?,
                }
            }
            FunctionalSpec::Integral { integrand } => {
                let names = field_var_names(n);
                Functional::Integral {
                    integrand: integrand.bind(&names).map_err(|e| {
                        Error::Config(format!("integrand `{integrand}`: {e}"))
                    })?,
                    width: names.len(),
                }
            }
            FunctionalSpec::Combine { expr, args } => {
                let mut names: Vec<String> = args.keys().cloned().collect();
                names.push("pi".into());
                let bound = expr
                    .bind(&names)
                    .map_err(|e| Error::Config(format!("combine expression `{expr}`: {e}")))?;
                Functional::Combine {
                    expr: bound,
                    args: args
                        .values()
                        .map(|a| a.prepare(n, mesh))
                        .collect::<Result<_>>()?,
                }
            }
        })
    }

    /// One-shot evaluation; prefer [`FunctionalSpec::prepare`] in loops.
    pub fn evaluate(&self, state: &State) -> Result<f64> {
        self.prepare(state.n(), state.mesh())?.evaluate(state)
    }
}

impl Functional {
    pub fn evaluate(&self, state: &State) -> Result<f64> {
        match self {
            Functional::Point { component, node } => Ok(state.field(*component)[*node]),
            Functional::GradPoint {
                component,
                axis,
                node,
            } => Ok(state.grad(*component)[*node][*axis]),
            Functional::Integral { integrand, width } => {
                let mut slots = vec![0.0; *width];
                let mut values = Vec::with_capacity(state.mesh().len());
                for node in 0..state.mesh().len() {
                    fill_field_slots(&mut slots, state, node);
                    values.push(integrand.eval_slots(&slots)?);
                }
                Ok(state.mesh().integrate(&values))
            }
            Functional::Combine { expr, args } => {
                let mut vals = args
                    .iter()
                    .map(|a| a.evaluate(state))
                    .collect::<Result<Vec<f64>>>()?;
                vals.push(PI);
                Ok(expr.eval_slots(&vals)?)
            }
        }
    }
}

/// The nonlocal coefficients and boundary functionals of the two-component
/// Kirchhoff-type system on the unit disk, in the order `(w₁, w₂, h₁, h₂)`:
///
/// ```text
/// w₁ = (e^{u₂(0)} + ∫|∇u₁|²)⁻¹          h₁ = u₁(0) + (∂u₂/∂x₁(0))²
/// w₂ = e^{−∫(|∇u₁|² + |∇u₂|²)}          h₂ = u₁(0)² + ∫|∇u₂|²
/// ```
pub fn example_functionals() -> [FunctionalSpec; 4] {
    let origin = [0.0, 0.0];
    let w1 = FunctionalSpec::combine(
        "1/(exp(pe) + ig)",
        vec![
            ("pe", FunctionalSpec::point(2, origin)),
            ("ig", FunctionalSpec::integral("gn1sq").unwrap()),
        ],
    );
    let w2 = FunctionalSpec::combine(
        "exp(-ig)",
        vec![("ig", FunctionalSpec::integral("gn1sq + gn2sq").unwrap())],
    );
    let h1 = FunctionalSpec::combine(
        "pe + gp^2",
        vec![
            ("pe", FunctionalSpec::point(1, origin)),
            ("gp", FunctionalSpec::grad_point(2, 1, origin)),
        ],
    );
    let h2 = FunctionalSpec::combine(
        "pe^2 + ig",
        vec![
            ("pe", FunctionalSpec::point(1, origin)),
            ("ig", FunctionalSpec::integral("gn2sq").unwrap()),
        ],
    );
    [w1.unwrap(), w2.unwrap(), h1.unwrap(), h2.unwrap()]
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn disk() -> Arc<Mesh> {
        Arc::new(Mesh::disk(1.0, 32, 64).unwrap())
    }

    fn state_from(mesh: &Arc<Mesh>, f: &[&dyn Fn([f64; 2]) -> f64]) -> State {
        let fields = f
            .iter()
            .map(|g| mesh.nodes().iter().map(|&p| g(p)).collect())
            .collect();
        State::new(mesh.clone(), fields)
    }

    #[test]
    fn zero_state_values() {
        let mesh = disk();
        let zero = State::zeros(mesh.clone(), 2);
        let [w1, w2, h1, h2] = example_functionals();
        assert_eq!(w1.evaluate(&zero).unwrap(), 1.0);
        assert_eq!(w2.evaluate(&zero).unwrap(), 1.0);
        assert_eq!(h1.evaluate(&zero).unwrap(), 0.0);
        assert_eq!(h2.evaluate(&zero).unwrap(), 0.0);
    }

    #[test]
    fn constant_first_component() {
        let mesh = disk();
        let s = state_from(&mesh, &[&|_| 0.7, &|_| 0.0]);
        let [_, _, h1, h2] = example_functionals();
        assert!((h1.evaluate(&s).unwrap() - 0.7).abs() < 1e-15);
        assert!((h2.evaluate(&s).unwrap() - 0.49).abs() < 1e-15);
    }

    #[test]
    fn gradient_integral_of_linear_field() {
        let mesh = Arc::new(Mesh::disk(1.0, 64, 128).unwrap());
        let s = state_from(&mesh, &[&|_| 0.0, &|p| p[0]]);
        let ig = FunctionalSpec::integral("gn2sq").unwrap();
        assert!((ig.evaluate(&s).unwrap() - PI).abs() < 1e-3);
    }

    #[test]
    fn integral_matches_direct_quadrature() {
        let mesh = disk();
        let s = state_from(&mesh, &[&|p| (p[0] * 3.0).sin().abs(), &|p| p[1] * p[1]]);
        let text = "exp(u1)*(1 + gn2sq) + x1*du1_dx2";
        let ig = FunctionalSpec::integral(text).unwrap();
        let e = Expr::parse(text).unwrap();
        let vals: Vec<f64> = (0..mesh.len())
            .map(|k| {
                let g1 = s.grad(0)[k];
                let g2 = s.grad(1)[k];
                let env = [
                    ("u1", s.field(0)[k]),
                    ("gn2sq", g2[0] * g2[0] + g2[1] * g2[1]),
                    ("x1", mesh.node(k)[0]),
                    ("du1_dx2", g1[1]),
                ];
                e.eval(&env).unwrap()
            })
            .collect();
        let direct = mesh.integrate(&vals);
        assert!((ig.evaluate(&s).unwrap() - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn center_gradient_of_radial_field_vanishes() {
        let mesh = disk();
        let s = state_from(&mesh, &[&|p| (-(p[0] * p[0] + p[1] * p[1])).exp()]);
        for axis in 1..=2 {
            let gp = FunctionalSpec::grad_point(1, axis, [0.0, 0.0]);
            assert!(gp.evaluate(&s).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_references_rejected() {
        let mesh = disk();
        assert!(FunctionalSpec::point(3, [0.0, 0.0]).prepare(2, &mesh).is_err());
        assert!(FunctionalSpec::point(0, [0.0, 0.0]).prepare(2, &mesh).is_err());
        assert!(FunctionalSpec::point(1, [2.0, 0.0]).prepare(2, &mesh).is_err());
        assert!(FunctionalSpec::grad_point(1, 3, [0.0, 0.0]).prepare(2, &mesh).is_err());
        assert!(FunctionalSpec::integral("u3").unwrap().prepare(2, &mesh).is_err());
        assert!(FunctionalSpec::combine("a + b", vec![("a", FunctionalSpec::constant(1.0))])
            .unwrap()
            .prepare(2, &mesh)
            .is_err());
    }

    #[test]
    fn domain_errors_propagate() {
        let mesh = disk();
        let zero = State::zeros(mesh, 1);
        let f = FunctionalSpec::combine("1/pe", vec![("pe", FunctionalSpec::point(1, [0.0, 0.0]))])
            .unwrap();
        assert!(matches!(f.evaluate(&zero), Err(Error::Expr(_))));
    }

    #[test]
    fn json_shape() {
        let [w1, ..] = example_functionals();
        let text = serde_json::to_string(&w1).unwrap();
        assert_eq!(
            text,
            r#"{"kind":"combine","expr":"1 / (exp(pe) + ig)","args":{"ig":{"kind":"integral","integrand":"gn1sq"},"pe":{"kind":"point","component":2,"at":[0.0,0.0]}}}"#
        );
        let back: FunctionalSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, w1);
        let bad = r#"{"kind":"point","component":1,"at":[0,0],"extra":1}"#;
        assert!(serde_json::from_str::<FunctionalSpec>(bad).is_err());
    }

    #[test]
    fn continuity_probe() {
        use rand::{Rng, SeedableRng};
        let mesh = disk();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let base: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..mesh.len()).map(|_| rng.gen_range(0.0..0.5)).collect())
            .collect();
        let dir: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..mesh.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let u = State::new(mesh.clone(), base.clone());
        for f in example_functionals() {
            let f0 = f.evaluate(&u).unwrap();
            let mut last = f64::INFINITY;
            for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
                let shifted = base
                    .iter()
                    .zip(&dir)
                    .map(|(b, d)| b.iter().zip(d).map(|(x, y)| x + eps * y).collect())
                    .collect();
                let delta = (f.evaluate(&State::new(mesh.clone(), shifted)).unwrap() - f0).abs();
                assert!(delta < last, "{f:?}: {delta} !< {last}");
                last = delta;
            }
        }
    }
}
