//! Numerical checks of the positivity hypotheses behind the existence of
//! eigenpairs on `∂P_ρ`: bounds on `w_i`, a lower bound for `f_i` on the
//! box `Π_ρ`, a lower bound for `h_i`, and a positive margin `φ`.
//!
//! Conditions quantified over the cone ball or the box are checked by seeded
//! sampling and can only be falsified, never proved. Nodal checks (lift,
//! boundary data, declared lower bound) are exhaustive over the mesh.
//! Every witness can be re-derived from `(seed, index)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expr};
use crate::functionals::field_var_names;
use crate::mesh::{Mesh, MeshKind};
use crate::system::{nonlinearity_var_names, ProblemSpec, State};

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 42;

/// Trigonometric modes per axis in cone samples.
const MODES: usize = 6;

/// Declared bounds for one component. `w_lo`, `w_hi` and `h_lower` may use
/// `rho` and `pi`; `f_lower` may also use `x1`, `x2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentBounds {
    pub w_lo: Expr,
    pub w_hi: Expr,
    pub f_lower: Expr,
    pub h_lower: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypothesisDecl {
    pub components: Vec<ComponentBounds>,
}

/// A declaration evaluated at one `ρ` on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBounds {
    pub w_lo: f64,
    pub w_hi: f64,
    pub h_lower: f64,
    /// `f_lower` at every node.
    pub f_lower: Vec<f64>,
}

impl HypothesisDecl {
    pub fn new(components: Vec<ComponentBounds>) -> Self {
        HypothesisDecl { components }
    }

    /// Evaluate the declaration at `rho` and check its invariants.
    pub fn resolve(&self, mesh: &Mesh, n: usize, rho: f64) -> Result<Vec<ResolvedBounds>> {
        if self.components.len() != n {
            return Err(Error::Config(format!(
                "hypotheses declare {} components, the system has {n}",
                self.components.len()
            )));
        }
        let mut problems = Vec::new();
        let mut out = Vec::with_capacity(n);
        for (i, c) in self.components.iter().enumerate() {
            let k = i + 1;
            let scalar = |name: &str, e: &Expr| {
                e.eval(&[("rho", rho), ("pi", PI)])
                    .map_err(|err| Error::Config(format!("hypotheses component {k}: {name}: {err}")))
            };
            let w_lo = scalar("w_lo", &c.w_lo)?;
            let w_hi = scalar("w_hi", &c.w_hi)?;
            let h_lower = scalar("h_lower", &c.h_lower)?;
            if w_lo > w_hi {
                problems.push(format!("component {k}: w_lo = {w_lo} exceeds w_hi = {w_hi}"));
            }
            if h_lower < 0.0 {
                problems.push(format!("component {k}: h_lower = {h_lower} is negative"));
            }
            let mut f_lower = Vec::with_capacity(mesh.len());
            for (node, p) in mesh.nodes().iter().enumerate() {
                let v = c
                    .f_lower
                    .eval(&[("x1", p[0]), ("x2", p[1]), ("pi", PI), ("rho", rho)])
                    .map_err(|err| {
                        Error::Config(format!("hypotheses component {k}: f_lower at node {node}: {err}"))
                    })?;
                f_lower.push(v);
            }
            if let Some((node, v)) = f_lower
                .iter()
                .copied()
                .enumerate()
                .find(|&(_, v)| v < 0.0)
            {
                problems.push(format!("component {k}: f_lower = {v} is negative at node {node}"));
            }
            out.push(ResolvedBounds {
                w_lo,
                w_hi,
                h_lower,
                f_lower,
            });
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(Error::Invalid(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Supported,
    Violated,
    NotChecked,
}

/// How a check was carried out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Falsification only.
    Sampled { count: usize, seed: u64 },
    /// Every mesh node.
    Exhaustive { nodes: usize },
    /// Direct computation on the discretization.
    Computed,
}

/// A re-derivable offending input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// The zero state.
    Apex,
    /// `cone_sample(seed, index)`.
    Ball { seed: u64, index: usize },
    /// `cone_sample(seed, index)` rescaled to `‖u‖₁ = ρ`.
    Sphere { seed: u64, index: usize },
    /// A point of `Π_ρ`; `seed`/`index` are absent for the deterministic
    /// corner probe `u = 0, v = 0, w = w_lo`.
    Box {
        seed: Option<u64>,
        index: Option<usize>,
        node: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        w: f64,
    },
    Node { node: usize },
    Component,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Hypothesis label: `w_bounds`, `f_lower`, `h_lower`, `phi`, `sphere`, `lift`, `zeta`, `f_lower_sign`.
    pub condition: String,
    /// 1-based component, absent for system-wide checks.
    pub component: Option<usize>,
    pub method: Method,
    pub verdict: Verdict,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub evaluated: usize,
    pub violations: usize,
    pub witness: Option<Witness>,
    /// Value at the witness.
    pub witness_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub rho: f64,
    pub checks: Vec<Check>,
}

impl SampleReport {
    /// Concatenation; associative.
    pub fn merge(mut self, other: SampleReport) -> SampleReport {
        self.checks.extend(other.checks);
        self
    }

    pub fn verdict(&self) -> Verdict {
        combine_verdicts(self.checks.iter().map(|c| c.verdict))
    }

    /// One verdict per condition label.
    pub fn condition_verdicts(&self) -> BTreeMap<String, Verdict> {
        let mut by: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
        for c in &self.checks {
            by.entry(c.condition.clone()).or_default().push(c.verdict);
        }
        by.into_iter()
            .map(|(k, v)| (k, combine_verdicts(v.into_iter())))
            .collect()
    }

    pub fn find(&self, condition: &str, component: Option<usize>) -> Option<&Check> {
        self.checks
            .iter()
            .find(|c| c.condition == condition && c.component == component)
    }
}

fn combine_verdicts(vs: impl Iterator<Item = Verdict>) -> Verdict {
    let mut any_supported = false;
    for v in vs {
        match v {
            Verdict::Violated => return Verdict::Violated,
            Verdict::Supported => any_supported = true,
            Verdict::NotChecked => {}
        }
    }
    if any_supported {
        Verdict::Supported
    } else {
        Verdict::NotChecked
    }
}

/// Running extrema and the worst violation.
struct Tally {
    lower: Option<f64>,
    upper: Option<f64>,
    min: f64,
    max: f64,
    evaluated: usize,
    violations: usize,
    worst: Option<(f64, Witness, f64)>,
}

impl Tally {
    fn new(lower: Option<f64>, upper: Option<f64>) -> Tally {
        Tally {
            lower,
            upper,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            evaluated: 0,
            violations: 0,
            worst: None,
        }
    }

    /// Record one value; an evaluation failure counts as an unbounded violation.
    fn observe(&mut self, value: Option<f64>, witness: impl FnOnce() -> Witness) {
        self.evaluated += 1;
        let shortfall = match value {
            Some(v) if v.is_finite() => {
                self.min = self.min.min(v);
                self.max = self.max.max(v);
                let below = self.lower.map_or(0.0, |lo| lo - v);
                let above = self.upper.map_or(0.0, |hi| v - hi);
                below.max(above)
            }
            _ => f64::INFINITY,
        };
        if shortfall > 0.0 {
            self.violations += 1;
            if self.worst.as_ref().map_or(true, |(s, _, _)| shortfall > *s) {
                self.worst = Some((shortfall, witness(), value.unwrap_or(f64::NAN)));
            }
        }
    }

    fn finish(self, condition: &str, component: Option<usize>, method: Method) -> Check {
        let seen = self.min <= self.max;
        let verdict = if self.violations > 0 {
            Verdict::Violated
        } else if self.evaluated == 0 {
            Verdict::NotChecked
        } else {
            Verdict::Supported
        };
        let (witness, witness_value) = match self.worst {
            Some((_, w, v)) => (Some(w), v.is_finite().then_some(v)),
            None => (None, None),
        };
        Check {
            condition: condition.to_string(),
            component,
            method,
            verdict,
            lower: self.lower,
            upper: self.upper,
            min: seen.then_some(self.min),
            max: seen.then_some(self.max),
            evaluated: self.evaluated,
            violations: self.violations,
            witness,
            witness_value,
        }
    }
}

fn check_count(rho: f64, count: usize) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Precondition(format!("rho must be positive and finite, got {rho}")));
    }
    if count == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Independent generator for sample `index` of stream `seed`.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Affine map of the mesh bounding box onto `[0, π]²`.
fn box_coordinates(mesh: &Mesh) -> Vec<[f64; 2]> {
    let (x0, sx, y0, sy) = match mesh.kind() {
        MeshKind::Disk { radius, .. } => (-radius, PI / (2.0 * radius), -radius, PI / (2.0 * radius)),
        MeshKind::Rectangle { lx, ly, .. } => (0.0, PI / lx, 0.0, PI / ly),
    };
    mesh.nodes()
        .iter()
        .map(|p| [(p[0] - x0) * sx, (p[1] - y0) * sy])
        .collect()
}

/// `(cos k s, sin k s)` and `(cos k t, sin k t)` for `k < MODES` at every node.
fn harmonic_tables(mesh: &Mesh) -> Harmonics {
    let table = |x: f64| {
        let mut out = [[0.0; 2]; MODES];
        for (k, slot) in out.iter_mut().enumerate() {
            let (s, c) = (k as f64 * x).sin_cos();
            *slot = [c, s];
        }
        out
    };
    box_coordinates(mesh)
        .into_iter()
        .map(|[s, t]| (table(s), table(t)))
        .collect()
}

/// Sample `index` of the cone ball: each component is
/// `Σ_{a,b<6} c_ab cos(a s + b t + φ_ab)` over box coordinates `(s, t)`,
/// clipped at zero, and the state is scaled to a uniform norm in `(0, ρ]`.
pub fn cone_sample(mesh: &Arc<Mesh>, n: usize, rho: f64, seed: u64, index: usize) -> State {
    cone_sample_with(mesh, &harmonic_tables(mesh), n, rho, seed, index)
}

type Harmonics = Vec<([[f64; 2]; MODES], [[f64; 2]; MODES])>;

fn cone_sample_with(
    mesh: &Arc<Mesh>,
    harmonics: &Harmonics,
    n: usize,
    rho: f64,
    seed: u64,
    index: usize,
) -> State {
    let mut rng = sample_rng(seed, index);
    let mut fields = Vec::with_capacity(n);
    for _ in 0..n {
        // complex amplitudes c e^{iφ}
        let amp: Vec<[f64; 2]> = (0..MODES * MODES)
            .map(|_| {
                let c: f64 = rng.gen_range(-1.0..=1.0);
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                [c * phase.cos(), c * phase.sin()]
            })
            .collect();
        let field = harmonics
            .iter()
            .map(|(hs, ht)| {
                let mut total = 0.0;
                for (a, &[ca, sa]) in hs.iter().enumerate() {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (b, &[cb, sb]) in ht.iter().enumerate() {
                        let [ar, ai] = amp[a * MODES + b];
                        re += ar * cb - ai * sb;
                        im += ar * sb + ai * cb;
                    }
                    total += re * ca - im * sa;
                }
                total.max(0.0)
            })
            .collect();
        fields.push(field);
    }
    let target = rho * (1.0 - rng.gen::<f64>());
    let state = State::new(mesh.clone(), fields);
    let norm = state.c1_norm();
    if norm > 0.0 {
        state.scaled(target / norm)
    } else {
        state
    }
}

/// `count` seeded samples of the cone ball `{u ≥ 0 : ‖u‖₁ ≤ ρ}`.
pub fn sample_cone_ball(mesh: &Arc<Mesh>, n: usize, rho: f64, count: usize, seed: u64) -> Vec<State> {
    let harmonics = harmonic_tables(mesh);
    (0..count)
        .into_par_iter()
        .map(|i| cone_sample_with(mesh, &harmonics, n, rho, seed, i))
        .collect()
}

/// Rescale onto `‖u‖₁ = ρ`; `None` for the zero state.
pub fn to_sphere(u: &State, rho: f64) -> Option<State> {
    let norm = u.c1_norm();
    (norm > 0.0).then(|| u.scaled(rho / norm))
}

/// Per-component margins `‖K_i f_lower_i + h_lower_i γ_i‖∞` and their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiValues {
    pub per_component: Vec<f64>,
    pub max: f64,
}

impl PhiValues {
    /// Index of a component with positive margin, if any.
    pub fn positive_component(&self) -> Option<usize> {
        self.per_component.iter().position(|&v| v > 0.0)
    }
}

pub fn compute_phi(p: &ProblemSpec, d: &HypothesisDecl, rho: f64) -> Result<PhiValues> {
    let bounds = d.resolve(p.mesh(), p.n(), rho)?;
    phi_from_bounds(p, &bounds)
}

fn phi_from_bounds(p: &ProblemSpec, bounds: &[ResolvedBounds]) -> Result<PhiValues> {
    let mut per_component = Vec::with_capacity(p.n());
    for (i, b) in bounds.iter().enumerate() {
        let k = p.operator(i).solve_k(&b.f_lower)?;
        let sup = k
            .iter()
            .zip(p.gamma(i))
            .map(|(kv, g)| (kv + b.h_lower * g).abs())
            .fold(0.0, f64::max);
        per_component.push(sup);
    }
    let max = per_component.iter().copied().fold(0.0, f64::max);
    Ok(PhiValues { per_component, max })
}

/// Checks over the cone ball: declared `w` interval and `h` lower bound on
/// `count` samples plus the apex `u = 0`; the lower bound `‖Φ(u)‖₁ ≥ max φ`
/// on the samples rescaled to the sphere; the positive margin; and the
/// exhaustive nodal checks on the lift, boundary data and `f_lower`.
pub fn check_bounds(
    p: &ProblemSpec,
    d: &HypothesisDecl,
    rho: f64,
    count: usize,
    seed: u64,
) -> Result<SampleReport> {
    check_count(rho, count)?;
    let bounds = d.resolve(p.mesh(), p.n(), rho)?;
    let phi = phi_from_bounds(p, &bounds)?;
    let n = p.n();
    let mesh = p.mesh();
    let sampled = Method::Sampled { count, seed };

    struct Eval {
        w: Vec<Option<f64>>,
        h: Vec<Option<f64>>,
        sphere: Option<Option<f64>>,
    }
    let evaluate = |u: &State, sphere: bool| Eval {
        w: (0..n).map(|i| p.w_value(i, u).ok()).collect(),
        h: (0..n).map(|i| p.h_value(i, u).ok()).collect(),
        sphere: if sphere {
            to_sphere(u, rho).map(|s| p.apply_phi(&s).ok().map(|v| v.c1_norm()))
        } else {
            None
        },
    };
    let apex = evaluate(&State::zeros(mesh.clone(), n), false);
    let harmonics = harmonic_tables(mesh);
    let evals: Vec<Eval> = (0..count)
        .into_par_iter()
        .map(|i| evaluate(&cone_sample_with(mesh, &harmonics, n, rho, seed, i), true))
        .collect();

    let mut checks = Vec::new();
    for (i, b) in bounds.iter().enumerate() {
        let mut w = Tally::new(Some(b.w_lo), Some(b.w_hi));
        let mut h = Tally::new(Some(b.h_lower), None);
        w.observe(apex.w[i], || Witness::Apex);
        h.observe(apex.h[i], || Witness::Apex);
        for (index, e) in evals.iter().enumerate() {
            w.observe(e.w[i], || Witness::Ball { seed, index });
            h.observe(e.h[i], || Witness::Ball { seed, index });
        }
        checks.push(w.finish("w_bounds", Some(i + 1), sampled.clone()));
        checks.push(h.finish("h_lower", Some(i + 1), sampled.clone()));
    }

    let mut sphere = Tally::new(Some(phi.max), None);
    for (index, e) in evals.iter().enumerate() {
        if let Some(v) = e.sphere {
            sphere.observe(v, || Witness::Sphere { seed, index });
        }
    }
    checks.push(sphere.finish("sphere", None, sampled.clone()));

    for (i, &v) in phi.per_component.iter().enumerate() {
        let mut t = Tally::new(None, None);
        t.observe(Some(v), || Witness::Component);
        let mut c = t.finish("phi", Some(i + 1), Method::Computed);
        c.verdict = if v > 0.0 { Verdict::Supported } else { Verdict::NotChecked };
        checks.push(c);
    }
    let mut margin = Tally::new(None, None);
    margin.observe(Some(phi.max), || Witness::Component);
    let mut c = margin.finish("phi", None, Method::Computed);
    if phi.max <= 0.0 {
        c.verdict = Verdict::Violated;
        c.violations = 1;
        c.witness = Some(Witness::Component);
        c.witness_value = Some(phi.max);
    }
    checks.push(c);

    let nodes = mesh.len();
    let boundary: Vec<usize> = mesh.boundary_nodes().collect();
    for (i, b) in bounds.iter().enumerate() {
        let mut lift = Tally::new(Some(0.0), None);
        for (node, &g) in p.gamma(i).iter().enumerate() {
            lift.observe(Some(g), || Witness::Node { node });
        }
        checks.push(lift.finish("lift", Some(i + 1), Method::Exhaustive { nodes }));

        let zeta = &p.component_spec(i).zeta;
        let mut z = Tally::new(Some(0.0), None);
        for &node in &boundary {
            let x = mesh.node(node);
            let v = zeta.eval(&[("x1", x[0]), ("x2", x[1]), ("pi", PI)]).ok();
            z.observe(v, || Witness::Node { node });
        }
        checks.push(z.finish("zeta", Some(i + 1), Method::Exhaustive { nodes: boundary.len() }));

        let mut fl = Tally::new(Some(0.0), None);
        for (node, &v) in b.f_lower.iter().enumerate() {
            fl.observe(Some(v), || Witness::Node { node });
        }
        checks.push(fl.finish("f_lower_sign", Some(i + 1), Method::Exhaustive { nodes }));
    }
    Ok(SampleReport { rho, checks })
}

/// One point `(x, u, v, w)` of `Π_ρ` (`w` has one entry per component).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSample {
    pub node: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// Sample `index` of `Π_ρ`: a uniform node, `u ∈ [0, ρ]ⁿ`, `v ∈ [−ρ, ρ]^{2n}`
/// and `w_i` uniform in the declared `[w_lo, w_hi]`.
pub fn box_sample(
    mesh: &Mesh,
    n: usize,
    rho: f64,
    bounds: &[ResolvedBounds],
    seed: u64,
    index: usize,
) -> BoxSample {
    let mut rng = sample_rng(seed, index);
    let node = rng.gen_range(0..mesh.len());
    let u = (0..n).map(|_| rng.gen_range(0.0..=rho)).collect();
    let v = (0..2 * n).map(|_| rng.gen_range(-rho..=rho)).collect();
    let w = bounds
        .iter()
        .map(|b| {
            if b.w_hi > b.w_lo {
                rng.gen_range(b.w_lo..=b.w_hi)
            } else {
                b.w_lo
            }
        })
        .collect();
    BoxSample { node, u, v, w }
}

/// `f_i(x, u, v, w_i) − f_lower_i(x)` at a box point.
pub fn f_margin(p: &ProblemSpec, bounds: &[ResolvedBounds], i: usize, s: &BoxSample) -> Option<f64> {
    let fs = bound_nonlinearities(p).ok()?;
    margin(p, &fs[i], bounds, i, s)
}

fn bound_nonlinearities(p: &ProblemSpec) -> Result<Vec<BoundExpr>> {
    let names = nonlinearity_var_names(p.n());
    (0..p.n())
        .map(|i| Ok(p.component_spec(i).f.bind(&names)?))
        .collect()
}

fn margin(p: &ProblemSpec, f: &BoundExpr, bounds: &[ResolvedBounds], i: usize, s: &BoxSample) -> Option<f64> {
    let n = p.n();
    let x = p.mesh().node(s.node);
    let mut slots = vec![0.0; field_var_names(n).len() + 1];
    slots[0] = x[0];
    slots[1] = x[1];
    slots[2] = PI;
    for j in 0..n {
        let (a, b) = (s.v[2 * j], s.v[2 * j + 1]);
        slots[3 + j] = s.u[j];
        slots[3 + n + 2 * j] = a;
        slots[3 + n + 2 * j + 1] = b;
        slots[3 + 3 * n + j] = a * a + b * b;
    }
    let last = slots.len() - 1;
    slots[last] = s.w[i];
    f.eval_slots(&slots).ok().map(|v| v - bounds[i].f_lower[s.node])
}

/// Checks `f_i ≥ f_lower_i` over `count` samples of `Π_ρ` plus the corner
/// `u = 0, v = 0, w = w_lo` at every node.
pub fn check_f_lower(
    p: &ProblemSpec,
    d: &HypothesisDecl,
    rho: f64,
    count: usize,
    seed: u64,
) -> Result<SampleReport> {
    check_count(rho, count)?;
    let bounds = d.resolve(p.mesh(), p.n(), rho)?;
    let n = p.n();
    let mesh = p.mesh();
    let corners: Vec<BoxSample> = (0..mesh.len())
        .map(|node| BoxSample {
            node,
            u: vec![0.0; n],
            v: vec![0.0; 2 * n],
            w: bounds.iter().map(|b| b.w_lo).collect(),
        })
        .collect();
    let fs = bound_nonlinearities(p)?;
    let margins = |s: &BoxSample| {
        (0..n)
            .map(|i| margin(p, &fs[i], &bounds, i, s))
            .collect::<Vec<_>>()
    };
    let corner_margins: Vec<Vec<Option<f64>>> = corners.par_iter().map(margins).collect();
    let samples: Vec<(BoxSample, Vec<Option<f64>>)> = (0..count)
        .into_par_iter()
        .map(|index| {
            let s = box_sample(mesh, n, rho, &bounds, seed, index);
            let m = margins(&s);
            (s, m)
        })
        .collect();

    let mut checks = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = Tally::new(Some(0.0), None);
        let witness = |s: &BoxSample, seed: Option<u64>, index: Option<usize>| Witness::Box {
            seed,
            index,
            node: s.node,
            u: s.u.clone(),
            v: s.v.clone(),
            w: s.w[i],
        };
        for (s, m) in corners.iter().zip(&corner_margins) {
            t.observe(m[i], || witness(s, None, None));
        }
        for (index, (s, m)) in samples.iter().enumerate() {
            t.observe(m[i], || witness(s, Some(seed), Some(index)));
        }
        checks.push(t.finish("f_lower", Some(i + 1), Method::Sampled { count, seed }));
    }
    Ok(SampleReport { rho, checks })
}

/// Both sampling checks merged.
pub fn check_all(
    p: &ProblemSpec,
    d: &HypothesisDecl,
    rho: f64,
    count: usize,
    seed: u64,
) -> Result<SampleReport> {
    Ok(check_bounds(p, d, rho, count, seed)?.merge(check_f_lower(p, d, rho, count, seed)?))
}

/// The declared bounds of the disk example: `w₁ ∈ [(2πρ²+e^ρ)⁻¹, 1]`,
/// `w₂ ∈ [e^{−4πρ²}, 1]`, `f_lower = ((2πρ²+e^ρ)⁻¹, 0)`, `h_lower = 0`.
pub fn example_hypotheses() -> HypothesisDecl {
    let e = |s: &str| Expr::parse(s).expect("valid expression");
    HypothesisDecl::new(vec![
        ComponentBounds {
            w_lo: e("1/(2*pi*rho^2 + exp(rho))"),
            w_hi: e("1"),
            f_lower: e("1/(2*pi*rho^2 + exp(rho))"),
            h_lower: e("0"),
        },
        ComponentBounds {
            w_lo: e("exp(-4*pi*rho^2)"),
            w_hi: e("1"),
            f_lower: e("0"),
            h_lower: e("0"),
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{BoundaryOperatorSpec, EllipticOperatorSpec};
    use crate::functionals::{example_functionals, FunctionalSpec};
    use crate::system::ComponentSpec;

    fn disk(n_r: usize) -> Arc<Mesh> {
        Arc::new(Mesh::disk(1.0, n_r, 2 * n_r).unwrap())
    }

    fn example(mesh: Arc<Mesh>) -> ProblemSpec {
        let [w1, w2, h1, h2] = example_functionals();
        let comp = |f: &str, w, h| ComponentSpec {
            operator: EllipticOperatorSpec::laplacian(0.0),
            boundary: BoundaryOperatorSpec::dirichlet(),
            zeta: Expr::num(1.0),
            f: Expr::parse(f).unwrap(),
            w,
            h,
        };
        ProblemSpec::new(
            mesh,
            vec![
                comp("exp(u1)*(1 + gn2sq)*w", w1, h1),
                comp("u2^2*gn1sq*w", w2, h2),
            ],
        )
        .unwrap()
    }

    fn scalar(f: &str) -> ProblemSpec {
        ProblemSpec::new(
            disk(8),
            vec![ComponentSpec {
                operator: EllipticOperatorSpec::laplacian(0.0),
                boundary: BoundaryOperatorSpec::dirichlet(),
                zeta: Expr::num(1.0),
                f: Expr::parse(f).unwrap(),
                w: FunctionalSpec::constant(0.0),
                h: FunctionalSpec::constant(0.0),
            }],
        )
        .unwrap()
    }

    fn decl(w_lo: &str, w_hi: &str, f_lower: &str, h_lower: &str) -> ComponentBounds {
        ComponentBounds {
            w_lo: w_lo.parse().unwrap(),
            w_hi: w_hi.parse().unwrap(),
            f_lower: f_lower.parse().unwrap(),
            h_lower: h_lower.parse().unwrap(),
        }
    }

    #[test]
    fn resolve_rejects_bad_declarations() {
        let mesh = disk(8);
        let bad = HypothesisDecl::new(vec![decl("1", "0", "-1", "-1")]);
        match bad.resolve(&mesh, 1, 1.0) {
            Err(Error::Invalid(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
        assert!(bad.resolve(&mesh, 2, 1.0).is_err());
        let r = example_hypotheses().resolve(&mesh, 2, 1.0).unwrap();
        assert!((r[0].w_lo - 1.0 / (2.0 * PI + 1f64.exp())).abs() < 1e-15);
    }

    #[test]
    fn phi_of_example() {
        let p = example(disk(16));
        for rho in [0.5, 1.0, 2.0] {
            let phi = compute_phi(&p, &example_hypotheses(), rho).unwrap();
            let want = 1.0 / (8.0 * PI * rho * rho + 4.0 * f64::exp(rho));
            assert!((phi.per_component[0] / want - 1.0).abs() < 0.01, "{rho}: {phi:?}");
            assert_eq!(phi.per_component[1], 0.0);
            assert_eq!(phi.positive_component(), Some(0));
        }
    }

    #[test]
    fn phi_zero_and_lift_only() {
        let p = scalar("u1");
        let zero = HypothesisDecl::new(vec![decl("0", "0", "0", "0")]);
        let phi = compute_phi(&p, &zero, 1.0).unwrap();
        assert_eq!(phi.max, 0.0);
        let report = check_bounds(&p, &zero, 1.0, 10, 1).unwrap();
        assert_eq!(report.find("phi", None).unwrap().verdict, Verdict::Violated);

        let lift = HypothesisDecl::new(vec![decl("0", "0", "0", "1")]);
        let phi = compute_phi(&p, &lift, 1.0).unwrap();
        assert!((phi.max - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn samples_lie_in_cone_ball_and_are_deterministic() {
        let mesh = disk(8);
        let a = sample_cone_ball(&mesh, 2, 1.5, 50, 9);
        let b = sample_cone_ball(&mesh, 2, 1.5, 50, 9);
        for (s, t) in a.iter().zip(&b) {
            assert!(s.in_cone(0.0));
            assert!(s.c1_norm() <= 1.5 + 1e-12);
            assert_eq!(s.fields(), t.fields());
            let on = to_sphere(s, 1.5).unwrap();
            assert!((on.c1_norm() - 1.5).abs() < 1e-12);
        }
        let c = sample_cone_ball(&mesh, 2, 1.5, 50, 10);
        assert_ne!(a[0].fields(), c[0].fields());
        // sample i does not depend on how many were drawn
        assert_eq!(cone_sample(&mesh, 2, 1.5, 9, 17).fields(), a[17].fields());
    }

    #[test]
    fn example_bounds_supported() {
        let p = example(disk(8));
        let report = check_all(&p, &example_hypotheses(), 1.0, 200, DEFAULT_SEED).unwrap();
        assert_eq!(report.verdict(), Verdict::Supported, "{report:#?}");
        let w1 = report.find("w_bounds", Some(1)).unwrap();
        assert_eq!(w1.max, Some(1.0));
        assert!(w1.min.unwrap() >= 1.0 / (2.0 * PI + 1f64.exp()));
        assert!(matches!(w1.method, Method::Sampled { count: 200, seed: 42 }));
        assert!(matches!(report.find("lift", Some(2)).unwrap().method, Method::Exhaustive { .. }));
    }

    #[test]
    fn tight_upper_w_violated_at_apex() {
        let p = example(disk(8));
        let mut d = example_hypotheses();
        d.components[0].w_hi = Expr::num(0.5);
        let report = check_bounds(&p, &d, 1.0, 50, DEFAULT_SEED).unwrap();
        let w1 = report.find("w_bounds", Some(1)).unwrap();
        assert_eq!(w1.verdict, Verdict::Violated);
        assert_eq!(w1.witness, Some(Witness::Apex));
        assert_eq!(w1.witness_value, Some(1.0));
        let u = State::zeros(p.mesh().clone(), 2);
        assert_eq!(p.w_value(0, &u).unwrap(), 1.0);
    }

    #[test]
    fn f_lower_violation_has_corner_witness() {
        let p = scalar("u1 - 1");
        let d = HypothesisDecl::new(vec![decl("0", "0", "0", "0")]);
        let report = check_f_lower(&p, &d, 2.0, 100, 3).unwrap();
        let c = report.find("f_lower", Some(1)).unwrap();
        assert_eq!(c.verdict, Verdict::Violated);
        match c.witness.as_ref().unwrap() {
            Witness::Box { u, seed: None, .. } => assert_eq!(u, &vec![0.0]),
            w => panic!("{w:?}"),
        }
        assert_eq!(c.witness_value, Some(-1.0));
    }

    #[test]
    fn sampled_witnesses_reproduce() {
        // u1 − 1.5 is violated only by samples with u1 < 1.5
        let p = scalar("u1 - 1.5 + 0*w");
        let d = HypothesisDecl::new(vec![decl("0", "0", "0", "0")]);
        let bounds = d.resolve(p.mesh(), 1, 2.0).unwrap();
        let report = check_f_lower(&p, &d, 2.0, 100, 5).unwrap();
        let c = report.find("f_lower", Some(1)).unwrap();
        assert!(c.violations > 50);
        for index in 0..100 {
            let s = box_sample(p.mesh(), 1, 2.0, &bounds, 5, index);
            let m = f_margin(&p, &bounds, 0, &s).unwrap();
            assert_eq!(m, s.u[0] - 1.5);
        }

        let ex = example(disk(8));
        let mut d = example_hypotheses();
        d.components[1].w_lo = Expr::num(0.9);
        let report = check_bounds(&ex, &d, 1.0, 100, 7).unwrap();
        let c = report.find("w_bounds", Some(2)).unwrap();
        let Some(Witness::Ball { seed, index }) = c.witness else {
            panic!("{c:?}")
        };
        let u = cone_sample(ex.mesh(), 2, 1.0, seed, index);
        let w = ex.w_value(1, &u).unwrap();
        assert!(w < 0.9);
        assert_eq!(Some(w), c.witness_value);
    }

    #[test]
    fn phi_monotone_in_f_lower() {
        let p = example(disk(8));
        let mut prev = 0.0;
        for c in ["0", "0.1", "0.1 + x1^2", "0.5 + x1^2"] {
            let d = HypothesisDecl::new(vec![decl("0", "1", c, "0"), decl("0", "1", "0", "0")]);
            let phi = compute_phi(&p, &d, 1.0).unwrap().per_component[0];
            assert!(phi >= prev, "{c}");
            prev = phi;
        }
    }

    #[test]
    fn zero_count_rejected() {
        let p = scalar("u1");
        let d = HypothesisDecl::new(vec![decl("0", "0", "0", "0")]);
        assert!(check_bounds(&p, &d, 1.0, 0, 1).is_err());
        assert!(check_f_lower(&p, &d, 0.0, 10, 1).is_err());
    }

    #[test]
    fn merge_is_associative() {
        let p = scalar("u1");
        let d = HypothesisDecl::new(vec![decl("0", "0", "0", "0")]);
        let a = check_bounds(&p, &d, 1.0, 5, 1).unwrap();
        let b = check_f_lower(&p, &d, 1.0, 5, 1).unwrap();
        let c = check_f_lower(&p, &d, 1.0, 5, 2).unwrap();
        assert_eq!(
            a.clone().merge(b.clone()).merge(c.clone()),
            a.merge(b.merge(c))
        );
    }

    #[test]
    fn declaration_json_shape() {
        let d = HypothesisDecl::new(vec![decl("0", "rho", "x1^2", "0")]);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"[{"w_lo":"0","w_hi":"rho","f_lower":"x1^2","h_lower":"0"}]"#);
        let back: HypothesisDecl = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<HypothesisDecl>(r#"[{"w_lo":0,"w_hi":1,"f_lower":0,"h_lower":0,"x":1}]"#).is_err());
    }
}
