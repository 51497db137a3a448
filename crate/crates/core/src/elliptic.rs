//! Discrete second-order elliptic operators with boundary conditions, and
//! their two solution maps: the homogeneous-boundary solve `K` and the
//! boundary lift `γ`.
//!
//! Interior rows discretize
//!
//! ```text
//! L u = −Σ a_jl ∂²u/∂x_j∂x_l + Σ a_j ∂u/∂x_j + a0 u
//! ```
//!
//! with second-order central differences; boundary rows carry `B u = b u + δ ∂u/∂ν`.
//! On the disk the Cartesian operator is rewritten in polar coordinates
//! before differencing, and the center row uses angular means over the
//! first ring.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::band::BandedLu;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::{Mesh, MeshKind};

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticOperatorSpec {
    second: [[Expr; 2]; 2],
    first: [Expr; 2],
    zeroth: Expr,
    mu0: f64,
}

impl EllipticOperatorSpec {
    /// Fails unless `second[0][1]` and `second[1][0]` are the same expression.
    pub fn new(
        second: [[Expr; 2]; 2],
        first: [Expr; 2],
        zeroth: Expr,
        mu0: f64,
    ) -> Result<Self> {
        if !second[0][1].same_structure(&second[1][0]) {
            return Err(Error::Config(format!(
                "second-order coefficients must be symmetric: a12 = `{}` but a21 = `{}`",
                second[0][1], second[1][0]
            )));
        }
        Ok(EllipticOperatorSpec {
            second,
            first,
            zeroth,
            mu0,
        })
    }

    /// `−Δ + a0` with constant `a0`.
    pub fn laplacian(a0: f64) -> Self {
        let one = Expr::num(1.0);
        let zero = Expr::num(0.0);
        EllipticOperatorSpec {
            second: [[one.clone(), zero.clone()], [zero.clone(), one]],
            first: [zero.clone(), zero],
            zeroth: Expr::num(a0),
            mu0: 1.0,
        }
    }

    pub fn second(&self) -> &[[Expr; 2]; 2] {
        &self.second
    }

    pub fn first(&self) -> &[Expr; 2] {
        &self.first
    }

    pub fn zeroth(&self) -> &Expr {
        &self.zeroth
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// True when the mixed coefficient is the literal zero.
    pub fn is_diagonal(&self) -> bool {
        matches!(self.second[0][1], Expr::Num(v) if v == 0.0)
    }

    fn coefficients(&self, p: [f64; 2]) -> Result<Coefs> {
        let env = coord_env(p);
        Ok(Coefs {
            a11: self.second[0][0].eval(&env)?,
            a12: self.second[0][1].eval(&env)?,
            a22: self.second[1][1].eval(&env)?,
            a1: self.first[0].eval(&env)?,
            a2: self.first[1].eval(&env)?,
            a0: self.zeroth.eval(&env)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Oblique,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryOperatorSpec {
    kind: BoundaryKind,
    b: Expr,
    nu: Option<[Expr; 2]>,
}

impl BoundaryOperatorSpec {
    pub fn dirichlet() -> Self {
        BoundaryOperatorSpec {
            kind: BoundaryKind::Dirichlet,
            b: Expr::num(1.0),
            nu: None,
        }
    }

    pub fn neumann() -> Self {
        BoundaryOperatorSpec {
            kind: BoundaryKind::Neumann,
            b: Expr::num(0.0),
            nu: None,
        }
    }

    pub fn oblique(b: Expr) -> Self {
        BoundaryOperatorSpec {
            kind: BoundaryKind::Oblique,
            b,
            nu: None,
        }
    }

    /// Replace the geometric outward normal by a user field (normalized per node).
    pub fn with_direction(mut self, nu: [Expr; 2]) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn kind(&self) -> BoundaryKind {
        self.kind
    }

    pub fn b(&self) -> &Expr {
        &self.b
    }

    pub fn direction(&self) -> Option<&[Expr; 2]> {
        self.nu.as_ref()
    }

    /// The 0/1 flag multiplying the normal derivative.
    pub fn delta(&self) -> u8 {
        match self.kind {
            BoundaryKind::Dirichlet => 0,
            _ => 1,
        }
    }

    fn direction_at(&self, mesh: &Mesh, i: usize) -> Result<[f64; 2]> {
        let geometric = mesh.nu(i).expect("boundary node without normal");
        match &self.nu {
            None => Ok(geometric),
            Some([ex, ey]) => {
                let env = coord_env(mesh.node(i));
                let (vx, vy) = (ex.eval(&env)?, ey.eval(&env)?);
                let len = vx.hypot(vy);
                if len == 0.0 {
                    return Err(Error::Config(format!("zero direction field at boundary node {i}")));
                }
                Ok([vx / len, vy / len])
            }
        }
    }
}

fn coord_env(p: [f64; 2]) -> [(&'static str, f64); 3] {
    [("x1", p[0]), ("x2", p[1]), ("pi", PI)]
}

#[derive(Debug, Clone, Copy)]
struct Coefs {
    a11: f64,
    a12: f64,
    a22: f64,
    a1: f64,
    a2: f64,
    a0: f64,
}

impl Coefs {
    fn min_eigenvalue(&self) -> f64 {
        let mean = 0.5 * (self.a11 + self.a22);
        let half_diff = 0.5 * (self.a11 - self.a22);
        mean - half_diff.hypot(self.a12)
    }
}

/// Outcome of [`validate`]: violated clauses by name, plus non-fatal warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<String>> {
        if self.is_ok() {
            Ok(self.warnings)
        } else {
            Err(Error::Invalid(self.violations))
        }
    }
}

/// Check the operator pair on the mesh nodes.
pub fn validate(op: &EllipticOperatorSpec, bc: &BoundaryOperatorSpec, mesh: &Mesh) -> Diagnostics {
    let mut d = Diagnostics::default();
    if !(op.mu0 > 0.0) {
        d.violations.push(format!("ellipticity constant mu0 = {} must be positive", op.mu0));
    }
    let mut min_eig = f64::INFINITY;
    let mut min_a0 = f64::INFINITY;
    let mut any_a0 = false;
    for (i, &p) in mesh.nodes().iter().enumerate() {
        let c = match op.coefficients(p) {
            Ok(c) => c,
            Err(e) => {
                d.violations.push(format!("coefficient evaluation failed at node {i}: {e}"));
                return d;
            }
        };
        min_eig = min_eig.min(c.min_eigenvalue());
        min_a0 = min_a0.min(c.a0);
        any_a0 |= c.a0 != 0.0;
    }
    if min_eig < op.mu0 {
        d.violations.push(format!(
            "ellipticity: smallest eigenvalue of [a_jl] is {min_eig} < mu0 = {}",
            op.mu0
        ));
    }
    if min_a0 < 0.0 {
        d.violations.push(format!("a0 >= 0: a0 reaches {min_a0}"));
    }
    if !op.is_diagonal() {
        d.warnings.push(
            "mixed second-order coefficient: the discrete maximum principle is not guaranteed"
                .into(),
        );
    }

    let mut b_min = f64::INFINITY;
    let mut b_any = false;
    for i in mesh.boundary_nodes() {
        let env = coord_env(mesh.node(i));
        match bc.b.eval(&env) {
            Ok(v) => {
                b_min = b_min.min(v);
                b_any |= v != 0.0;
            }
            Err(e) => {
                d.violations.push(format!("boundary coefficient b failed at node {i}: {e}"));
                return d;
            }
        }
        if bc.nu.is_some() {
            match bc.direction_at(mesh, i) {
                Ok(v) => {
                    let n = mesh.nu(i).unwrap();
                    if v[0] * n[0] + v[1] * n[1] <= 0.0 {
                        d.violations.push(format!(
                            "direction field is not outward pointing at boundary node {i}"
                        ));
                        break;
                    }
                }
                Err(e) => {
                    d.violations.push(format!("direction field failed at node {i}: {e}"));
                    break;
                }
            }
        }
    }
    match bc.kind {
        BoundaryKind::Dirichlet => {
            if !matches!(bc.b, Expr::Num(v) if v == 1.0) {
                d.violations.push("dirichlet requires b ≡ 1".into());
            }
        }
        BoundaryKind::Neumann => {
            if b_any {
                d.violations.push("neumann requires b ≡ 0".into());
            }
            if !any_a0 {
                d.violations.push("neumann requires a0 ≢ 0, but a0 ≡ 0 on the mesh".into());
            }
        }
        BoundaryKind::Oblique => {
            if b_min < 0.0 {
                d.violations.push(format!("oblique requires b >= 0: b reaches {b_min}"));
            }
            if !b_any {
                d.violations.push("oblique requires b ≢ 0, but b ≡ 0 on the boundary".into());
            }
        }
    }
    d
}

type Row = Vec<(usize, f64)>;

fn push(row: &mut Row, col: usize, v: f64) {
    if v != 0.0 {
        row.push((col, v));
    }
}

fn compact(mut row: Row) -> Row {
    row.sort_by_key(|e| e.0);
    let mut out: Row = Vec::with_capacity(row.len());
    for (c, v) in row {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}

/// Assembled and factored `(L, B)` pair on a mesh.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    mesh: Arc<Mesh>,
    rows: Vec<Row>,
    lu: BandedLu,
    warnings: Vec<String>,
}

impl DiscreteOperator {
    pub fn assemble(
        op: &EllipticOperatorSpec,
        bc: &BoundaryOperatorSpec,
        mesh: Arc<Mesh>,
    ) -> Result<Self> {
        let warnings = validate(op, bc, &mesh).into_result()?;
        let mut rows = Vec::with_capacity(mesh.len());
        for i in 0..mesh.len() {
            let row = if mesh.is_boundary(i) {
                boundary_row(bc, &mesh, i)?
            } else {
                let c = op.coefficients(mesh.node(i))?;
                match mesh.kind() {
                    MeshKind::Disk { .. } => disk_row(&mesh, i, &c),
                    MeshKind::Rectangle { .. } => rect_row(&mesh, i, &c),
                }
            };
            rows.push(compact(row));
        }
        let lu = BandedLu::factor(&rows)?;
        Ok(DiscreteOperator {
            mesh,
            rows,
            lu,
            warnings,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Sparse row `(column, value)` of the assembled matrix.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Matrix-vector product with the assembled matrix.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(c, v)| v * u[c]).sum())
            .collect()
    }

    /// Solve the assembled system for an arbitrary right-hand side.
    pub fn solve_system(&self, rhs: &[f64]) -> Vec<f64> {
        self.lu.solve(rhs)
    }

    /// `K g`: solves `L u = g` inside with `B u = 0`; boundary values of `g` are ignored.
    pub fn solve_k(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.dim() {
            return Err(Error::Precondition(format!(
                "field has {} values, mesh has {} nodes",
                g.len(),
                self.dim()
            )));
        }
        let rhs: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.mesh.is_boundary(i) { 0.0 } else { v })
            .collect();
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; rhs.len()]);
        }
        Ok(self.lu.solve(&rhs))
    }

    /// `γ`: solves `L u = 0` inside with `B u = ζ` on the boundary.
    pub fn solve_lift(&self, zeta: &Expr) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.dim()];
        for i in self.mesh.boundary_nodes() {
            rhs[i] = zeta.eval(&coord_env(self.mesh.node(i)))?;
        }
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(rhs);
        }
        Ok(self.lu.solve(&rhs))
    }
}

fn boundary_row(bc: &BoundaryOperatorSpec, mesh: &Mesh, i: usize) -> Result<Row> {
    let b = bc.b.eval(&coord_env(mesh.node(i)))?;
    let mut row = Row::new();
    push(&mut row, i, b);
    if bc.delta() == 1 {
        let [nx, ny] = bc.direction_at(mesh, i)?;
        for &(c, gx, gy) in mesh.grad_stencil(i) {
            push(&mut row, c, nx * gx + ny * gy);
        }
    }
    Ok(row)
}

fn rect_row(mesh: &Mesh, node: usize, c: &Coefs) -> Row {
    let MeshKind::Rectangle { nx, .. } = mesh.kind() else {
        unreachable!()
    };
    let [hx, hy] = mesh.spacing();
    let (i, j) = (node % nx, node / nx);
    let at = |di: isize, dj: isize| mesh.rect_index((i as isize + di) as usize, (j as isize + dj) as usize);
    let mut row = Row::new();
    let (cxx, cyy) = (c.a11 / (hx * hx), c.a22 / (hy * hy));
    push(&mut row, node, 2.0 * cxx + 2.0 * cyy + c.a0);
    push(&mut row, at(1, 0), -cxx + c.a1 / (2.0 * hx));
    push(&mut row, at(-1, 0), -cxx - c.a1 / (2.0 * hx));
    push(&mut row, at(0, 1), -cyy + c.a2 / (2.0 * hy));
    push(&mut row, at(0, -1), -cyy - c.a2 / (2.0 * hy));
    if c.a12 != 0.0 {
        // −2 a12 u_xy with the four-point cross
        let m = -2.0 * c.a12 / (4.0 * hx * hy);
        push(&mut row, at(1, 1), m);
        push(&mut row, at(-1, -1), m);
        push(&mut row, at(1, -1), -m);
        push(&mut row, at(-1, 1), -m);
    }
    row
}

fn disk_row(mesh: &Mesh, node: usize, c: &Coefs) -> Row {
    let MeshKind::Disk { n_theta, .. } = mesh.kind() else {
        unreachable!()
    };
    let [hr, ht] = mesh.spacing();
    let mut row = Row::new();
    if node == 0 {
        // angular means over the first ring:
        //   u_xx + u_yy ≈ 4(ū − u0)/h², u_xx − u_yy ≈ 8·mean(cos2θ u)/h², u_xy ≈ 4·mean(sin2θ u)/h²
        let inv = 1.0 / (n_theta as f64 * hr * hr);
        let sum = 0.5 * (c.a11 + c.a22);
        let diff = 0.5 * (c.a11 - c.a22);
        push(&mut row, 0, 4.0 * sum / (hr * hr) + c.a0);
        for j in 0..n_theta {
            let th = 2.0 * j as f64 * ht;
            let mut v = -4.0 * sum * inv;
            if diff != 0.0 {
                v -= diff * 8.0 * th.cos() * inv;
            }
            if c.a12 != 0.0 {
                v -= 2.0 * c.a12 * 4.0 * th.sin() * inv;
            }
            push(&mut row, mesh.disk_index(1, j), v);
        }
        for &(col, gx, gy) in mesh.grad_stencil(0) {
            push(&mut row, col, c.a1 * gx + c.a2 * gy);
        }
        return row;
    }

    let k = (node - 1) / n_theta + 1;
    let j = (node - 1) % n_theta;
    let r = k as f64 * hr;
    let (s, co) = (j as f64 * ht).sin_cos();
    let (cs, c2, s2) = (co * s, co * co, s * s);
    let c_rr = c.a11 * c2 + 2.0 * c.a12 * cs + c.a22 * s2;
    let tangential = c.a11 * s2 - 2.0 * c.a12 * cs + c.a22 * c2;
    let c_tt = tangential / (r * r);
    let c_r = tangential / r;
    let c_rt = (2.0 * cs * (c.a22 - c.a11) + 2.0 * c.a12 * (c2 - s2)) / r;
    let c_t = (2.0 * cs * (c.a11 - c.a22) - 2.0 * c.a12 * (c2 - s2)) / (r * r);
    let d_r = c.a1 * co + c.a2 * s;
    let d_t = (c.a2 * co - c.a1 * s) / r;

    // L u = −(c_rr u_rr + c_rt u_rθ + c_tt u_θθ + c_r u_r + c_t u_θ) + d_r u_r + d_t u_θ + a0 u
    let ur = d_r - c_r;
    let ut = d_t - c_t;
    let at = |dk: isize, dj: isize| {
        let kk = (k as isize + dk) as usize;
        let jj = (j + n_theta).wrapping_add_signed(dj);
        mesh.disk_index(kk, jj)
    };
    push(&mut row, node, 2.0 * c_rr / (hr * hr) + 2.0 * c_tt / (ht * ht) + c.a0);
    push(&mut row, at(1, 0), -c_rr / (hr * hr) + ur / (2.0 * hr));
    push(&mut row, at(-1, 0), -c_rr / (hr * hr) - ur / (2.0 * hr));
    push(&mut row, at(0, 1), -c_tt / (ht * ht) + ut / (2.0 * ht));
    push(&mut row, at(0, -1), -c_tt / (ht * ht) - ut / (2.0 * ht));
    if c_rt != 0.0 {
        let m = -c_rt / (4.0 * hr * ht);
        push(&mut row, at(1, 1), m);
        push(&mut row, at(1, -1), -m);
        push(&mut row, at(-1, 1), -m);
        push(&mut row, at(-1, -1), m);
    }
    row
}
