//! Structured grids on the unit-disk family and on rectangles.
//!
//! Disk nodes are ordered center first, then ring by ring outward:
//! node `(k, j)` at radius `k·h_r` and angle `j·h_θ` has index
//! `1 + (k - 1)·n_theta + j`. The outermost ring `k = n_r` is the boundary.
//! Rectangle nodes are row-major, `i + j·nx`, covering `[0, lx] × [0, ly]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshKind {
    Disk {
        radius: f64,
        n_r: usize,
        n_theta: usize,
    },
    Rectangle {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
}

/// Sparse weights producing `(∂/∂x₁, ∂/∂x₂)` at one node.
pub type GradStencil = Vec<(usize, f64, f64)>;

#[derive(Debug, Clone)]
pub struct Mesh {
    kind: MeshKind,
    nodes: Vec<[f64; 2]>,
    class: Vec<NodeClass>,
    nu: Vec<Option<[f64; 2]>>,
    weights: Vec<f64>,
    spacing: [f64; 2],
    grad: Vec<GradStencil>,
}

/// Combine duplicate columns and drop exact zeros.
fn compact(mut st: GradStencil) -> GradStencil {
    st.sort_by_key(|e| e.0);
    let mut out: GradStencil = Vec::with_capacity(st.len());
    for (c, a, b) in st {
        match out.last_mut() {
            Some(last) if last.0 == c => {
                last.1 += a;
                last.2 += b;
            }
            _ => out.push((c, a, b)),
        }
    }
    out.retain(|e| e.1 != 0.0 || e.2 != 0.0);
    out
}

impl Mesh {
    /// Polar grid on the disk of the given radius: `n_r` radial intervals,
    /// `n_theta` angular intervals, one shared center node.
    pub fn disk(radius: f64, n_r: usize, n_theta: usize) -> Result<Mesh> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("disk radius must be positive, got {radius}")));
        }
        if n_r < 4 {
            return Err(Error::Config(format!("disk n_r must be at least 4, got {n_r}")));
        }
        if n_theta < 8 || n_theta % 2 != 0 {
            return Err(Error::Config(format!(
                "disk n_theta must be even and at least 8, got {n_theta}"
            )));
        }
        let hr = radius / n_r as f64;
        let ht = 2.0 * PI / n_theta as f64;
        let n = 1 + n_r * n_theta;
        let mut nodes = Vec::with_capacity(n);
        let mut class = Vec::with_capacity(n);
        let mut nu = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let trig: Vec<(f64, f64)> = (0..n_theta).map(|j| (j as f64 * ht).sin_cos()).collect();

        nodes.push([0.0, 0.0]);
        class.push(NodeClass::Interior);
        nu.push(None);
        weights.push(PI * hr * hr / 4.0);
        for k in 1..=n_r {
            let r = if k == n_r { radius } else { k as f64 * hr };
            for &(s, c) in &trig {
                nodes.push([r * c, r * s]);
                if k == n_r {
                    class.push(NodeClass::Boundary);
                    nu.push(Some([c, s]));
                    weights.push(r * hr * ht / 2.0);
                } else {
                    class.push(NodeClass::Interior);
                    nu.push(None);
                    weights.push(r * hr * ht);
                }
            }
        }

        let idx = |k: usize, j: usize| -> usize {
            if k == 0 {
                0
            } else {
                1 + (k - 1) * n_theta + j % n_theta
            }
        };
        let mut grad = Vec::with_capacity(n);
        // center: opposite first-ring pairs
        {
            let mut st: GradStencil = vec![
                (idx(1, 0), 0.5 / hr, 0.0),
                (idx(1, n_theta / 2), -0.5 / hr, 0.0),
            ];
            if n_theta % 4 == 0 {
                st.push((idx(1, n_theta / 4), 0.0, 0.5 / hr));
                st.push((idx(1, 3 * n_theta / 4), 0.0, -0.5 / hr));
            } else {
                for (j, &(s, _)) in trig.iter().enumerate() {
                    st.push((idx(1, j), 0.0, 2.0 * s / (n_theta as f64 * hr)));
                }
            }
            grad.push(compact(st));
        }
        // the 2·sin(h_θ) denominator makes the angular difference exact on
        // first harmonics, hence on every linear Cartesian polynomial
        let dtheta = 2.0 * ht.sin();
        for k in 1..=n_r {
            let r = k as f64 * hr;
            for (j, &(s, c)) in trig.iter().enumerate() {
                let mut radial: Vec<(usize, f64)> = if k < n_r {
                    vec![(idx(k + 1, j), 0.5 / hr), (idx(k - 1, j), -0.5 / hr)]
                } else {
                    vec![
                        (idx(k, j), 1.5 / hr),
                        (idx(k - 1, j), -2.0 / hr),
                        (idx(k - 2, j), 0.5 / hr),
                    ]
                };
                let angular = [
                    (idx(k, j + 1), 1.0 / dtheta),
                    (idx(k, j + n_theta - 1), -1.0 / dtheta),
                ];
                let mut st: GradStencil = Vec::new();
                for (col, w) in radial.drain(..) {
                    st.push((col, c * w, s * w));
                }
                for (col, w) in angular {
                    st.push((col, -s / r * w, c / r * w));
                }
                grad.push(compact(st));
            }
        }

        Ok(Mesh {
            kind: MeshKind::Disk {
                radius,
                n_r,
                n_theta,
            },
            nodes,
            class,
            nu,
            weights,
            spacing: [hr, ht],
            grad,
        })
    }

    /// Uniform `nx × ny` node grid on `[0, lx] × [0, ly]`.
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Mesh> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Config(format!(
                "rectangle sides must be positive, got {lx} x {ly}"
            )));
        }
        if nx < 4 || ny < 4 {
            return Err(Error::Config(format!(
                "rectangle needs at least 4 nodes per axis, got {nx} x {ny}"
            )));
        }
        let hx = lx / (nx - 1) as f64;
        let hy = ly / (ny - 1) as f64;
        let coord = |i: usize, n: usize, h: f64, l: f64| if i == n - 1 { l } else { i as f64 * h };
        let trap = |i: usize, n: usize, h: f64| if i == 0 || i == n - 1 { h / 2.0 } else { h };
        let idx = |i: usize, j: usize| i + j * nx;

        let n = nx * ny;
        let mut nodes = Vec::with_capacity(n);
        let mut class = Vec::with_capacity(n);
        let mut nu = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut grad = Vec::with_capacity(n);
        // second-order first-derivative weights along one axis
        let axis = |i: usize, n: usize, h: f64| -> Vec<(usize, f64)> {
            if i == 0 {
                vec![(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]
            } else if i == n - 1 {
                vec![(n - 1, 1.5 / h), (n - 2, -2.0 / h), (n - 3, 0.5 / h)]
            } else {
                vec![(i + 1, 0.5 / h), (i - 1, -0.5 / h)]
            }
        };
        for j in 0..ny {
            for i in 0..nx {
                nodes.push([coord(i, nx, hx, lx), coord(j, ny, hy, ly)]);
                weights.push(trap(i, nx, hx) * trap(j, ny, hy));
                let ex: f64 = if i == 0 { -1.0 } else if i == nx - 1 { 1.0 } else { 0.0 };
                let ey = if j == 0 { -1.0 } else if j == ny - 1 { 1.0 } else { 0.0 };
                if ex != 0.0 || ey != 0.0 {
                    let len = (ex * ex + ey * ey).sqrt();
                    class.push(NodeClass::Boundary);
                    nu.push(Some([ex / len, ey / len]));
                } else {
                    class.push(NodeClass::Interior);
                    nu.push(None);
                }
                let mut st: GradStencil = Vec::new();
                for (ii, w) in axis(i, nx, hx) {
                    st.push((idx(ii, j), w, 0.0));
                }
                for (jj, w) in axis(j, ny, hy) {
                    st.push((idx(i, jj), 0.0, w));
                }
                grad.push(compact(st));
            }
        }
        Ok(Mesh {
            kind: MeshKind::Rectangle { lx, ly, nx, ny },
            nodes,
            class,
            nu,
            weights,
            spacing: [hx, hy],
            grad,
        })
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn class(&self, i: usize) -> NodeClass {
        self.class[i]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.class[i] == NodeClass::Boundary
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_boundary(i))
    }

    /// Outward unit direction at a boundary node, `None` inside.
    pub fn nu(&self, i: usize) -> Option<[f64; 2]> {
        self.nu[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(h_r, h_θ)` on the disk, `(h_x, h_y)` on the rectangle.
    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn grad_stencil(&self, i: usize) -> &GradStencil {
        &self.grad[i]
    }

    /// Area of the continuous domain.
    pub fn area(&self) -> f64 {
        match self.kind {
            MeshKind::Disk { radius, .. } => PI * radius * radius,
            MeshKind::Rectangle { lx, ly, .. } => lx * ly,
        }
    }

    /// Quadrature sum `Σ w_k v_k`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.len(), "nodal field length does not match mesh");
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Cartesian partials of a nodal field at every node.
    pub fn gradient(&self, values: &[f64]) -> Vec<[f64; 2]> {
        assert_eq!(values.len(), self.len(), "nodal field length does not match mesh");
        self.grad
            .iter()
            .map(|st| {
                st.iter().fold([0.0, 0.0], |[gx, gy], &(c, a, b)| {
                    [gx + a * values[c], gy + b * values[c]]
                })
            })
            .collect()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let eps = 1e-12;
        match self.kind {
            MeshKind::Disk { radius, .. } => p[0].hypot(p[1]) <= radius * (1.0 + eps),
            MeshKind::Rectangle { lx, ly, .. } => {
                (-eps * lx..=lx * (1.0 + eps)).contains(&p[0])
                    && (-eps * ly..=ly * (1.0 + eps)).contains(&p[1])
            }
        }
    }

    /// Index of the mesh node closest to `p`, which must lie in the closed domain.
    pub fn nearest_node(&self, p: [f64; 2]) -> Result<usize> {
        if !p.iter().all(|v| v.is_finite()) || !self.contains(p) {
            return Err(Error::Config(format!(
                "point ({}, {}) lies outside the domain",
                p[0], p[1]
            )));
        }
        let d2 = |q: &[f64; 2]| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        let mut best = 0;
        for (i, q) in self.nodes.iter().enumerate() {
            if d2(q) < d2(&self.nodes[best]) {
                best = i;
            }
        }
        Ok(best)
    }

    /// Disk node index for ring `k` (0 is the center) and angle index `j`
    /// (taken modulo `n_theta`). Panics on a rectangle mesh.
    pub fn disk_index(&self, k: usize, j: usize) -> usize {
        match self.kind {
            MeshKind::Disk { n_theta, .. } => {
                if k == 0 {
                    0
                } else {
                    1 + (k - 1) * n_theta + j % n_theta
                }
            }
            MeshKind::Rectangle { .. } => panic!("disk_index on a rectangle mesh"),
        }
    }

    /// Rectangle node index. Panics on a disk mesh.
    pub fn rect_index(&self, i: usize, j: usize) -> usize {
        match self.kind {
            MeshKind::Rectangle { nx, .. } => i + j * nx,
            MeshKind::Disk { .. } => panic!("rect_index on a disk mesh"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_counts() {
        let m = Mesh::disk(1.0, 4, 8).unwrap();
        assert_eq!(m.len(), 33);
        assert_eq!(m.boundary_nodes().count(), 8);
        assert_eq!(m.node(0), [0.0, 0.0]);
        assert_eq!(m.len() - 1 - 8, 24);
    }

    #[test]
    fn rect_counts() {
        let m = Mesh::rectangle(1.0, 1.0, 4, 4).unwrap();
        assert_eq!(m.len(), 16);
        assert_eq!(m.boundary_nodes().count(), 12);
        assert_eq!(m.len() - m.boundary_nodes().count(), 4);
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(Mesh::disk(1.0, 3, 8).is_err());
        assert!(Mesh::disk(1.0, 4, 6).is_err());
        assert!(Mesh::disk(1.0, 4, 9).is_err());
        assert!(Mesh::disk(0.0, 4, 8).is_err());
        assert!(Mesh::rectangle(1.0, 1.0, 3, 4).is_err());
        assert!(Mesh::rectangle(-1.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn quadrature_areas() {
        let m = Mesh::disk(1.0, 64, 128).unwrap();
        assert!((m.integrate(&vec![1.0; m.len()]) - PI).abs() < 1e-3);
        let m = Mesh::disk(2.0, 64, 128).unwrap();
        assert!((m.integrate(&vec![1.0; m.len()]) - 4.0 * PI).abs() < 4e-3);
        let m = Mesh::rectangle(PI, PI, 64, 64).unwrap();
        assert!((m.integrate(&vec![1.0; m.len()]) - PI * PI).abs() < 1e-2);
        let m = Mesh::rectangle(1.0, 2.0, 8, 8).unwrap();
        assert!((m.integrate(&vec![1.0; m.len()]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadrature_polynomial_and_zero() {
        let m = Mesh::disk(1.0, 64, 128).unwrap();
        let r2: Vec<f64> = m.nodes().iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
        assert!((m.integrate(&r2) - PI / 2.0).abs() < 1e-3);
        assert_eq!(m.integrate(&vec![0.0; m.len()]), 0.0);
    }

    #[test]
    fn disk_area_converges_second_order() {
        let err = |n: usize| {
            let m = Mesh::disk(1.0, n, 2 * n).unwrap();
            (m.integrate(&vec![1.0; m.len()]) - PI).abs()
        };
        let order = (err(16) / err(32)).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn boundary_geometry() {
        let m = Mesh::disk(1.0, 8, 16).unwrap();
        for i in 0..m.len() {
            match m.nu(i) {
                Some(nu) => {
                    let p = m.node(i);
                    assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-12);
                    assert!((nu[0] - p[0]).abs() < 1e-15 && (nu[1] - p[1]).abs() < 1e-15);
                }
                None => assert!(!m.is_boundary(i)),
            }
        }
        let m = Mesh::rectangle(2.0, 1.0, 5, 6).unwrap();
        assert_eq!(m.nu(m.rect_index(2, 0)), Some([0.0, -1.0]));
        assert_eq!(m.nu(m.rect_index(4, 3)), Some([1.0, 0.0]));
        let corner = m.nu(m.rect_index(4, 5)).unwrap();
        assert!((corner[0].hypot(corner[1]) - 1.0).abs() < 1e-15);
        assert_eq!(m.node(m.rect_index(4, 5)), [2.0, 1.0]);
    }

    #[test]
    fn gradient_exact_on_linear_fields() {
        for m in [
            Mesh::disk(1.0, 16, 32).unwrap(),
            Mesh::disk(1.5, 8, 18).unwrap(),
            Mesh::rectangle(2.0, 1.0, 9, 7).unwrap(),
        ] {
            let u: Vec<f64> = m.nodes().iter().map(|p| 0.3 + 2.0 * p[0] - 0.7 * p[1]).collect();
            for g in m.gradient(&u) {
                assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] + 0.7).abs() < 1e-8, "{g:?}");
            }
        }
    }

    #[test]
    fn gradient_quadratic_and_center() {
        let m = Mesh::disk(1.0, 64, 128).unwrap();
        let u: Vec<f64> = m.nodes().iter().map(|p| (1.0 - p[0] * p[0] - p[1] * p[1]) / 4.0).collect();
        let g = m.gradient(&u);
        for (p, gi) in m.nodes().iter().zip(&g) {
            assert!((gi[0] + p[0] / 2.0).abs() < 1e-3, "{p:?} {gi:?}");
        }
        let u: Vec<f64> = m.nodes().iter().map(|p| p[0] * p[0]).collect();
        assert!(m.gradient(&u)[0][0].abs() < 1e-8);
    }

    #[test]
    fn nearest_node_snaps_and_rejects() {
        let m = Mesh::disk(1.0, 8, 16).unwrap();
        assert_eq!(m.nearest_node([0.0, 0.0]).unwrap(), 0);
        assert_eq!(m.nearest_node([1.0, 0.0]).unwrap(), m.disk_index(8, 0));
        assert!(m.nearest_node([1.1, 0.0]).is_err());
    }
}
