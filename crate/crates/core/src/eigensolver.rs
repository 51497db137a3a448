//! Normalized positive fixed-point iteration on the cone sphere `‖u‖₁ = ρ`.
//!
//! Each step maps `v = Φ(u_k)`, clips negative nodal values of `v` to zero,
//! and moves to `(1 − ω) u_k + ω ρ v/‖v‖₁` rescaled back onto the sphere.
//! For a linear `Φ` this is power iteration, so `λ = ρ/‖Φ(u*)‖₁` is the
//! reciprocal of the dominant eigenvalue of `Φ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::system::{EigenPair, ProblemSpec, State};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖u_{k+1} − u_k‖₁ ≤ tol·ρ`.
    pub tol: f64,
    /// Certification threshold on the final residual; `None` means `10⁻⁶·ρ`.
    pub residual_tol: Option<f64>,
    pub max_iter: usize,
    /// Initial relaxation weight ω in (0, 1].
    pub relaxation: f64,
    /// Halve ω (down to `MIN_RELAXATION`) when successive updates keep
    /// reversing direction.
    pub adapt_relaxation: bool,
    /// Smallest admissible `‖Φ(u)‖₁`.
    pub norm_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            residual_tol: None,
            max_iter: 500,
            relaxation: 1.0,
            adapt_relaxation: true,
            norm_floor: 1e-14,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Precondition(format!("{name} must be positive, got {v}")))
            }
        };
        positive("tol", self.tol)?;
        if let Some(r) = self.residual_tol {
            positive("residual_tol", r)?;
        }
        positive("norm_floor", self.norm_floor)?;
        positive("relaxation", self.relaxation)?;
        if self.relaxation > 1.0 {
            return Err(Error::Precondition(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Precondition("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn residual_tol_for(&self, rho: f64) -> f64 {
        self.residual_tol.unwrap_or(1e-6 * rho)
    }
}

/// Floor for adaptive relaxation.
pub const MIN_RELAXATION: f64 = 1.0 / 16.0;

/// Consecutive reversals that trigger halving ω.
const REVERSALS: usize = 3;

/// Cosine of the angle between two nodal differences.
fn cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa > 0.0 && bb > 0.0 {
        ab / (aa.sqrt() * bb.sqrt())
    } else {
        0.0
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("rho must be positive and finite, got {rho}")))
    }
}

/// Clip negative values to zero in place; returns the largest clipped magnitude.
fn clip_negative(fields: &mut [Vec<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for v in fields.iter_mut().flatten() {
        if *v < 0.0 {
            worst = worst.max(-*v);
            *v = 0.0;
        }
    }
    worst
}

/// One eigenpair on `‖u‖₁ = ρ`, certified by an independent residual evaluation.
///
/// Starts from `u0` (rescaled to the sphere) or, by default, from the constant
/// state with every component equal to `ρ`.
pub fn solve_eigenpair(
    p: &ProblemSpec,
    rho: f64,
    opts: &SolverOptions,
    u0: Option<&State>,
) -> Result<EigenPair> {
    solve_eigenpair_observed(p, rho, opts, u0, |_, _| {})
}

/// [`solve_eigenpair`] calling `observe(k, u_k)` after every iteration.
pub fn solve_eigenpair_observed(
    p: &ProblemSpec,
    rho: f64,
    opts: &SolverOptions,
    u0: Option<&State>,
    mut observe: impl FnMut(usize, &State),
) -> Result<EigenPair> {
    check_rho(rho)?;
    opts.validate()?;
    let mut u = match u0 {
        None => State::constant(p.mesh().clone(), p.n(), rho),
        Some(s) => {
            if s.n() != p.n() || s.mesh().len() != p.mesh().len() {
                return Err(Error::Precondition("initial state does not match the problem".into()));
            }
            let norm = s.c1_norm();
            if !s.in_cone(0.0) || !(norm > 0.0) {
                return Err(Error::Precondition(
                    "initial state must be non-negative with positive norm".into(),
                ));
            }
            s.scaled(rho / norm)
        }
    };

    let mut omega = opts.relaxation;
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut reversals = 0;
    let mut clip = 0.0_f64;
    let mut step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut v = p.apply_phi(&u)?.into_fields();
        clip = clip.max(clip_negative(&mut v));
        let v = State::new(p.mesh().clone(), v);
        let norm = v.c1_norm();
        if !(norm >= opts.norm_floor) {
            return Err(Error::NormCollapse {
                norm,
                floor: opts.norm_floor,
                iteration: iterations,
            });
        }
        let scale = omega * rho / norm;
        let mixed: Vec<Vec<f64>> = u
            .fields()
            .iter()
            .zip(v.fields())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (1.0 - omega) * x + scale * y).collect())
            .collect();
        let mixed = State::new(p.mesh().clone(), mixed);
        let next = mixed.scaled(rho / mixed.c1_norm());
        let diff = next.sub(&u);
        step = diff.c1_norm();
        u = next;
        let diff = diff.into_fields();
        if opts.adapt_relaxation {
            if previous.as_ref().is_some_and(|p| cosine(p, &diff) < -0.5) {
                reversals += 1;
            } else {
                reversals = 0;
            }
            if reversals >= REVERSALS && omega > MIN_RELAXATION {
                omega = (0.5 * omega).max(MIN_RELAXATION);
                reversals = 0;
            }
        }
        previous = Some(diff);
        observe(iterations, &u);
        if step <= opts.tol * rho {
            break;
        }
    }

    let phi_norm = p.apply_phi(&u)?.c1_norm();
    if !(phi_norm >= opts.norm_floor) {
        return Err(Error::NormCollapse {
            norm: phi_norm,
            floor: opts.norm_floor,
            iteration: iterations,
        });
    }
    let lambda = rho / phi_norm;
    let residual = p.residual(&u, lambda)?;
    if step > opts.tol * rho {
        return Err(Error::NoConvergence {
            iterations,
            step,
            residual,
        });
    }
    let tol = opts.residual_tol_for(rho);
    if residual > tol {
        return Err(Error::Uncertified { residual, tol });
    }
    Ok(EigenPair {
        u,
        lambda,
        rho,
        residual,
        iterations,
        clip,
        relaxation: omega,
    })
}

/// Outcome for one `ρ` of a sweep; failures are kept, not fatal.
#[derive(Debug)]
pub struct SweepPoint {
    pub rho: f64,
    pub outcome: Result<EigenPair>,
}

/// Solve along increasing `ρ`. With `warm_start`, each solve starts from the
/// previous successful eigenfunction; otherwise points are solved
/// independently and in parallel from the default start.
pub fn sweep_rho(
    p: &ProblemSpec,
    rhos: &[f64],
    opts: &SolverOptions,
    warm_start: bool,
) -> Result<Vec<SweepPoint>> {
    if rhos.is_empty() {
        return Err(Error::Precondition("rho list is empty".into()));
    }
    for &r in rhos {
        check_rho(r)?;
    }
    if rhos.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("rho values must be strictly increasing".into()));
    }
    opts.validate()?;
    if !warm_start {
        return Ok(rhos
            .par_iter()
            .map(|&rho| SweepPoint {
                rho,
                outcome: solve_eigenpair(p, rho, opts, None),
            })
            .collect());
    }
    let mut out = Vec::with_capacity(rhos.len());
    let mut last: Option<State> = None;
    for &rho in rhos {
        let outcome = solve_eigenpair(p, rho, opts, last.as_ref());
        if let Ok(pair) = &outcome {
            last = Some(pair.u.clone());
        }
        out.push(SweepPoint { rho, outcome });
    }
    Ok(out)
}

/// `count` points from `lo` to `hi` inclusive, geometric or arithmetic.
pub fn rho_grid(lo: f64, hi: f64, count: usize, log_spacing: bool) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            if k == count - 1 {
                hi
            } else if log_spacing {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::elliptic::{BoundaryOperatorSpec, EllipticOperatorSpec};
    use crate::expr::Expr;
    use crate::functionals::FunctionalSpec;
    use crate::mesh::Mesh;
    use crate::system::ComponentSpec;

    fn linear(mesh: Mesh) -> ProblemSpec {
        ProblemSpec::new(
            Arc::new(mesh),
            vec![ComponentSpec {
                operator: EllipticOperatorSpec::laplacian(0.0),
                boundary: BoundaryOperatorSpec::dirichlet(),
                zeta: Expr::num(1.0),
                f: Expr::var("u1"),
                w: FunctionalSpec::constant(0.0),
                h: FunctionalSpec::constant(0.0),
            }],
        )
        .unwrap()
    }

    #[test]
    fn options_validated() {
        let bad = SolverOptions {
            relaxation: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SolverOptions::default().validate().is_ok());
    }

    #[test]
    fn square_eigenvalue() {
        let p = linear(Mesh::rectangle(std::f64::consts::PI, std::f64::consts::PI, 33, 33).unwrap());
        let pair = solve_eigenpair(&p, 1.0, &SolverOptions::default(), None).unwrap();
        assert!((pair.lambda - 2.0).abs() < 0.02, "{}", pair.lambda);
        assert!((pair.u.c1_norm() - 1.0).abs() < 1e-12);
        assert!(pair.u.in_cone(0.0));
        let again = p.residual(&pair.u, pair.lambda).unwrap();
        assert!((again - pair.residual).abs() <= 1e-12);
    }

    #[test]
    fn zero_map_collapses() {
        let p = ProblemSpec::new(
            Arc::new(Mesh::disk(1.0, 8, 16).unwrap()),
            vec![ComponentSpec {
                operator: EllipticOperatorSpec::laplacian(0.0),
                boundary: BoundaryOperatorSpec::dirichlet(),
                zeta: Expr::num(1.0),
                f: Expr::num(0.0),
                w: FunctionalSpec::constant(0.0),
                h: FunctionalSpec::constant(0.0),
            }],
        )
        .unwrap();
        let r = solve_eigenpair(&p, 1.0, &SolverOptions::default(), None);
        assert!(matches!(r, Err(Error::NormCollapse { .. })), "{r:?}");
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let p = linear(Mesh::disk(1.0, 8, 16).unwrap());
        let opts = SolverOptions {
            max_iter: 2,
            ..Default::default()
        };
        match solve_eigenpair(&p, 1.0, &opts, None) {
            Err(Error::NoConvergence { iterations: 2, residual, .. }) => assert!(residual > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_preconditions() {
        let p = linear(Mesh::disk(1.0, 8, 16).unwrap());
        let o = SolverOptions::default();
        assert!(sweep_rho(&p, &[], &o, true).is_err());
        assert!(sweep_rho(&p, &[1.0, 1.0], &o, true).is_err());
        assert!(sweep_rho(&p, &[-1.0, 1.0], &o, true).is_err());
        assert!(solve_eigenpair(&p, 0.0, &o, None).is_err());
    }

    #[test]
    fn sweep_single_point_matches_solve() {
        let p = linear(Mesh::disk(1.0, 8, 16).unwrap());
        let o = SolverOptions::default();
        let direct = solve_eigenpair(&p, 0.7, &o, None).unwrap();
        let sweep = sweep_rho(&p, &[0.7], &o, true).unwrap();
        let pair = sweep[0].outcome.as_ref().unwrap();
        assert_eq!(pair.lambda, direct.lambda);
        assert_eq!(pair.iterations, direct.iterations);
    }

    #[test]
    fn warm_and_cold_sweeps_agree_on_linear_problem() {
        let p = linear(Mesh::disk(1.0, 8, 16).unwrap());
        let o = SolverOptions::default();
        let rhos = [0.5, 1.0, 2.0];
        for warm in [true, false] {
            let pts = sweep_rho(&p, &rhos, &o, warm).unwrap();
            let l0 = pts[0].outcome.as_ref().unwrap().lambda;
            for pt in &pts {
                let l = pt.outcome.as_ref().unwrap().lambda;
                assert!((l - l0).abs() <= 1e-8 * l0, "{l} vs {l0}");
            }
        }
    }

    #[test]
    fn disk_eigenvalue() {
        let p = linear(Mesh::disk(1.0, 32, 64).unwrap());
        let pair = solve_eigenpair(&p, 1.0, &SolverOptions::default(), None).unwrap();
        // square of the first zero of J0
        let oracle = 5.783185962946784;
        assert!((pair.lambda / oracle - 1.0).abs() < 0.01, "{}", pair.lambda);
        assert_eq!(pair.clip, 0.0);
    }

    /// Smallest eigenvalue of the interior block of the assembled matrix.
    fn dense_oracle(p: &ProblemSpec) -> f64 {
        let op = p.operator(0);
        let mesh = p.mesh();
        let interior: Vec<usize> = (0..mesh.len()).filter(|&i| !mesh.is_boundary(i)).collect();
        let mut pos = vec![usize::MAX; mesh.len()];
        for (k, &i) in interior.iter().enumerate() {
            pos[i] = k;
        }
        let m = interior.len();
        let mut a = nalgebra::DMatrix::<f64>::zeros(m, m);
        for (k, &i) in interior.iter().enumerate() {
            for &(c, v) in op.row(i) {
                if pos[c] != usize::MAX {
                    a[(k, pos[c])] += v;
                }
            }
        }
        // inverse iteration with dense LU and Euclidean normalization
        let lu = a.lu();
        let mut x = nalgebra::DVector::<f64>::from_element(m, 1.0);
        let mut mu = 0.0;
        for _ in 0..10_000 {
            let y = lu.solve(&x).expect("nonsingular");
            let next = x.dot(&y) / x.dot(&x);
            x = &y / y.norm();
            if (next - mu).abs() <= 1e-15 * next.abs() {
                mu = next;
                break;
            }
            mu = next;
        }
        1.0 / mu
    }

    #[test]
    fn matches_dense_eigenvalue() {
        let meshes = [
            Mesh::rectangle(std::f64::consts::PI, std::f64::consts::PI, 16, 16).unwrap(),
            Mesh::rectangle(2.0, 1.0, 20, 12).unwrap(),
            Mesh::disk(1.0, 8, 16).unwrap(),
            Mesh::disk(1.0, 12, 24).unwrap(),
        ];
        for mesh in meshes {
            let p = linear(mesh);
            let want = dense_oracle(&p);
            let got = solve_eigenpair(&p, 1.0, &SolverOptions::default(), None).unwrap().lambda;
            assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn damping_recovers_oscillating_iteration() {
        let p = ProblemSpec::new(
            Arc::new(Mesh::disk(1.0, 16, 32).unwrap()),
            vec![ComponentSpec {
                operator: EllipticOperatorSpec::laplacian(0.0),
                boundary: BoundaryOperatorSpec::dirichlet(),
                zeta: Expr::num(1.0),
                // strongly decreasing response makes plain iteration flip
                f: Expr::parse("exp(-20*u1)").unwrap(),
                w: FunctionalSpec::constant(0.0),
                h: FunctionalSpec::constant(0.0),
            }],
        )
        .unwrap();
        let fixed = SolverOptions {
            adapt_relaxation: false,
            ..Default::default()
        };
        let plain = solve_eigenpair(&p, 1.0, &fixed, None);
        let adaptive = solve_eigenpair(&p, 1.0, &SolverOptions::default(), None).unwrap();
        assert!(adaptive.relaxation < 1.0);
        assert!(adaptive.residual <= 1e-6);
        assert!(plain.is_err() || plain.unwrap().iterations > adaptive.iterations);
    }

    #[test]
    fn iterates_stay_on_sphere_in_cone() {
        let p = linear(Mesh::disk(1.0, 12, 24).unwrap());
        for rho in [0.3, 2.5] {
            let mut seen = 0;
            let pair = solve_eigenpair_observed(&p, rho, &SolverOptions::default(), None, |_, u| {
                seen += 1;
                assert!((u.c1_norm() / rho - 1.0).abs() <= 1e-12);
                assert!(u.in_cone(0.0));
            })
            .unwrap();
            assert_eq!(seen, pair.iterations);
        }
    }

    #[test]
    fn linear_eigenvalue_independent_of_rho() {
        let p = linear(Mesh::rectangle(1.0, 2.0, 12, 20).unwrap());
        let l: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&r| solve_eigenpair(&p, r, &SolverOptions::default(), None).unwrap().lambda)
            .collect();
        for x in &l {
            assert!((x / l[0] - 1.0).abs() <= 1e-8, "{l:?}");
        }
    }

    #[test]
    fn grids() {
        assert_eq!(rho_grid(0.5, 2.0, 1, true), vec![0.5]);
        let g = rho_grid(0.25, 2.0, 4, true);
        assert_eq!(g.len(), 4);
        assert!((g[1] - 0.5).abs() < 1e-12 && (g[2] - 1.0).abs() < 1e-12 && g[3] == 2.0);
        assert_eq!(rho_grid(1.0, 2.0, 3, false), vec![1.0, 1.5, 2.0]);
    }
}
