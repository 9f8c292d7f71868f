//! Vehicle footprints as half-space polytopes, an exact distance routine for
//! them, and dual certificates that lower-bound the distance.
//!
//! A footprint is `{p : A p ≤ b}` with `A = [Rᵀ; −Rᵀ]` and
//! `b = [l/2, w/2, l/2, w/2] + A [x, y]ᵀ`, so rows come in opposite pairs.
//!
//! A certificate `(γ, μ, s)` with `γ, μ ≥ 0`, `A₁ᵀγ + s = 0`, `A₂ᵀμ − s = 0`
//! and `‖s‖ ≤ 1` proves `dist(P₁, P₂) ≥ −(b₁ᵀγ + b₂ᵀμ)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::linalg::Matrix;
use crate::rcmpc::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use crate::scalar::Scalar;

/// Feasibility tolerance for certificate residuals.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-6;

/// Sides of the polygon that stands in for `‖s‖₂ ≤ 1` inside the QP.
pub const NORM_POLYGON_SIDES: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("polytope is empty or not a rectangle in half-space form")]
    Degenerate,
    #[error("certificate violates feasibility by {0:e}")]
    InfeasibleCertificate(f64),
    #[error("polytopes intersect; no certificate with a positive bound exists")]
    Intersecting,
}

pub type Mat2<T> = [[T; 2]; 2];

/// Rotation matrix for heading `phi`; the small-angle variant is `[[1, −φ], [φ, 1]]`.
pub fn rotation_matrix<T: Scalar>(phi: T, small_angle: bool) -> Mat2<T> {
    if small_angle {
        [[T::one(), -phi], [phi, T::one()]]
    } else {
        let (s, c) = phi.sin_cos();
        [[c, -s], [s, c]]
    }
}

/// Rectangle `{p ∈ ℝ² : A p ≤ b}` with four rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polytope<T> {
    pub a: [[T; 2]; 4],
    pub b: [T; 4],
}

impl<T: Scalar> Polytope<T> {
    /// Validates the opposite-row structure and non-emptiness.
    pub fn from_halfspaces(a: [[T; 2]; 4], b: [T; 4]) -> Result<Self, GeometryError> {
        let p = Self { a, b };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), GeometryError> {
        let tol = T::lit(1e-9);
        for k in 0..2 {
            let (r, o) = (self.a[k], self.a[k + 2]);
            if (r[0] + o[0]).abs() > tol || (r[1] + o[1]).abs() > tol {
                return Err(GeometryError::Degenerate);
            }
            if self.b[k] + self.b[k + 2] < -tol {
                return Err(GeometryError::Degenerate);
            }
        }
        let det = self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0];
        if det.abs() < tol || self.b.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Degenerate);
        }
        Ok(())
    }

    /// Corners in counter-clockwise order for the footprint layout.
    pub fn vertices(&self) -> [[T; 2]; 4] {
        let corner = |i: usize, j: usize| -> [T; 2] {
            let (r, s) = (self.a[i], self.a[j]);
            let det = r[0] * s[1] - r[1] * s[0];
            [
                (self.b[i] * s[1] - r[1] * self.b[j]) / det,
                (r[0] * self.b[j] - self.b[i] * s[0]) / det,
            ]
        };
        [corner(0, 1), corner(1, 2), corner(2, 3), corner(3, 0)]
    }

    /// `max_{p ∈ P} wᵀp`
    pub fn support(&self, w: [T; 2]) -> T {
        self.vertices()
            .iter()
            .map(|v| w[0] * v[0] + w[1] * v[1])
            .fold(T::neg_infinity(), T::max)
    }

    /// Largest violation `max_i (a_iᵀp − b_i)`; ≤ 0 means `p` is inside.
    pub fn violation(&self, p: [T; 2]) -> T {
        (0..4)
            .map(|i| self.a[i][0] * p[0] + self.a[i][1] * p[1] - self.b[i])
            .fold(T::neg_infinity(), T::max)
    }

    pub fn contains(&self, p: [T; 2], tol: T) -> bool {
        self.violation(p) <= tol
    }
}

/// Footprint of a `length × width` vehicle at pose `z`, using the exact rotation.
pub fn vehicle_polytope<T: Scalar>(z: &VehicleState<T>, length: T, width: T) -> Polytope<T> {
    let r = rotation_matrix(z.phi, false);
    // Rows of Rᵀ are the columns of R.
    let e1 = [r[0][0], r[1][0]];
    let e2 = [r[0][1], r[1][1]];
    let a = [e1, e2, [-e1[0], -e1[1]], [-e2[0], -e2[1]]];
    let half = [length, width, length, width].map(|v| v * T::lit(0.5));
    let mut b = half;
    for i in 0..4 {
        b[i] += a[i][0] * z.x + a[i][1] * z.y;
    }
    Polytope { a, b }
}

fn sub<T: Scalar>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot2<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}

fn norm2<T: Scalar>(a: [T; 2]) -> T {
    a[0].hypot(a[1])
}

fn point_segment_distance<T: Scalar>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let ab = sub(b, a);
    let len2 = dot2(ab, ab);
    let t = if len2 > T::zero() {
        (dot2(sub(p, a), ab) / len2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    norm2(sub(p, [a[0] + ab[0] * t, a[1] + ab[1] * t]))
}

/// Projection interval of a polytope onto axis `n`.
fn interval<T: Scalar>(p: &Polytope<T>, n: [T; 2]) -> (T, T) {
    let verts = p.vertices();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for v in verts {
        let d = dot2(v, n);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis overlap: the smallest interval overlap over all face
/// normals of both polytopes. Positive means the sets intersect, and the
/// value is the penetration depth along the best axis.
pub fn penetration_depth<T: Scalar>(p1: &Polytope<T>, p2: &Polytope<T>) -> T {
    let mut best = T::infinity();
    for n in [p1.a[0], p1.a[1], p2.a[0], p2.a[1]] {
        let len = norm2(n);
        let n = [n[0] / len, n[1] / len];
        let (l1, h1) = interval(p1, n);
        let (l2, h2) = interval(p2, n);
        let overlap = h1.min(h2) - l1.max(l2);
        best = best.min(overlap);
    }
    best
}

/// Exact Euclidean distance between two rectangles; zero when they intersect.
///
/// Uses the separating-axis test for intersection and vertex/edge enumeration
/// for the gap. Independent of the certificate machinery below.
pub fn polytope_distance_oracle<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
) -> Result<T, GeometryError> {
    p1.check()?;
    p2.check()?;
    if penetration_depth(p1, p2) >= T::zero() {
        return Ok(T::zero());
    }
    let (v1, v2) = (p1.vertices(), p2.vertices());
    let mut best = T::infinity();
    for i in 0..4 {
        let (a1, b1) = (v1[i], v1[(i + 1) % 4]);
        let (a2, b2) = (v2[i], v2[(i + 1) % 4]);
        for j in 0..4 {
            best = best.min(point_segment_distance(v2[j], a1, b1));
            best = best.min(point_segment_distance(v1[j], a2, b2));
        }
    }
    Ok(best)
}

/// Dual variables coupling two polytopes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualCertificate<T> {
    pub gamma: [T; 4],
    pub mu: [T; 4],
    pub s: [T; 2],
}

/// Largest violation of the certificate feasibility conditions.
pub fn certificate_residual<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
    cert: &DualCertificate<T>,
) -> T {
    let mut worst = T::zero();
    for c in 0..2 {
        let mut r1 = cert.s[c];
        let mut r2 = -cert.s[c];
        for i in 0..4 {
            r1 += p1.a[i][c] * cert.gamma[i];
            r2 += p2.a[i][c] * cert.mu[i];
        }
        worst = worst.max(r1.abs()).max(r2.abs());
    }
    for i in 0..4 {
        worst = worst.max(-cert.gamma[i]).max(-cert.mu[i]);
    }
    worst.max(norm2(cert.s) - T::one())
}

fn raw_bound<T: Scalar>(p1: &Polytope<T>, p2: &Polytope<T>, cert: &DualCertificate<T>) -> T {
    let mut acc = T::zero();
    for i in 0..4 {
        acc += p1.b[i] * cert.gamma[i] + p2.b[i] * cert.mu[i];
    }
    -acc
}

/// Distance lower bound `−(b₁ᵀγ + b₂ᵀμ)` of a feasible certificate.
pub fn dual_distance_bound<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
    cert: &DualCertificate<T>,
) -> Result<T, GeometryError> {
    let r = certificate_residual(p1, p2, cert);
    if r > T::lit(CERTIFICATE_TOLERANCE) {
        return Err(GeometryError::InfeasibleCertificate(r.to_f64_lossy()));
    }
    Ok(raw_bound(p1, p2, cert))
}

/// Nonnegative `λ` with `Aᵀλ = w` minimizing `bᵀλ`, for a rectangle in
/// opposite-row form. The minimum equals the support value `σ_P(w)`.
fn rectangle_multipliers<T: Scalar>(p: &Polytope<T>, w: [T; 2]) -> [T; 4] {
    // Solve [a0 a1] [α, β]ᵀ = w, then split signs onto opposite rows.
    let (r, s) = (p.a[0], p.a[1]);
    let det = r[0] * s[1] - s[0] * r[1];
    let alpha = (w[0] * s[1] - s[0] * w[1]) / det;
    let beta = (r[0] * w[1] - w[0] * r[1]) / det;
    let z = T::zero();
    [alpha.max(z), beta.max(z), (-alpha).max(z), (-beta).max(z)]
}

/// Best certificate for a fixed separating direction `s` (`‖s‖ ≤ 1`).
/// Its bound is `min_{x∈P₁} sᵀx − max_{y∈P₂} sᵀy`.
pub fn certificate_for_direction<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
    s: [T; 2],
) -> DualCertificate<T> {
    DualCertificate {
        gamma: rectangle_multipliers(p1, [-s[0], -s[1]]),
        mu: rectangle_multipliers(p2, s),
        s,
    }
}

/// Outcome of [`solve_dual_certificate_traced`].
#[derive(Debug, Clone)]
pub struct CertificateSolve<T> {
    pub certificate: DualCertificate<T>,
    pub bound: T,
    /// Every feasible certificate visited, in order, ending with the optimum.
    pub intermediates: Vec<DualCertificate<T>>,
}

/// Max-bound certificate: QP over `(γ, μ, s)` with the polygonal norm
/// constraint, normalization to a feasible point, then exact refinement over
/// the finitely many directions that can be optimal for two rectangles.
pub fn solve_dual_certificate<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
) -> Result<DualCertificate<T>, GeometryError> {
    solve_dual_certificate_traced(p1, p2).map(|s| s.certificate)
}

pub fn solve_dual_certificate_traced<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
) -> Result<CertificateSolve<T>, GeometryError> {
    p1.check()?;
    p2.check()?;
    let mut intermediates = Vec::new();
    if let Some(s) = polygonal_direction(p1, p2) {
        intermediates.push(certificate_for_direction(p1, p2, s));
    }
    let seed = intermediates.first().map(|c| c.s);
    let (cert, bound) = refine(p1, p2, seed, &mut intermediates);
    if !(bound > T::zero()) {
        return Err(GeometryError::Intersecting);
    }
    Ok(CertificateSolve {
        certificate: cert,
        bound,
        intermediates,
    })
}

/// Exact certificate without the QP stage; `warm` adds one candidate direction.
pub fn exact_certificate<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
    warm: Option<&DualCertificate<T>>,
) -> Result<DualCertificate<T>, GeometryError> {
    p1.check()?;
    p2.check()?;
    let mut scratch = Vec::new();
    let (cert, bound) = refine(p1, p2, warm.map(|c| c.s), &mut scratch);
    if !(bound > T::zero()) {
        return Err(GeometryError::Intersecting);
    }
    Ok(cert)
}

/// Separating direction from the relaxed dual QP, normalized onto the unit circle.
fn polygonal_direction<T: Scalar>(p1: &Polytope<T>, p2: &Polytope<T>) -> Option<[T; 2]> {
    // x = [γ(4), μ(4), s(2)]; minimize b₁ᵀγ + b₂ᵀμ with a small proximal term.
    let n = 10;
    let mut p = Matrix::zeros(n, n);
    p.add_diagonal(T::lit(1e-6));
    let mut q = vec![T::zero(); n];
    q[..4].copy_from_slice(&p1.b);
    q[4..8].copy_from_slice(&p2.b);
    let mut qp = QpProblem::new(p, q);
    for c in 0..2 {
        let mut row = vec![T::zero(); n];
        for i in 0..4 {
            row[i] = p1.a[i][c];
        }
        row[8 + c] = T::one();
        qp.add_equality(&row, T::zero());
        let mut row = vec![T::zero(); n];
        for i in 0..4 {
            row[4 + i] = p2.a[i][c];
        }
        row[8 + c] = -T::one();
        qp.add_equality(&row, T::zero());
    }
    for i in 0..8 {
        qp.add_bound(i, T::zero(), T::infinity());
    }
    qp.add_norm_ball_polygon(8, 9, NORM_POLYGON_SIDES, T::one());
    let mut settings = QpSettings::default();
    settings.eps_abs = T::lit(1e-7);
    settings.eps_rel = T::lit(1e-7);
    settings.max_iter = 4000;
    let sol = solve_qp(&qp, &settings, None).ok()?;
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let s = [sol.x[8], sol.x[9]];
    let len = norm2(s);
    if !(len > T::lit(1e-12)) {
        return None;
    }
    Some([s[0] / len, s[1] / len])
}

/// Maximizes the certificate bound over the candidate directions that contain
/// the optimum for two rectangles: face normals of either set and unit
/// vectors between vertex pairs.
fn refine<T: Scalar>(
    p1: &Polytope<T>,
    p2: &Polytope<T>,
    seed: Option<[T; 2]>,
    visited: &mut Vec<DualCertificate<T>>,
) -> (DualCertificate<T>, T) {
    let mut candidates: Vec<[T; 2]> = Vec::with_capacity(25);
    candidates.extend(seed);
    for row in p1.a.iter().chain(p2.a.iter()) {
        let len = norm2(*row);
        candidates.push([row[0] / len, row[1] / len]);
    }
    let (v1, v2) = (p1.vertices(), p2.vertices());
    for a in v1 {
        for b in v2 {
            let d = sub(a, b);
            let len = norm2(d);
            if len > T::lit(1e-12) {
                candidates.push([d[0] / len, d[1] / len]);
            }
        }
    }
    let mut best = (DualCertificate::default(), T::zero());
    let mut best_bound = T::neg_infinity();
    for s in candidates {
        let cert = certificate_for_direction(p1, p2, s);
        let bound = raw_bound(p1, p2, &cert);
        if bound > best_bound {
            best_bound = bound;
            best = (cert, bound);
            visited.push(cert);
        }
    }
    best
}
