//! Reference implementations the library is checked against. Nothing here
//! calls into the code under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub type Pt = (f64, f64);

/// Corners of an `l × w` rectangle centered at `(x, y)` with heading `phi`,
/// counter-clockwise.
pub fn corners(x: f64, y: f64, phi: f64, l: f64, w: f64) -> [Pt; 4] {
    let (c, s) = (phi.cos(), phi.sin());
    let (hl, hw) = (0.5 * l, 0.5 * w);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        .map(|(u, v)| (x + c * u - s * v, y + s * u + c * v))
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn inside(poly: &[Pt; 4], p: Pt) -> bool {
    (0..4).all(|i| cross(poly[i], poly[(i + 1) % 4], p) >= 0.0)
}

fn segments_cross(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    let d1 = cross(a, b, c);
    let d2 = cross(a, b, d);
    let d3 = cross(c, d, a);
    let d4 = cross(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn point_segment(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Euclidean distance between two convex quadrilaterals, zero on overlap.
pub fn quad_distance(p: &[Pt; 4], q: &[Pt; 4]) -> f64 {
    if p.iter().any(|&v| inside(q, v)) || q.iter().any(|&v| inside(p, v)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (a, b) = (p[i], p[(i + 1) % 4]);
        for j in 0..4 {
            let (c, d) = (q[j], q[(j + 1) % 4]);
            if segments_cross(a, b, c, d) {
                return 0.0;
            }
            best = best
                .min(point_segment(a, c, d))
                .min(point_segment(b, c, d))
                .min(point_segment(c, a, b))
                .min(point_segment(d, a, b));
        }
    }
    best
}

/// Distance between the boundaries sampled at `per_edge` points per edge.
pub fn sampled_distance(p: &[Pt; 4], q: &[Pt; 4], per_edge: usize) -> f64 {
    let sample = |poly: &[Pt; 4]| -> Vec<Pt> {
        (0..4)
            .flat_map(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % 4]);
                (0..per_edge).map(move |k| {
                    let t = k as f64 / per_edge as f64;
                    (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
                })
            })
            .collect()
    };
    let (sp, sq) = (sample(p), sample(q));
    let mut best = f64::INFINITY;
    for a in &sp {
        for b in &sq {
            best = best.min(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    best
}

/// A random pair of rectangles at least 1 mm apart, as `[x, y, φ, l, w]`.
pub fn disjoint_pair(rng: &mut StdRng) -> ([f64; 5], [f64; 5]) {
    loop {
        let a = [
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-3.2..3.2),
            rng.gen_range(0.5..6.0),
            rng.gen_range(0.5..3.0),
        ];
        let b = [
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-3.2..3.2),
            rng.gen_range(0.5..6.0),
            rng.gen_range(0.5..3.0),
        ];
        let d = quad_distance(&corners(a[0], a[1], a[2], a[3], a[4]), &corners(b[0], b[1], b[2], b[3], b[4]));
        if d > 1e-3 {
            return (a, b);
        }
    }
}

/// Random strictly convex QP with a known strictly feasible point.
#[derive(Debug, Clone)]
pub struct RandomQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub feasible: DVector<f64>,
}

pub fn random_qp(seed: u64, max_n: usize, max_m: usize) -> RandomQp {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(0..=max_m);
    let n_eq = rng.gen_range(0..=(n / 3).min(m));
    let n_in = m - n_eq;
    let mut g = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let root = g(n, n);
    let p = root.transpose() * &root + DMatrix::identity(n, n) * 0.1;
    let a_eq = g(n_eq, n);
    let a_in = g(n_in, n);
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9);
    let feasible = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
    let b_eq = &a_eq * &feasible;
    let ax = &a_in * &feasible;
    let mut lower = Vec::with_capacity(n_in);
    let mut upper = Vec::with_capacity(n_in);
    for i in 0..n_in {
        let lo = ax[i] - rng.gen_range(0.05..1.0);
        let hi = ax[i] + rng.gen_range(0.05..1.0);
        match rng.gen_range(0..4) {
            0 => {
                lower.push(f64::NEG_INFINITY);
                upper.push(hi);
            }
            1 => {
                lower.push(lo);
                upper.push(f64::INFINITY);
            }
            _ => {
                lower.push(lo);
                upper.push(hi);
            }
        }
    }
    RandomQp {
        p,
        q,
        a_eq,
        b_eq,
        a_in,
        lower,
        upper,
        feasible,
    }
}

impl RandomQp {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Rows of the one-sided form.
    pub fn one_sided_count(&self) -> usize {
        (0..self.a_in.nrows())
            .map(|i| self.upper[i].is_finite() as usize + self.lower[i].is_finite() as usize)
            .sum()
    }

    /// One-sided form `G x ≤ h`.
    fn one_sided(&self) -> (Vec<DVector<f64>>, Vec<f64>) {
        let mut g = Vec::new();
        let mut h = Vec::new();
        for i in 0..self.a_in.nrows() {
            let row = self.a_in.row(i).transpose();
            if self.upper[i].is_finite() {
                g.push(row.clone());
                h.push(self.upper[i]);
            }
            if self.lower[i].is_finite() {
                g.push(-row);
                h.push(-self.lower[i]);
            }
        }
        (g, h)
    }

    /// Minimizer of the objective with the equalities and the one-sided rows
    /// in `active` held tight, with the multipliers of those rows.
    fn equality_qp(&self, g: &[DVector<f64>], h: &[f64], active: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.n();
        let k = self.a_eq.nrows() + active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
        rhs.rows_mut(0, n).copy_from(&(-&self.q));
        let mut put = |r: usize, row: &DVector<f64>, b: f64| {
            for c in 0..n {
                kkt[(n + r, c)] = row[c];
                kkt[(c, n + r)] = row[c];
            }
            rhs[n + r] = b;
        };
        for i in 0..self.a_eq.nrows() {
            put(i, &self.a_eq.row(i).transpose(), self.b_eq[i]);
        }
        for (r, &j) in active.iter().enumerate() {
            put(self.a_eq.nrows() + r, &g[j], h[j]);
        }
        let sol = kkt.lu().solve(&rhs)?;
        Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
    }

    /// Primal active-set method started from the known feasible point.
    pub fn solve_active_set(&self) -> DVector<f64> {
        let (g, h) = self.one_sided();
        let n = self.n();
        let mut x = self.feasible.clone();
        let mut work: Vec<usize> = Vec::new();
        for _ in 0..10_000 {
            // Step to the minimizer on the current working set.
            let (target, lambda) = self.equality_qp(&g, &h, &work).expect("independent working set");
            let step = &target - &x;
            if step.amax() <= 1e-12 * (1.0 + x.amax()) {
                let off = self.a_eq.nrows();
                let worst = (0..work.len())
                    .map(|r| (r, lambda[off + r]))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match worst {
                    Some((r, l)) if l < -1e-10 => {
                        work.remove(r);
                        continue;
                    }
                    _ => return x,
                }
            }
            let mut alpha = 1.0;
            let mut blocking = None;
            for j in 0..g.len() {
                if work.contains(&j) {
                    continue;
                }
                let gp = g[j].dot(&step);
                if gp > 1e-14 {
                    let t = (h[j] - g[j].dot(&x)) / gp;
                    if t < alpha {
                        alpha = t.max(0.0);
                        blocking = Some(j);
                    }
                }
            }
            x += step * alpha;
            if let Some(j) = blocking {
                work.push(j);
            }
            assert!(work.len() + self.a_eq.nrows() <= n, "working set overfull");
        }
        panic!("active-set oracle did not converge");
    }

    /// Exhaustive search over every subset of one-sided rows; only usable for
    /// a handful of rows.
    pub fn solve_enumeration(&self) -> Option<DVector<f64>> {
        let (g, h) = self.one_sided();
        let rows = g.len();
        assert!(rows <= 16, "enumeration over {rows} rows");
        let free = self.n().saturating_sub(self.a_eq.nrows());
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << rows) {
            if mask.count_ones() as usize > free {
                continue;
            }
            let active: Vec<usize> = (0..rows).filter(|j| mask & (1 << j) != 0).collect();
            let Some((x, lambda)) = self.equality_qp(&g, &h, &active) else {
                continue;
            };
            let off = self.a_eq.nrows();
            let feasible = (0..rows).all(|j| g[j].dot(&x) <= h[j] + 1e-9);
            let dual_ok = (0..active.len()).all(|r| lambda[off + r] >= -1e-9);
            if feasible && dual_ok {
                let f = self.objective(&x);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, x));
                }
            }
        }
        best.map(|(_, x)| x)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Largest violation of the constraints at `x`.
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * x - &self.b_eq).amax();
        let ax = &self.a_in * x;
        let ineq = (0..ax.len())
            .map(|i| (self.lower[i] - ax[i]).max(ax[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }
}

/// Compensated Maclaurin series of `atan` for |x| < 0.5.
pub fn atan_series(x: f64) -> f64 {
    assert!(x.abs() < 0.5);
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut power = x;
    let x2 = x * x;
    for k in 0..200 {
        let term = power / (2 * k + 1) as f64 * if k % 2 == 0 { 1.0 } else { -1.0 };
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        power *= x2;
        if power.abs() < 1e-40 {
            break;
        }
    }
    sum
}

/// `tan δ` from its own series for |δ| < 0.5.
pub fn tan_series(d: f64) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    let mut term_s = d;
    let mut term_c = 1.0;
    for k in 0..60 {
        s += term_s;
        c += term_c;
        term_s *= -d * d / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
        term_c *= -d * d / ((2 * k + 1) as f64 * (2 * k + 2) as f64);
    }
    s / c
}
