//! Dense convex QP solver based on operator splitting (ADMM).
//!
//! Solves
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  A_eq x = b_eq
//!             lower ≤ A_in x ≤ upper
//! ```
//!
//! with the OSQP iteration: Ruiz equilibration, per-row penalty (equality
//! rows get a stiffer ρ), adaptive ρ, infeasibility certificates from
//! successive iterate differences, and a polishing step that solves the
//! reduced KKT system on the guessed active set. Polishing is what delivers
//! solutions accurate to ~1e-10 on the small problems this crate builds.

use crate::linalg::{Cholesky, Ldlt, Matrix};
use crate::scalar::{dot, norm_inf, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("problem data contains NaN")]
    NotANumber,
}

/// Quadratic program in the form documented at module level.
#[derive(Debug, Clone)]
pub struct QpProblem<T> {
    pub p: Matrix<T>,
    pub q: Vec<T>,
    pub a_eq: Matrix<T>,
    pub b_eq: Vec<T>,
    pub a_in: Matrix<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> QpProblem<T> {
    pub fn new(p: Matrix<T>, q: Vec<T>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a_eq: Matrix::zeros(0, n),
            b_eq: Vec::new(),
            a_in: Matrix::zeros(0, n),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b_eq.len() + self.lower.len()
    }

    pub fn add_equality(&mut self, row: &[T], rhs: T) {
        self.a_eq.push_row(row);
        self.b_eq.push(rhs);
    }

    pub fn add_inequality(&mut self, row: &[T], lower: T, upper: T) {
        self.a_in.push_row(row);
        self.lower.push(lower);
        self.upper.push(upper);
    }

    /// Adds `lower ≤ x_i ≤ upper` as an inequality row.
    pub fn add_bound(&mut self, i: usize, lower: T, upper: T) {
        let mut row = vec![T::zero(); self.num_vars()];
        row[i] = T::one();
        self.add_inequality(&row, lower, upper);
    }

    /// Outer polygonal approximation of `‖(x_i, x_j)‖₂ ≤ radius` with `sides`
    /// tangent half-planes. The polygon contains the disc; its vertices lie at
    /// `radius · sec(π / sides)`.
    pub fn add_norm_ball_polygon(&mut self, i: usize, j: usize, sides: usize, radius: T) {
        let two_pi = T::lit(std::f64::consts::TAU);
        for k in 0..sides {
            let theta = two_pi * T::lit(k as f64) / T::lit(sides as f64);
            let mut row = vec![T::zero(); self.num_vars()];
            row[i] = theta.cos();
            row[j] = theta.sin();
            self.add_inequality(&row, T::neg_infinity(), radius);
        }
    }

    /// Objective `½ xᵀ P x + qᵀ x`.
    pub fn objective(&self, x: &[T]) -> T {
        let px = self.p.mul_vec(x);
        T::lit(0.5) * dot(x, &px) + dot(&self.q, x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.p.rows() != n || self.p.cols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "P is {}x{}, q has {n} entries",
                self.p.rows(),
                self.p.cols()
            )));
        }
        if self.a_eq.cols() != n || self.a_eq.rows() != self.b_eq.len() {
            return Err(QpError::DimensionMismatch("equality block".into()));
        }
        if self.a_in.cols() != n
            || self.a_in.rows() != self.lower.len()
            || self.lower.len() != self.upper.len()
        {
            return Err(QpError::DimensionMismatch("inequality block".into()));
        }
        let any_nan = self.p.as_slice().iter().any(|v| v.is_nan())
            || self.q.iter().any(|v| v.is_nan())
            || self.a_eq.as_slice().iter().any(|v| v.is_nan())
            || self.a_in.as_slice().iter().any(|v| v.is_nan())
            || self.b_eq.iter().chain(&self.lower).chain(&self.upper).any(|v| v.is_nan());
        if any_nan {
            return Err(QpError::NotANumber);
        }
        let scale = T::one().max(self.p.max_abs());
        let asym = self.p.asymmetry();
        if asym > T::lit(1e-9) * scale {
            return Err(QpError::NotSymmetric(asym.to_f64_lossy()));
        }
        if n > 0 {
            let mut shifted = self.p.clone();
            shifted.add_diagonal(T::lit(1e-9) * scale);
            if Cholesky::factor(&shifted).is_err() {
                return Err(QpError::NotPositiveSemidefinite);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings<T> {
    pub rho: T,
    pub sigma: T,
    /// Over-relaxation factor in (0, 2).
    pub alpha: T,
    pub eps_abs: T,
    pub eps_rel: T,
    pub eps_infeasible: T,
    pub max_iter: usize,
    pub check_interval: usize,
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            rho: T::lit(0.1),
            sigma: T::lit(1e-6),
            alpha: T::lit(1.6),
            eps_abs: T::lit(1e-6),
            eps_rel: T::lit(1e-6),
            eps_infeasible: T::lit(1e-7),
            max_iter: 20_000,
            check_interval: 5,
            adaptive_rho_interval: 25,
            scaling_iters: 10,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

/// Unscaled ∞-norm optimality residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct KktResiduals<T> {
    /// `‖A x − Π(A x)‖`, distance of the constraint values to `[l, u]`.
    pub primal: T,
    /// `‖P x + q + Aᵀ y‖`
    pub dual: T,
    /// Largest `|y_i|·slack_i` over both sides of every row; a multiplier on
    /// an infinite side counts as `|y_i|`.
    pub complementarity: T,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Multipliers for `[A_eq; A_in]`; positive values push against upper bounds.
    pub y: Vec<T>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals<T>,
    pub polished: bool,
    pub objective: T,
}

#[derive(Debug, Clone, Default)]
pub struct WarmStart<T> {
    pub x: Vec<T>,
    pub y: Option<Vec<T>>,
}

/// Stacked `l ≤ A x ≤ u` view of a problem.
struct Stacked<T> {
    a: Matrix<T>,
    l: Vec<T>,
    u: Vec<T>,
}

fn stack<T: Scalar>(p: &QpProblem<T>) -> Stacked<T> {
    let n = p.num_vars();
    let m = p.num_constraints();
    let mut a = Matrix::zeros(m, n);
    for i in 0..p.a_eq.rows() {
        a.row_mut(i).copy_from_slice(p.a_eq.row(i));
    }
    let off = p.a_eq.rows();
    for i in 0..p.a_in.rows() {
        a.row_mut(off + i).copy_from_slice(p.a_in.row(i));
    }
    let mut l = p.b_eq.clone();
    l.extend_from_slice(&p.lower);
    let mut u = p.b_eq.clone();
    u.extend_from_slice(&p.upper);
    Stacked { a, l, u }
}

/// Ruiz equilibration data: `P̄ = c D P D`, `Ā = E A D`, `q̄ = c D q`.
struct Scaling<T> {
    d: Vec<T>,
    e: Vec<T>,
    c: T,
}

fn equilibrate<T: Scalar>(
    p: &Matrix<T>,
    q: &[T],
    a: &Matrix<T>,
    iters: usize,
) -> (Matrix<T>, Vec<T>, Matrix<T>, Scaling<T>) {
    let (n, m) = (p.rows(), a.rows());
    let mut ps = p.clone();
    let mut as_ = a.clone();
    let mut qs = q.to_vec();
    let mut d = vec![T::one(); n];
    let mut e = vec![T::one(); m];
    let (lo, hi) = (T::lit(1e-4), T::lit(1e4));
    let clamp = |v: T| if v < lo { T::one() } else { v.min(hi) };
    for _ in 0..iters {
        let mut dn = vec![T::zero(); n];
        for j in 0..n {
            for i in 0..n {
                dn[j] = dn[j].max(ps[(i, j)].abs());
            }
        }
        let mut en = vec![T::zero(); m];
        for i in 0..m {
            for (j, v) in as_.row(i).iter().enumerate() {
                let av = v.abs();
                dn[j] = dn[j].max(av);
                en[i] = en[i].max(av);
            }
        }
        for v in dn.iter_mut() {
            *v = T::one() / clamp(*v).sqrt();
        }
        for v in en.iter_mut() {
            *v = T::one() / clamp(*v).sqrt();
        }
        for i in 0..n {
            for j in 0..n {
                ps[(i, j)] *= dn[i] * dn[j];
            }
            qs[i] *= dn[i];
            d[i] *= dn[i];
        }
        for i in 0..m {
            for (j, v) in as_.row_mut(i).iter_mut().enumerate() {
                *v *= en[i] * dn[j];
            }
            e[i] *= en[i];
        }
    }
    let mut mean_col = T::zero();
    if n > 0 {
        for j in 0..n {
            let mut c = T::zero();
            for i in 0..n {
                c = c.max(ps[(i, j)].abs());
            }
            mean_col += c;
        }
        mean_col /= T::lit(n as f64);
    }
    let c = T::one() / clamp(mean_col.max(norm_inf(&qs)));
    for v in qs.iter_mut() {
        *v *= c;
    }
    for i in 0..n {
        for j in 0..n {
            ps[(i, j)] *= c;
        }
    }
    (ps, qs, as_, Scaling { d, e, c })
}

fn project<T: Scalar>(v: T, l: T, u: T) -> T {
    v.max(l).min(u)
}

/// Unscaled KKT residuals of a candidate primal-dual pair.
pub fn kkt_residuals<T: Scalar>(problem: &QpProblem<T>, x: &[T], y: &[T]) -> KktResiduals<T> {
    let st = stack(problem);
    kkt_stacked(&problem.p, &problem.q, &st, x, y)
}

fn kkt_stacked<T: Scalar>(
    p: &Matrix<T>,
    q: &[T],
    st: &Stacked<T>,
    x: &[T],
    y: &[T],
) -> KktResiduals<T> {
    let ax = st.a.mul_vec(x);
    let mut primal = T::zero();
    let mut comp = T::zero();
    for i in 0..ax.len() {
        let z = project(ax[i], st.l[i], st.u[i]);
        primal = primal.max((ax[i] - z).abs());
        if y[i] > T::zero() {
            let slack = if st.u[i].is_finite() {
                (st.u[i] - ax[i]).abs()
            } else {
                T::one()
            };
            comp = comp.max(y[i] * slack);
        } else if y[i] < T::zero() {
            let slack = if st.l[i].is_finite() {
                (ax[i] - st.l[i]).abs()
            } else {
                T::one()
            };
            comp = comp.max(-y[i] * slack);
        }
    }
    let mut r = p.mul_vec(x);
    let aty = st.a.tr_mul_vec(y);
    for i in 0..r.len() {
        r[i] += q[i] + aty[i];
    }
    KktResiduals {
        primal,
        dual: norm_inf(&r),
        complementarity: comp,
    }
}

/// Relative tolerance scales used by the termination test.
fn tolerances<T: Scalar>(
    settings: &QpSettings<T>,
    p: &Matrix<T>,
    q: &[T],
    st: &Stacked<T>,
    x: &[T],
    y: &[T],
) -> (T, T) {
    let ax = st.a.mul_vec(x);
    let z: Vec<T> = ax
        .iter()
        .enumerate()
        .map(|(i, v)| project(*v, st.l[i], st.u[i]))
        .collect();
    let px = p.mul_vec(x);
    let aty = st.a.tr_mul_vec(y);
    let eps_p = settings.eps_abs + settings.eps_rel * norm_inf(&ax).max(norm_inf(&z));
    let eps_d = settings.eps_abs
        + settings.eps_rel * norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(q));
    (eps_p, eps_d)
}

fn polish<T: Scalar>(
    p: &Matrix<T>,
    q: &[T],
    st: &Stacked<T>,
    z: &[T],
    y: &[T],
) -> Option<(Vec<T>, Vec<T>)> {
    let n = q.len();
    let m = st.l.len();
    // Row index and whether it is pinned at its lower bound.
    let mut active: Vec<(usize, bool)> = Vec::new();
    for i in 0..m {
        if st.l[i] == st.u[i] {
            active.push((i, true));
        } else if st.l[i].is_finite() && z[i] - st.l[i] < -y[i] {
            active.push((i, true));
        } else if st.u[i].is_finite() && st.u[i] - z[i] < y[i] {
            active.push((i, false));
        }
    }
    let k = active.len();
    let dim = n + k;
    let delta = T::lit(1e-9) * T::one().max(p.max_abs());
    let mut kkt = Matrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = p[(i, j)];
        }
    }
    for (r, (row, _)) in active.iter().enumerate() {
        for j in 0..n {
            let v = st.a[(*row, j)];
            kkt[(n + r, j)] = v;
            kkt[(j, n + r)] = v;
        }
    }
    let exact = kkt.clone();
    for i in 0..n {
        kkt[(i, i)] += delta;
    }
    for r in 0..k {
        kkt[(n + r, n + r)] -= delta;
    }
    let fac = Ldlt::factor(&kkt).ok()?;
    let mut rhs = vec![T::zero(); dim];
    for i in 0..n {
        rhs[i] = -q[i];
    }
    for (r, (row, at_lower)) in active.iter().enumerate() {
        rhs[n + r] = if *at_lower { st.l[*row] } else { st.u[*row] };
    }
    let mut sol = fac.solve(&rhs);
    for _ in 0..10 {
        let ks = exact.mul_vec(&sol);
        let resid: Vec<T> = rhs.iter().zip(&ks).map(|(a, b)| *a - *b).collect();
        if norm_inf(&resid) <= T::lit(1e-14) * T::one().max(norm_inf(&rhs)) {
            break;
        }
        let corr = fac.solve(&resid);
        for (s, c) in sol.iter_mut().zip(&corr) {
            *s += *c;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol[..n].to_vec();
    let mut yp = vec![T::zero(); m];
    for (r, (row, at_lower)) in active.iter().enumerate() {
        let v = sol[n + r];
        let tol = T::lit(1e-9);
        if st.l[*row] != st.u[*row] && ((*at_lower && v > tol) || (!*at_lower && v < -tol)) {
            // multiplier with the wrong sign: active set guess is wrong
            return None;
        }
        yp[*row] = v;
    }
    Some((x, yp))
}

/// Solves a convex QP. Returns an error only for malformed problem data;
/// infeasibility and iteration limits are reported through [`QpStatus`].
pub fn solve_qp<T: Scalar>(
    problem: &QpProblem<T>,
    settings: &QpSettings<T>,
    warm: Option<&WarmStart<T>>,
) -> Result<QpSolution<T>, QpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let st = stack(problem);
    let m = st.l.len();

    if (0..m).any(|i| st.l[i] > st.u[i]) {
        return Ok(QpSolution {
            x: vec![T::zero(); n],
            y: vec![T::zero(); m],
            status: QpStatus::PrimalInfeasible,
            iterations: 0,
            residuals: KktResiduals::default(),
            polished: false,
            objective: T::nan(),
        });
    }

    let (ps, qs, as_, sc) = equilibrate(&problem.p, &problem.q, &st.a, settings.scaling_iters);
    let ls: Vec<T> = st.l.iter().zip(&sc.e).map(|(l, e)| *l * *e).collect();
    let us: Vec<T> = st.u.iter().zip(&sc.e).map(|(u, e)| *u * *e).collect();

    // Scaled iterates.
    let mut x = vec![T::zero(); n];
    let mut y = vec![T::zero(); m];
    if let Some(w) = warm {
        if w.x.len() == n {
            for i in 0..n {
                x[i] = w.x[i] / sc.d[i];
            }
        }
        if let Some(wy) = &w.y {
            if wy.len() == m {
                for i in 0..m {
                    y[i] = wy[i] * sc.c / sc.e[i];
                }
            }
        }
    }
    let mut z: Vec<T> = as_
        .mul_vec(&x)
        .iter()
        .enumerate()
        .map(|(i, v)| project(*v, ls[i], us[i]))
        .collect();

    let eq_scale = T::lit(1e3);
    let rho_floor = T::lit(1e-6);
    let rho_ceil = T::lit(1e6);
    let mut rho = settings.rho;
    let rho_vec = |rho: T| -> Vec<T> {
        (0..m)
            .map(|i| if st.l[i] == st.u[i] { rho * eq_scale } else { rho })
            .collect()
    };
    let factor = |rv: &[T]| -> Option<Cholesky<T>> {
        let mut k = ps.clone();
        k.add_diagonal(settings.sigma);
        k.add_weighted_gram(&as_, rv);
        Cholesky::factor(&k).ok()
    };
    let mut rv = rho_vec(rho);
    let mut chol = match factor(&rv) {
        Some(c) => c,
        None => return Err(QpError::NotPositiveSemidefinite),
    };

    let unscale_x = |xs: &[T]| -> Vec<T> { xs.iter().zip(&sc.d).map(|(a, d)| *a * *d).collect() };
    let unscale_y =
        |ys: &[T]| -> Vec<T> { ys.iter().zip(&sc.e).map(|(a, e)| *a * *e / sc.c).collect() };

    let mut rhs = vec![T::zero(); n];
    let mut tmp_m = vec![T::zero(); m];
    let mut ztilde = vec![T::zero(); m];
    let mut x_prev;
    let mut y_prev;
    let mut polish_threshold = T::lit(1e-3);
    let mut last_polish: Option<(Vec<T>, Vec<T>)> = None;

    let finish = |x_un: Vec<T>, y_un: Vec<T>, status: QpStatus, it: usize, polished: bool| {
        let residuals = kkt_stacked(&problem.p, &problem.q, &st, &x_un, &y_un);
        let objective = problem.objective(&x_un);
        QpSolution {
            x: x_un,
            y: y_un,
            status,
            iterations: it,
            residuals,
            polished,
            objective,
        }
    };

    for it in 1..=settings.max_iter {
        x_prev = x.clone();
        y_prev = y.clone();

        for i in 0..m {
            tmp_m[i] = rv[i] * z[i] - y[i];
        }
        as_.tr_mul_vec_into(&tmp_m, &mut rhs);
        for i in 0..n {
            rhs[i] += settings.sigma * x[i] - qs[i];
        }
        chol.solve_in_place(&mut rhs);
        as_.mul_vec_into(&rhs, &mut ztilde);
        let a = settings.alpha;
        let one_minus = T::one() - a;
        for i in 0..n {
            x[i] = a * rhs[i] + one_minus * x[i];
        }
        for i in 0..m {
            let zr = a * ztilde[i] + one_minus * z[i];
            let zn = project(zr + y[i] / rv[i], ls[i], us[i]);
            y[i] += rv[i] * (zr - zn);
            z[i] = zn;
        }

        let check = it % settings.check_interval == 0 || it == settings.max_iter;
        if !check {
            continue;
        }

        let x_un = unscale_x(&x);
        let y_un = unscale_y(&y);
        let res = kkt_stacked(&problem.p, &problem.q, &st, &x_un, &y_un);
        let (eps_p, eps_d) = tolerances(settings, &problem.p, &problem.q, &st, &x_un, &y_un);

        if res.primal <= eps_p && res.dual <= eps_d {
            if settings.polish {
                let z_un: Vec<T> = z.iter().zip(&sc.e).map(|(v, e)| *v / *e).collect();
                if let Some((xp, yp)) = polish(&problem.p, &problem.q, &st, &z_un, &y_un) {
                    let rp = kkt_stacked(&problem.p, &problem.q, &st, &xp, &yp);
                    if rp.primal <= res.primal.max(eps_p) && rp.dual <= res.dual.max(eps_d) {
                        return Ok(finish(xp, yp, QpStatus::Optimal, it, true));
                    }
                }
            }
            return Ok(finish(x_un, y_un, QpStatus::Optimal, it, false));
        }

        if settings.polish && res.primal <= polish_threshold && res.dual <= polish_threshold {
            let z_un: Vec<T> = z.iter().zip(&sc.e).map(|(v, e)| *v / *e).collect();
            if let Some((xp, yp)) = polish(&problem.p, &problem.q, &st, &z_un, &y_un) {
                let rp = kkt_stacked(&problem.p, &problem.q, &st, &xp, &yp);
                let (ep, ed) = tolerances(settings, &problem.p, &problem.q, &st, &xp, &yp);
                if rp.primal <= ep && rp.dual <= ed {
                    return Ok(finish(xp, yp, QpStatus::Optimal, it, true));
                }
                last_polish = Some((xp, yp));
            }
            polish_threshold = polish_threshold * T::lit(0.1);
        }

        // Infeasibility certificates, in unscaled space.
        let dy: Vec<T> = (0..m).map(|i| (y[i] - y_prev[i]) * sc.e[i] / sc.c).collect();
        let dy_norm = norm_inf(&dy);
        if dy_norm > T::lit(1e-12) {
            let at_dy = st.a.tr_mul_vec(&dy);
            let mut support = T::zero();
            let mut unbounded = false;
            for i in 0..m {
                if dy[i] > T::zero() {
                    if st.u[i].is_finite() {
                        support += st.u[i] * dy[i];
                    } else {
                        unbounded = true;
                    }
                } else if dy[i] < T::zero() {
                    if st.l[i].is_finite() {
                        support += st.l[i] * dy[i];
                    } else {
                        unbounded = true;
                    }
                }
            }
            let eps = settings.eps_infeasible * dy_norm;
            if !unbounded && norm_inf(&at_dy) <= eps && support < -eps {
                return Ok(finish(
                    unscale_x(&x),
                    unscale_y(&y),
                    QpStatus::PrimalInfeasible,
                    it,
                    false,
                ));
            }
        }
        let dx: Vec<T> = (0..n).map(|i| (x[i] - x_prev[i]) * sc.d[i]).collect();
        let dx_norm = norm_inf(&dx);
        if dx_norm > T::lit(1e-12) {
            let eps = settings.eps_infeasible * dx_norm;
            let pdx = problem.p.mul_vec(&dx);
            if norm_inf(&pdx) <= eps && dot(&problem.q, &dx) < -eps {
                let adx = st.a.mul_vec(&dx);
                let recession = (0..m).all(|i| {
                    let lo_ok = !st.l[i].is_finite() || adx[i] >= -eps;
                    let hi_ok = !st.u[i].is_finite() || adx[i] <= eps;
                    lo_ok && hi_ok
                });
                if recession {
                    return Ok(finish(
                        unscale_x(&x),
                        unscale_y(&y),
                        QpStatus::DualInfeasible,
                        it,
                        false,
                    ));
                }
            }
        }

        if settings.adaptive_rho_interval > 0 && it % settings.adaptive_rho_interval == 0 {
            // Scaled residual balance.
            let ax = as_.mul_vec(&x);
            let mut rp = T::zero();
            for i in 0..m {
                rp = rp.max((ax[i] - z[i]).abs());
            }
            let mut rd_vec = ps.mul_vec(&x);
            let aty = as_.tr_mul_vec(&y);
            for i in 0..n {
                rd_vec[i] += qs[i] + aty[i];
            }
            let rd = norm_inf(&rd_vec);
            let tiny = T::lit(1e-30);
            let np = norm_inf(&ax).max(norm_inf(&z)).max(tiny);
            let nd = norm_inf(&ps.mul_vec(&x))
                .max(norm_inf(&aty))
                .max(norm_inf(&qs))
                .max(tiny);
            let ratio = ((rp / np) / (rd / nd).max(tiny)).sqrt();
            let candidate = (rho * ratio).max(rho_floor).min(rho_ceil);
            if candidate.is_finite() && (candidate > T::lit(5.0) * rho || candidate < T::lit(0.2) * rho) {
                rho = candidate;
                rv = rho_vec(rho);
                if let Some(c) = factor(&rv) {
                    chol = c;
                }
            }
        }
    }

    if let Some((xp, yp)) = last_polish {
        let rp = kkt_stacked(&problem.p, &problem.q, &st, &xp, &yp);
        let (ep, ed) = tolerances(settings, &problem.p, &problem.q, &st, &xp, &yp);
        if rp.primal <= ep && rp.dual <= ed {
            return Ok(finish(xp, yp, QpStatus::Optimal, settings.max_iter, true));
        }
    }
    Ok(finish(
        unscale_x(&x),
        unscale_y(&y),
        QpStatus::MaxIterations,
        settings.max_iter,
        false,
    ))
}
