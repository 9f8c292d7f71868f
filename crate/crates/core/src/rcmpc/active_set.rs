//! Dual active-set QP solver (Goldfarb–Idnani) for strictly convex problems.
//!
//! Works on `J = L⁻ᵀ Q` and the triangular factor `R` of the active
//! constraints, both updated with Givens rotations, so each add or drop
//! costs `O(n²)`.

use crate::linalg::{Cholesky, Matrix};
use crate::rcmpc::qp::{kkt_residuals, QpError, QpProblem, QpSolution, QpStatus};
use crate::scalar::Scalar;

/// One-sided constraint `sign · a_rowᵀ x ≥ sign · bound`.
#[derive(Debug, Clone, Copy)]
struct Side<T> {
    row: usize,
    sign: T,
    bound: T,
    equality: bool,
}

struct Workspace<T> {
    n: usize,
    j: Matrix<T>,
    r: Matrix<T>,
    /// Active constraint ids and multipliers.
    active: Vec<usize>,
    u: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    /// `d = Jᵀ np`
    fn compute_d(&self, np: &[T], d: &mut [T]) {
        for (i, di) in d.iter_mut().enumerate() {
            *di = T::zero();
            for k in 0..self.n {
                *di += self.j[(k, i)] * np[k];
            }
        }
    }

    /// `z = J₂ d₂`, the primal step direction.
    fn update_z(&self, d: &[T], z: &mut [T]) {
        let iq = self.active.len();
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = T::zero();
            for i in iq..self.n {
                *zk += self.j[(k, i)] * d[i];
            }
        }
    }

    /// `r = R⁻¹ d₁`, the dual step direction.
    fn update_r(&self, d: &[T], r: &mut [T]) {
        let iq = self.active.len();
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in i + 1..iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
    }

    /// Appends a constraint whose `d = Jᵀ n` is given; false if it is
    /// linearly dependent on the active set.
    fn add_constraint(&mut self, d: &mut [T], id: usize, mult: T, eps: T) -> bool {
        let n = self.n;
        let iq = self.active.len();
        for jj in (iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == T::zero() {
                continue;
            }
            d[jj] = T::zero();
            ss /= h;
            cc /= h;
            if cc < T::zero() {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (T::one() + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj - 1)] = a;
                self.j[(k, jj)] = xny * (t1 + a) - t2;
            }
        }
        if iq >= n || d[iq].abs() <= eps {
            return false;
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        self.active.push(id);
        self.u.push(mult);
        true
    }

    fn delete_constraint(&mut self, pos: usize) {
        let n = self.n;
        let iq = self.active.len();
        self.active.remove(pos);
        self.u.remove(pos);
        for c in pos..iq - 1 {
            for i in 0..n {
                self.r[(i, c)] = self.r[(i, c + 1)];
            }
        }
        for i in 0..n {
            self.r[(i, iq - 1)] = T::zero();
        }
        let iq = iq - 1;
        for jj in pos..iq {
            let (mut cc, mut ss) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = cc.hypot(ss);
            if h == T::zero() {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = T::zero();
            if cc < T::zero() {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (T::one() + cc);
            for k in jj + 1..iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                let a = t1 * cc + t2 * ss;
                self.r[(jj, k)] = a;
                self.r[(jj + 1, k)] = xny * (t1 + a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj)] = a;
                self.j[(k, jj + 1)] = xny * (a + t1) - t2;
            }
        }
    }
}

/// Solves a QP with positive definite `P` exactly (up to rounding).
///
/// Returns `PrimalInfeasible` when no feasible point exists and
/// `MaxIterations` after `max_iter` active-set changes.
pub fn solve_qp_active_set<T: Scalar>(
    problem: &QpProblem<T>,
    max_iter: usize,
) -> Result<QpSolution<T>, QpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let chol = Cholesky::factor(&problem.p).map_err(|_| QpError::NotPositiveSemidefinite)?;

    // Stacked rows: equalities first, then inequalities.
    let mut rows: Vec<&[T]> = Vec::new();
    let mut sides: Vec<Side<T>> = Vec::new();
    for i in 0..problem.a_eq.rows() {
        rows.push(problem.a_eq.row(i));
        sides.push(Side { row: rows.len() - 1, sign: T::one(), bound: problem.b_eq[i], equality: true });
    }
    for i in 0..problem.a_in.rows() {
        rows.push(problem.a_in.row(i));
        let r = rows.len() - 1;
        let (l, u) = (problem.lower[i], problem.upper[i]);
        if l > u {
            return Ok(infeasible(problem, 0));
        }
        if l == u {
            sides.push(Side { row: r, sign: T::one(), bound: l, equality: true });
            continue;
        }
        if l.is_finite() {
            sides.push(Side { row: r, sign: T::one(), bound: l, equality: false });
        }
        if u.is_finite() {
            sides.push(Side { row: r, sign: -T::one(), bound: u, equality: false });
        }
    }
    let normal = |s: &Side<T>, out: &mut [T]| {
        for (o, a) in out.iter_mut().zip(rows[s.row]) {
            *o = s.sign * *a;
        }
    };
    let slack = |s: &Side<T>, x: &[T]| -> T {
        let mut v = T::zero();
        for (a, xi) in rows[s.row].iter().zip(x) {
            v += *a * *xi;
        }
        s.sign * (v - s.bound)
    };

    // J = L⁻ᵀ
    let mut j = Matrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[c] = T::one();
        // Column c of L⁻ᵀ is row c of L⁻¹; solve Lᵀ y = e_c ⇒ y = L⁻ᵀ e_c.
        let col = chol.solve_lt(&e);
        for k in 0..n {
            j[(k, c)] = col[k];
        }
    }
    let mut ws = Workspace {
        n,
        j,
        r: Matrix::zeros(n, n),
        active: Vec::new(),
        u: Vec::new(),
    };
    let neg_q: Vec<T> = problem.q.iter().map(|v| -*v).collect();
    let mut x = chol.solve(&neg_q);

    let scale = T::one().max(problem.p.max_abs());
    let eps = T::epsilon() * T::lit(1e3) * scale;
    let mut np = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut r = vec![T::zero(); n];
    let mut iterations = 0;

    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y);

    for (id, s) in sides.iter().enumerate() {
        if !s.equality {
            continue;
        }
        normal(s, &mut np);
        ws.compute_d(&np, &mut d);
        ws.update_z(&d, &mut z);
        ws.update_r(&d, &mut r);
        let iq = ws.active.len();
        let mut t2 = T::zero();
        let znp = dot(&z, &np);
        if dot(&z, &z) > eps * eps {
            t2 = -slack(s, &x) / znp;
        }
        for k in 0..n {
            x[k] += t2 * z[k];
        }
        for k in 0..iq {
            ws.u[k] -= t2 * r[k];
        }
        if !ws.add_constraint(&mut d, id, t2, eps) {
            // Dependent equality: fine if already satisfied.
            if slack(s, &x).abs() > T::lit(1e-9) * T::one().max(s.bound.abs()) {
                return Ok(infeasible(problem, iterations));
            }
        }
    }
    let meq = ws.active.len();

    let feas_tol = |s: &Side<T>| T::lit(1e-11) * T::one().max(s.bound.abs());
    'outer: loop {
        iterations += 1;
        if iterations > max_iter {
            return Ok(finish(problem, x, &ws, &sides, QpStatus::MaxIterations, iterations));
        }
        // Most violated inactive inequality.
        let mut p = None;
        let mut worst = T::zero();
        for (id, s) in sides.iter().enumerate() {
            if s.equality || ws.active.contains(&id) {
                continue;
            }
            let v = slack(s, &x);
            if v < -feas_tol(s) && v < worst {
                worst = v;
                p = Some(id);
            }
        }
        let Some(p) = p else {
            return Ok(finish(problem, x, &ws, &sides, QpStatus::Optimal, iterations));
        };
        normal(&sides[p], &mut np);
        let mut u_p = T::zero();
        loop {
            ws.compute_d(&np, &mut d);
            ws.update_z(&d, &mut z);
            ws.update_r(&d, &mut r);
            let iq = ws.active.len();
            let mut t1 = T::infinity();
            let mut drop = None;
            for k in meq..iq {
                if r[k] > T::zero() {
                    let ratio = ws.u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            let znp = dot(&z, &np);
            let t2 = if dot(&z, &z) > eps * eps && znp > T::zero() {
                -slack(&sides[p], &x) / znp
            } else {
                T::infinity()
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(infeasible(problem, iterations));
            }
            if !t2.is_finite() {
                for k in 0..iq {
                    ws.u[k] -= t * r[k];
                }
                u_p += t;
                ws.delete_constraint(drop.expect("finite t1 has an index"));
                iterations += 1;
                if iterations > max_iter {
                    return Ok(finish(problem, x, &ws, &sides, QpStatus::MaxIterations, iterations));
                }
                continue;
            }
            for k in 0..n {
                x[k] += t * z[k];
            }
            for k in 0..iq {
                ws.u[k] -= t * r[k];
            }
            u_p += t;
            if t == t2 {
                if !ws.add_constraint(&mut d, p, u_p, eps) {
                    return Ok(infeasible(problem, iterations));
                }
                continue 'outer;
            }
            ws.delete_constraint(drop.expect("partial step has an index"));
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(problem, x, &ws, &sides, QpStatus::MaxIterations, iterations));
            }
        }
    }
}

fn infeasible<T: Scalar>(problem: &QpProblem<T>, iterations: usize) -> QpSolution<T> {
    let n = problem.num_vars();
    QpSolution {
        x: vec![T::zero(); n],
        y: vec![T::zero(); problem.num_constraints()],
        status: QpStatus::PrimalInfeasible,
        iterations,
        residuals: Default::default(),
        polished: false,
        objective: T::nan(),
    }
}

/// Maps active multipliers to the `P x + q + Aᵀ y = 0` convention.
fn finish<T: Scalar>(
    problem: &QpProblem<T>,
    x: Vec<T>,
    ws: &Workspace<T>,
    sides: &[Side<T>],
    status: QpStatus,
    iterations: usize,
) -> QpSolution<T> {
    let mut y = vec![T::zero(); problem.num_constraints()];
    for (id, mult) in ws.active.iter().zip(&ws.u) {
        let s = &sides[*id];
        y[s.row] -= s.sign * *mult;
    }
    let residuals = kkt_residuals(problem, &x, &y);
    let objective = problem.objective(&x);
    QpSolution {
        x,
        y,
        status,
        iterations,
        residuals,
        polished: false,
        objective,
    }
}
