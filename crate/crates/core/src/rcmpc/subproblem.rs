//! Condensed MPC subproblem: the decision vector is the input sequence
//! `U = [a₀, δ₀, …, a_{N−1}, δ_{N−1}]` and states are affine in it,
//! `z_s = S_s U + w_s`.

use crate::dynamics::{linearize, ControlInput, VehicleState};
use crate::geometry::{vehicle_polytope, Polytope};
use crate::linalg::Matrix;
use crate::rcmpc::qp::QpProblem;
use crate::scenario::{VehicleParams, Weights};

type State = VehicleState<f64>;
type Control = ControlInput<f64>;

/// Below this value of `|sᵀe_i(φ̄)|` both signs of the support term get a row.
const KINK_TOLERANCE: f64 = 0.05;

/// Added to every collision margin so that first-order model error does not
/// eat into the requested clearance.
pub const COLLISION_BUFFER: f64 = 1e-3;

/// Predicted footprint of one neighbor over the horizon.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NeighborPrediction {
    pub id: usize,
    /// `states[s]` for `s = 0..=N`; index 0 is the current step.
    pub states: Vec<State>,
    pub length: f64,
    pub width: f64,
    pub margin: f64,
}

impl NeighborPrediction {
    pub fn polytope(&self, s: usize) -> Polytope<f64> {
        vehicle_polytope(&self.states[s], self.length, self.width)
    }
}

/// Data fixed for one MPC solve of one vehicle.
#[derive(Debug, Clone)]
pub struct SubproblemData<'a> {
    pub params: &'a VehicleParams,
    pub weights: &'a Weights,
    pub dt: f64,
    /// Measured current state.
    pub z0: State,
    /// Input applied at the previous step.
    pub u_prev: Control,
    /// `reference[s]` for `s = 0..=N`.
    pub reference: &'a [State],
    pub neighbors: &'a [NeighborPrediction],
    pub alpha: f64,
    /// Regularizer target for the first predicted state; ignored when `alpha = 0`.
    pub regularizer_target: Option<State>,
    /// Allowed lateral range for the vehicle center.
    pub lateral_bounds: (f64, f64),
    /// Neighbors whose predicted center is farther than this get no rows at that step.
    pub interaction_radius: f64,
}

impl SubproblemData<'_> {
    pub fn horizon(&self) -> usize {
        self.reference.len() - 1
    }
}

/// Affine state prediction `z_s = S_s U + w_s`, `s = 0..=N`.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Row-major `4 × 2N` blocks.
    pub s: Vec<Matrix<f64>>,
    pub w: Vec<[f64; 4]>,
}

impl Prediction {
    pub fn build(z0: &State, lin_states: &[State], lin_inputs: &[Control], data: &SubproblemData) -> Self {
        let n = lin_inputs.len();
        let lin = linearize(lin_states, lin_inputs, &data.params.axles(), data.dt);
        let mut s = Vec::with_capacity(n + 1);
        let mut w = Vec::with_capacity(n + 1);
        s.push(Matrix::zeros(4, 2 * n));
        w.push(z0.to_array());
        for k in 0..n {
            let (a, b, c) = (&lin.a[k], &lin.b[k], &lin.c[k]);
            let prev = &s[k];
            let mut next = Matrix::zeros(4, 2 * n);
            let mut wn = c.to_owned();
            for i in 0..4 {
                let row = next.row_mut(i);
                for j in 0..4 {
                    let aij = a[i][j];
                    if aij != 0.0 {
                        for (r, p) in row.iter_mut().zip(prev.row(j)) {
                            *r += aij * p;
                        }
                        wn[i] += aij * w[k][j];
                    }
                }
                row[2 * k] += b[i][0];
                row[2 * k + 1] += b[i][1];
            }
            s.push(next);
            w.push(wn);
        }
        Self { s, w }
    }

    pub fn state(&self, step: usize, u: &[f64]) -> State {
        let sx = self.s[step].mul_vec(u);
        let w = self.w[step];
        State::new(sx[0] + w[0], sx[1] + w[1], sx[2] + w[2], sx[3] + w[3])
    }
}

/// One linearized collision row, kept for certificate bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionRow {
    pub neighbor: usize,
    pub step: usize,
    pub direction: [f64; 2],
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub qp: QpProblem<f64>,
    pub prediction: Prediction,
    pub rows: Vec<CollisionRow>,
    /// `(inequality row, neighbor index)` for every collision row of the QP.
    pub collision_rows: Vec<(usize, usize)>,
}

impl Subproblem {
    /// Adds one nonnegative slack per neighbor to its collision rows, with
    /// cost `penalty·ξ + ξ²`. For a large enough penalty the solution is the
    /// hard-constrained one whenever that is feasible.
    pub fn soften(&mut self, neighbors: usize, penalty: f64) {
        if neighbors == 0 || self.collision_rows.is_empty() {
            return;
        }
        let qp = &self.qp;
        let n = qp.num_vars();
        let nn = n + neighbors;
        let mut p = Matrix::zeros(nn, nn);
        for i in 0..n {
            p.row_mut(i)[..n].copy_from_slice(qp.p.row(i));
        }
        for i in n..nn {
            p[(i, i)] = 2.0;
        }
        let mut q = qp.q.clone();
        q.resize(nn, penalty);
        let mut out = QpProblem::new(p, q);
        let mut owner = vec![None; qp.a_in.rows()];
        for &(r, j) in &self.collision_rows {
            owner[r] = Some(j);
        }
        let mut row = vec![0.0; nn];
        for i in 0..qp.a_in.rows() {
            row[..n].copy_from_slice(qp.a_in.row(i));
            row[n..].iter_mut().for_each(|v| *v = 0.0);
            if let Some(j) = owner[i] {
                row[n + j] = 1.0;
            }
            out.add_inequality(&row, qp.lower[i], qp.upper[i]);
        }
        for j in 0..neighbors {
            out.add_bound(n + j, 0.0, f64::INFINITY);
        }
        self.qp = out;
    }
}

/// Adds `2 Mᵀ diag(q) M` to `p` and `2 Mᵀ diag(q) r` to `g` for `M` with 4 rows.
fn add_tracking(p: &mut Matrix<f64>, g: &mut [f64], m: &Matrix<f64>, q: &[f64; 4], r: &[f64; 4]) {
    let q2: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
    p.add_weighted_gram(m, &q2);
    for i in 0..4 {
        if q2[i] == 0.0 {
            continue;
        }
        for (gj, mij) in g.iter_mut().zip(m.row(i)) {
            *gj += q2[i] * mij * r[i];
        }
    }
}

/// Quadratic cost `½ Uᵀ P U + qᵀ U` (constant dropped) of the tracking,
/// input, input-rate and regularizer terms.
pub fn build_cost(data: &SubproblemData, pred: &Prediction) -> (Matrix<f64>, Vec<f64>) {
    let n = data.horizon();
    let nv = 2 * n;
    let mut p = Matrix::zeros(nv, nv);
    let mut g = vec![0.0; nv];
    let qz = data.weights.q_z;
    for s in 1..=n {
        let r = data.reference[s].to_array();
        let off = [
            pred.w[s][0] - r[0],
            pred.w[s][1] - r[1],
            pred.w[s][2] - r[2],
            pred.w[s][3] - r[3],
        ];
        add_tracking(&mut p, &mut g, &pred.s[s], &qz, &off);
    }
    let (qu, qd) = (data.weights.q_u, data.weights.q_du);
    let up = data.u_prev.to_array();
    for k in 0..n {
        for c in 0..2 {
            let i = 2 * k + c;
            p[(i, i)] += 2.0 * (qu[c] + qd[c]);
            if k + 1 < n {
                p[(i, i)] += 2.0 * qd[c];
                let j = i + 2;
                p[(i, j)] -= 2.0 * qd[c];
                p[(j, i)] -= 2.0 * qd[c];
            }
        }
    }
    for c in 0..2 {
        g[c] -= 2.0 * qd[c] * up[c];
    }
    if data.alpha > 0.0 {
        if let Some(target) = data.regularizer_target {
            let t = target.to_array();
            let off = [
                pred.w[1][0] - t[0],
                pred.w[1][1] - t[1],
                pred.w[1][2] - t[2],
                pred.w[1][3] - t[3],
            ];
            add_tracking(&mut p, &mut g, &pred.s[1], &[data.alpha; 4], &off);
        }
    }
    (p, g)
}

/// Direct evaluation of the MPC cost on a trajectory: tracking over
/// `s = 1..=N`, inputs, input rates (against `u_prev`), and the regularizer.
pub fn evaluate_objective(data: &SubproblemData, states: &[State], inputs: &[Control]) -> f64 {
    let mut f = 0.0;
    for s in 1..states.len() {
        let e = states[s].diff(&data.reference[s]);
        f += (0..4).map(|i| data.weights.q_z[i] * e[i] * e[i]).sum::<f64>();
    }
    let mut prev = data.u_prev.to_array();
    for u in inputs {
        let u = u.to_array();
        for c in 0..2 {
            f += data.weights.q_u[c] * u[c] * u[c];
            f += data.weights.q_du[c] * (u[c] - prev[c]).powi(2);
        }
        prev = u;
    }
    if data.alpha > 0.0 {
        if let (Some(t), Some(z1)) = (data.regularizer_target, states.get(1)) {
            f += data.alpha * z1.diff(&t).iter().map(|e| e * e).sum::<f64>();
        }
    }
    f
}

/// Signs to linearize `|g|` with: the sign of `g`, or both near zero.
fn signs(g: f64) -> &'static [f64] {
    if g.abs() >= KINK_TOLERANCE {
        if g > 0.0 {
            &[1.0]
        } else {
            &[-1.0]
        }
    } else {
        &[1.0, -1.0]
    }
}

/// Builds the QP around a linearization trajectory. `directions[i][s]` is the
/// separating direction (pointing from neighbor `i` toward the ego) used at
/// step `s`, or `None` to skip that step.
pub fn build_subproblem(
    data: &SubproblemData,
    lin_states: &[State],
    lin_inputs: &[Control],
    directions: &[Vec<Option<[f64; 2]>>],
) -> Subproblem {
    let n = data.horizon();
    assert_eq!(lin_inputs.len(), n, "one linearization input per step");
    assert_eq!(directions.len(), data.neighbors.len(), "one direction list per neighbor");
    let nv = 2 * n;
    let pred = Prediction::build(&data.z0, lin_states, lin_inputs, data);
    let (p, g) = build_cost(data, &pred);
    let mut qp = QpProblem::new(p, g);
    let prm = data.params;
    let up = data.u_prev.to_array();

    for k in 0..n {
        for c in 0..2 {
            let (mut lo, mut hi) = (prm.u_min[c], prm.u_max[c]);
            if k == 0 {
                lo = lo.max(up[c] + prm.du_min[c]);
                hi = hi.min(up[c] + prm.du_max[c]);
            }
            qp.add_bound(2 * k + c, lo, hi);
        }
    }
    let mut row = vec![0.0; nv];
    for k in 1..n {
        for c in 0..2 {
            row.iter_mut().for_each(|r| *r = 0.0);
            row[2 * k + c] = 1.0;
            row[2 * (k - 1) + c] = -1.0;
            qp.add_inequality(&row, prm.du_min[c], prm.du_max[c]);
        }
    }

    let (ylo, yhi) = data.lateral_bounds;
    for s in 1..=n {
        let m = &pred.s[s];
        let w = pred.w[s];
        let y_lo = prm.z_min[1].max(ylo);
        let y_hi = prm.z_max[1].min(yhi);
        for (i, lo, hi) in [(1, y_lo, y_hi), (2, prm.z_min[2], prm.z_max[2]), (3, prm.z_min[3], prm.z_max[3])] {
            qp.add_inequality(m.row(i), lo - w[i], hi - w[i]);
        }
    }

    let (hl, hw) = (0.5 * prm.length, 0.5 * prm.width);
    let mut rows = Vec::new();
    let mut collision_rows = Vec::new();
    for (ni, nb) in data.neighbors.iter().enumerate() {
        for s in 1..=n {
            let Some(dir) = directions[ni][s] else { continue };
            let phi = lin_states[s].phi;
            let (sn, cs) = phi.sin_cos();
            let g1 = dir[0] * cs + dir[1] * sn;
            let g2 = -dir[0] * sn + dir[1] * cs;
            // d g1/dφ = g2, d g2/dφ = −g1
            let h = nb.polytope(s).support(dir);
            let m = &pred.s[s];
            let w = pred.w[s];
            for &s1 in signs(g1) {
                for &s2 in signs(g2) {
                    let kappa = hl * s1 * g2 - hw * s2 * g1;
                    let konst = hl * s1 * g1 + hw * s2 * g2 - kappa * phi;
                    // dir·p − κ φ ≥ margin + h + konst
                    for (r, ((mx, my), mp)) in row
                        .iter_mut()
                        .zip(m.row(0).iter().zip(m.row(1)).zip(m.row(2)))
                    {
                        *r = dir[0] * mx + dir[1] * my - kappa * mp;
                    }
                    let offset = dir[0] * w[0] + dir[1] * w[1] - kappa * w[2];
                    let lower = nb.margin + COLLISION_BUFFER + h + konst - offset;
                    collision_rows.push((qp.a_in.rows(), ni));
                    qp.add_inequality(&row, lower, f64::INFINITY);
                }
            }
            rows.push(CollisionRow {
                neighbor: nb.id,
                step: s,
                direction: dir,
                margin: nb.margin,
            });
        }
    }
    Subproblem {
        qp,
        prediction: pred,
        rows,
        collision_rows,
    }
}
