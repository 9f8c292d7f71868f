//! Per-vehicle regularized cooperative MPC.
//!
//! Each solve alternates between a QP in the inputs with fixed separating
//! directions and a refit of those directions from exact certificates at the
//! new trajectory, relinearizing the dynamics each time.

pub mod active_set;
pub mod qp;
pub mod subproblem;

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_small_angle, ControlInput, VehicleState};
use crate::geometry::{
    dual_distance_bound, exact_certificate, penetration_depth, polytope_distance_oracle,
    vehicle_polytope, DualCertificate, Polytope,
};
use active_set::solve_qp_active_set;
use qp::{solve_qp, KktResiduals, QpSettings, QpStatus, WarmStart};
pub use subproblem::{
    build_subproblem, evaluate_objective, CollisionRow, NeighborPrediction, Prediction,
    Subproblem, SubproblemData, COLLISION_BUFFER,
};

type State = VehicleState<f64>;
type Control = ControlInput<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    /// Converged, but the exact distance check found a margin violation.
    Unsafe,
}

impl PlanStatus {
    pub fn is_optimal(self) -> bool {
        self == PlanStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborCertificate {
    pub neighbor: usize,
    pub step: usize,
    pub certificate: DualCertificate<f64>,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    /// `N + 1` states starting at the measured state.
    pub states: Vec<State>,
    pub inputs: Vec<Control>,
    /// `inputs[s] − inputs[s − 1]`, with the previous applied input before `s = 0`.
    pub rates: Vec<Control>,
    pub certificates: Vec<NeighborCertificate>,
    pub objective: f64,
    pub status: PlanStatus,
    pub qp_iterations: usize,
    pub outer_iterations: usize,
    /// Trajectory change (∞-norm) after each outer iteration.
    pub outer_residuals: Vec<f64>,
    pub residuals: KktResiduals<f64>,
    /// Smallest exact distance minus margin over all checked pairs and steps.
    pub min_clearance: Option<f64>,
}

/// QP algorithm for the MPC subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    #[default]
    ActiveSet,
    Admm,
}

#[derive(Debug, Clone)]
pub struct RcmpcSettings {
    pub method: QpMethod,
    pub active_set_max_iter: usize,
    pub max_outer: usize,
    pub tolerance: f64,
    /// When set, collision rows get a penalized slack per neighbor and an
    /// unreachable margin yields a least-violation plan marked unsafe.
    pub slack_penalty: Option<f64>,
    /// Tolerance of the final exact distance check.
    pub oracle_tolerance: f64,
    pub qp: QpSettings<f64>,
}

impl Default for RcmpcSettings {
    fn default() -> Self {
        let qp = QpSettings {
            max_iter: 4000,
            ..QpSettings::default()
        };
        Self {
            method: QpMethod::default(),
            active_set_max_iter: 2000,
            max_outer: 10,
            tolerance: 1e-4,
            slack_penalty: None,
            oracle_tolerance: 1e-3,
            qp,
        }
    }
}

/// Warm start carried between steps: the previous plan's inputs shifted by one.
#[derive(Debug, Clone, Default)]
pub struct PlanWarmStart {
    pub inputs: Vec<Control>,
}

impl PlanWarmStart {
    pub fn from_previous(prev: &PlanSolution) -> Self {
        let mut inputs: Vec<Control> = prev.inputs.iter().skip(1).copied().collect();
        if let Some(last) = prev.inputs.last() {
            inputs.push(*last);
        }
        Self { inputs }
    }
}

/// Unit direction from `p2` toward `p1` that best separates them: the exact
/// certificate direction when disjoint, else the axis of least overlap.
pub fn separating_direction(p1: &Polytope<f64>, p2: &Polytope<f64>) -> [f64; 2] {
    if let Ok(c) = exact_certificate(p1, p2, None) {
        return c.s;
    }
    let center = |p: &Polytope<f64>| {
        let v = p.vertices();
        [0.25 * (v[0][0] + v[1][0] + v[2][0] + v[3][0]), 0.25 * (v[0][1] + v[1][1] + v[2][1] + v[3][1])]
    };
    let (c1, c2) = (center(p1), center(p2));
    let d = [c1[0] - c2[0], c1[1] - c2[1]];
    let mut best = ([1.0, 0.0], f64::INFINITY);
    for n in [p1.a[0], p1.a[1], p2.a[0], p2.a[1]] {
        let sign = if n[0] * d[0] + n[1] * d[1] >= 0.0 { 1.0 } else { -1.0 };
        let n = [sign * n[0], sign * n[1]];
        let lo1 = -p1.support([-n[0], -n[1]]);
        let hi2 = p2.support(n);
        let overlap = hi2 - lo1;
        if overlap < best.1 {
            best = (n, overlap);
        }
    }
    best.0
}

fn fit_directions(
    data: &SubproblemData,
    states: &[State],
) -> Vec<Vec<Option<[f64; 2]>>> {
    let prm = data.params;
    data.neighbors
        .iter()
        .map(|nb| {
            (0..states.len())
                .map(|s| {
                    if s == 0 {
                        return None;
                    }
                    let (z, o) = (states[s], nb.states[s]);
                    if (z.x - o.x).hypot(z.y - o.y) > data.interaction_radius {
                        return None;
                    }
                    let ego = vehicle_polytope(&z, prm.length, prm.width);
                    Some(separating_direction(&ego, &nb.polytope(s)))
                })
                .collect()
        })
        .collect()
}

fn rates(inputs: &[Control], u_prev: &Control) -> Vec<Control> {
    let mut prev = *u_prev;
    inputs
        .iter()
        .map(|u| {
            let r = Control::new(u.a - prev.a, u.delta - prev.delta);
            prev = *u;
            r
        })
        .collect()
}

fn unpack(u: &[f64]) -> Vec<Control> {
    u.chunks(2).map(|c| Control::new(c[0], c[1])).collect()
}

fn pack(inputs: &[Control]) -> Vec<f64> {
    inputs.iter().flat_map(|u| [u.a, u.delta]).collect()
}

/// Exact post-check: certificates and clearances against every neighbor at
/// every step inside the interaction radius.
fn post_check(
    data: &SubproblemData,
    states: &[State],
) -> (Vec<NeighborCertificate>, Option<f64>) {
    let prm = data.params;
    let mut certs = Vec::new();
    let mut min_clearance: Option<f64> = None;
    for nb in data.neighbors {
        let mut warm: Option<DualCertificate<f64>> = None;
        for s in 1..states.len() {
            let z = states[s];
            let o = nb.states[s];
            if (z.x - o.x).hypot(z.y - o.y) > data.interaction_radius {
                continue;
            }
            let ego = vehicle_polytope(&z, prm.length, prm.width);
            let other = nb.polytope(s);
            let dist = polytope_distance_oracle(&ego, &other).unwrap_or(0.0);
            let dist = if dist > 0.0 { dist } else { -penetration_depth(&ego, &other) };
            let c = dist - nb.margin;
            min_clearance = Some(min_clearance.map_or(c, |m| m.min(c)));
            if let Ok(c) = exact_certificate(&ego, &other, warm.as_ref()) {
                let bound = dual_distance_bound(&ego, &other, &c).unwrap_or(f64::NEG_INFINITY);
                warm = Some(c);
                certs.push(NeighborCertificate {
                    neighbor: nb.id,
                    step: s,
                    certificate: c,
                    bound,
                    margin: nb.margin,
                });
            }
        }
    }
    (certs, min_clearance)
}

/// Solves one vehicle's subproblem from a warm start.
pub fn solve_rcmpc(
    data: &SubproblemData,
    warm: &PlanWarmStart,
    settings: &RcmpcSettings,
) -> PlanSolution {
    let n = data.horizon();
    let mut inputs: Vec<Control> = (0..n)
        .map(|s| warm.inputs.get(s).copied().unwrap_or(data.u_prev))
        .collect();
    let axles = data.params.axles();
    let mut states = rollout_small_angle(&data.z0, &inputs, &axles, data.dt);
    let mut directions = fit_directions(data, &states);
    let mut residuals = Vec::new();
    let mut qp_iterations = 0;
    let mut kkt = KktResiduals::default();
    let mut status = PlanStatus::MaxIterations;
    let mut duals: Option<Vec<f64>> = None;
    let mut outer = 0;
    while outer < settings.max_outer {
        outer += 1;
        let mut sub = build_subproblem(data, &states, &inputs, &directions);
        if let Some(penalty) = settings.slack_penalty {
            sub.soften(data.neighbors.len(), penalty);
        }
        let ws = WarmStart {
            x: {
                let mut x = pack(&inputs);
                x.resize(sub.qp.num_vars(), 0.0);
                x
            },
            y: duals.clone().filter(|y| y.len() == sub.qp.num_constraints()),
        };
        let result = match settings.method {
            QpMethod::ActiveSet => solve_qp_active_set(&sub.qp, settings.active_set_max_iter),
            QpMethod::Admm => solve_qp(&sub.qp, &settings.qp, Some(&ws)),
        };
        let sol = match result {
            Ok(s) => s,
            Err(_) => {
                status = PlanStatus::Infeasible;
                break;
            }
        };
        qp_iterations += sol.iterations;
        kkt = sol.residuals;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::MaxIterations => {
                status = PlanStatus::MaxIterations;
                break;
            }
            QpStatus::PrimalInfeasible | QpStatus::DualInfeasible => {
                status = PlanStatus::Infeasible;
                break;
            }
        }
        let new_inputs = unpack(&sol.x[..2 * n]);
        let new_states = rollout_small_angle(&data.z0, &new_inputs, &axles, data.dt);
        let change = states
            .iter()
            .zip(&new_states)
            .flat_map(|(a, b)| a.diff(b))
            .chain(inputs.iter().zip(&new_inputs).flat_map(|(a, b)| [a.a - b.a, a.delta - b.delta]))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        residuals.push(change);
        inputs = new_inputs;
        states = new_states;
        duals = Some(sol.y);
        status = PlanStatus::Optimal;
        if change <= settings.tolerance {
            break;
        }
        directions = fit_directions(data, &states);
        if outer == settings.max_outer {
            status = PlanStatus::MaxIterations;
        }
    }
    let (certificates, min_clearance) = post_check(data, &states);
    if status == PlanStatus::Optimal && min_clearance.is_some_and(|c| c < -settings.oracle_tolerance) {
        status = PlanStatus::Unsafe;
    }
    PlanSolution {
        objective: evaluate_objective(data, &states, &inputs),
        rates: rates(&inputs, &data.u_prev),
        states,
        inputs,
        certificates,
        status,
        qp_iterations,
        outer_iterations: outer,
        outer_residuals: residuals,
        residuals: kkt,
        min_clearance,
    }
}
