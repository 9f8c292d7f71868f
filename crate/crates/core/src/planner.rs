//! One synchronous planning round per control step.
//!
//! Every vehicle broadcasts the remainder of its last plan, then all vehicles
//! solve their RC-MPC subproblems against the same information.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::rcmpc::{
    solve_rcmpc, NeighborPrediction, PlanSolution, PlanStatus, PlanWarmStart, RcmpcSettings,
    SubproblemData,
};
use crate::scenario::{ReferenceTrajectory, ScenarioConfig};
use crate::uncertainty::{ConnectivityMatrix, Mode, UncertaintyContext};

type State = VehicleState<f64>;
type Control = ControlInput<f64>;

#[derive(Debug, Clone)]
pub struct PlannerSettings {
    pub rcmpc: RcmpcSettings,
    /// Neighbors farther than this from the ego at a step get no collision rows there.
    pub interaction_radius: f64,
    /// Solve the vehicles of one step on the rayon pool.
    pub parallel: bool,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            rcmpc: RcmpcSettings {
                slack_penalty: Some(1e4),
                ..RcmpcSettings::default()
            },
            interaction_radius: 30.0,
            parallel: true,
        }
    }
}

/// What a vehicle sends at the start of a step: its predicted states for the
/// coming horizon, index 0 being the current step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub sender: usize,
    pub states: Vec<State>,
}

/// Per-vehicle state carried between steps.
#[derive(Debug, Clone, Default)]
pub struct PlannerMemory {
    /// Last plan whose first input was applied, if any.
    pub plans: Vec<Option<PlanSolution>>,
    /// Input applied at the previous step.
    pub applied: Vec<Control>,
}

impl PlannerMemory {
    pub fn new(vehicles: usize) -> Self {
        Self {
            plans: vec![None; vehicles],
            applied: vec![Control::zero(); vehicles],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonPlanStep {
    pub step: usize,
    pub plans: Vec<PlanSolution>,
    /// First input of each plan.
    pub applied: Vec<Control>,
    pub broadcasts: Vec<Broadcast>,
    pub delivered: ConnectivityMatrix,
    /// `neighbors[k]`: the predictions vehicle `k` planned against.
    pub neighbors: Vec<Vec<NeighborPrediction>>,
}

impl PlatoonPlanStep {
    /// Vehicles without a usable plan.
    pub fn failed(&self) -> Vec<bool> {
        self.plans
            .iter()
            .map(|p| p.status == PlanStatus::Infeasible)
            .collect()
    }
}

/// Road-aligned constant-velocity extrapolation over `n` steps.
pub fn constant_velocity(z: &State, n: usize, dt: f64) -> Vec<State> {
    (0..=n)
        .map(|s| State::new(z.x + z.v * dt * s as f64, z.y, z.phi, z.v))
        .collect()
}

/// Shifts a plan by one step and pads the tail at constant velocity.
fn shift_plan(states: &[State], n: usize, dt: f64) -> Vec<State> {
    let mut out: Vec<State> = states.iter().skip(1).take(n + 1).copied().collect();
    while out.len() < n + 1 {
        let last = *out.last().unwrap_or(&states[0]);
        out.push(State::new(last.x + last.v * dt, last.y, last.phi, last.v));
    }
    out
}

fn broadcasts(world: &[State], memory: &PlannerMemory, n: usize, dt: f64) -> Vec<Broadcast> {
    world
        .iter()
        .enumerate()
        .map(|(j, z)| Broadcast {
            sender: j,
            states: match &memory.plans[j] {
                Some(p) => shift_plan(&p.states, n, dt),
                None => constant_velocity(z, n, dt),
            },
        })
        .collect()
}

/// Reference slice `t..=t+N` for vehicle `k`.
fn reference_slice(
    reference: &ReferenceTrajectory,
    config: &ScenarioConfig,
    k: usize,
    t: usize,
    z0: &State,
    mode: Mode,
) -> Vec<State> {
    let n = config.horizon.prediction;
    let dt = config.horizon.dt;
    (0..=n)
        .map(|s| {
            let r = reference.at(k, t + s);
            if mode == Mode::Sem {
                State::new(z0.x + config.formation.speed * dt * s as f64, r.y, r.phi, r.v)
            } else {
                r
            }
        })
        .collect()
}

/// Neighbor predictions as vehicle `k` sees them.
fn neighbor_predictions(
    k: usize,
    config: &ScenarioConfig,
    ctx: &UncertaintyContext,
    sent: &[Broadcast],
    mode: Mode,
) -> Vec<NeighborPrediction> {
    let n = config.horizon.prediction;
    let dt = config.horizon.dt;
    (0..config.vehicles.len())
        .filter(|&j| j != k)
        .filter_map(|j| {
            let states = if mode != Mode::Sem && ctx.connectivity.get(k, j) {
                sent[j].states.clone()
            } else {
                let z = match mode {
                    Mode::Sem => ctx.observations[k][j].map(|o| o.state),
                    _ => ctx.fused[k][j].map(|f| f.state),
                }?;
                constant_velocity(&z, n, dt)
            };
            let p = &config.vehicles[j].params;
            Some(NeighborPrediction {
                id: j,
                states,
                length: p.length,
                width: p.width,
                margin: ctx.margins[k][j],
            })
        })
        .collect()
}

fn lateral_bounds(config: &ScenarioConfig, k: usize, z: &State) -> (f64, f64) {
    let road = &config.road;
    let (lo, hi) = road.drivable_interval(road.lane_at(z.y));
    let hw = 0.5 * config.vehicles[k].params.width;
    (lo + hw, hi - hw)
}

/// `ẑ₂^prev − Δz̃`: keeps the previously planned increment from the realized state.
fn regularizer_target(prev: Option<&PlanSolution>, mismatch: &[f64; 4]) -> Option<State> {
    let z = prev?.states.get(2)?.to_array();
    Some(State::from_array([
        z[0] - mismatch[0],
        z[1] - mismatch[1],
        z[2] - mismatch[2],
        z[3] - mismatch[3],
    ]))
}

/// Plans every vehicle for step `ctx.step` from the true current states.
pub fn plan_step(
    world: &[State],
    ctx: &UncertaintyContext,
    config: &ScenarioConfig,
    reference: &ReferenceTrajectory,
    memory: &PlannerMemory,
    settings: &PlannerSettings,
) -> PlatoonPlanStep {
    let mode = config.mode;
    let n = config.horizon.prediction;
    let dt = config.horizon.dt;
    let t = ctx.step;
    let sent = broadcasts(world, memory, n, dt);

    let count = world.len();
    let neighbors: Vec<Vec<NeighborPrediction>> = (0..count)
        .map(|k| neighbor_predictions(k, config, ctx, &sent, mode))
        .collect();
    let solve = |k: usize| -> PlanSolution {
        let z0 = world[k];
        let refs = reference_slice(reference, config, k, t, &z0, mode);
        let prev = memory.plans[k].as_ref();
        let data = SubproblemData {
            params: &config.vehicles[k].params,
            weights: &config.weights,
            dt,
            z0,
            u_prev: memory.applied[k],
            reference: &refs,
            neighbors: &neighbors[k],
            alpha: ctx.alpha,
            regularizer_target: regularizer_target(prev, &ctx.mismatch[k]),
            lateral_bounds: lateral_bounds(config, k, &z0),
            interaction_radius: settings.interaction_radius,
        };
        let warm = prev.map(PlanWarmStart::from_previous).unwrap_or_default();
        solve_rcmpc(&data, &warm, &settings.rcmpc)
    };
    let plans: Vec<PlanSolution> = if settings.parallel {
        (0..count).into_par_iter().map(solve).collect()
    } else {
        (0..count).map(solve).collect()
    };
    let applied = plans
        .iter()
        .zip(&memory.applied)
        .map(|(p, u)| p.inputs.first().copied().unwrap_or(*u))
        .collect();
    let delivered = match mode {
        Mode::Sem => ConnectivityMatrix((0..count).map(|k| (0..count).map(|l| l == k).collect()).collect()),
        _ => ctx.connectivity.clone(),
    };
    PlatoonPlanStep {
        step: t,
        plans,
        applied,
        broadcasts: sent,
        delivered,
        neighbors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_reference, preset};
    use crate::uncertainty::{build_context, RngStreams};

    fn first_step(name: &str, mode: Mode) -> PlatoonPlanStep {
        let mut c = preset(name).unwrap();
        c.mode = mode;
        let r = generate_reference(&c).unwrap();
        let world = c.initial_states();
        let ctx = build_context(&world, &c.uncertainty, &c.d_max(), &RngStreams::new(c.seed), 0, mode);
        plan_step(&world, &ctx, &c, &r, &PlannerMemory::new(world.len()), &PlannerSettings::default())
    }

    #[test]
    fn applied_input_is_first_planned_input() {
        let s = first_step("lane3", Mode::Muacp);
        assert_eq!(s.applied.len(), 3);
        for (p, u) in s.plans.iter().zip(&s.applied) {
            assert_eq!(p.inputs[0], *u);
        }
    }

    #[test]
    fn shifted_plan_keeps_horizon_length() {
        let states: Vec<State> = (0..=4).map(|s| State::new(s as f64, 0.0, 0.0, 20.0)).collect();
        let out = shift_plan(&states, 4, 0.05);
        assert_eq!(out.len(), 5);
        assert_eq!(out[0].x, 1.0);
        assert!((out[4].x - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sem_ignores_broadcasts() {
        let s = first_step("lane3", Mode::Sem);
        for k in 0..3 {
            for l in 0..3 {
                assert_eq!(s.delivered.get(k, l), k == l);
            }
        }
    }

    #[test]
    fn serial_and_parallel_plans_agree() {
        let mut c = preset("lane4").unwrap();
        c.mode = Mode::Muacp;
        let r = generate_reference(&c).unwrap();
        let world = c.initial_states();
        let ctx = build_context(&world, &c.uncertainty, &c.d_max(), &RngStreams::new(3), 0, c.mode);
        let mem = PlannerMemory::new(world.len());
        let par = plan_step(&world, &ctx, &c, &r, &mem, &PlannerSettings::default());
        let ser = plan_step(
            &world,
            &ctx,
            &c,
            &r,
            &mem,
            &PlannerSettings {
                parallel: false,
                ..Default::default()
            },
        );
        assert_eq!(par, ser);
    }
}
