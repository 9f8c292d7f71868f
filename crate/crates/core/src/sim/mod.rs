//! Closed-loop episodes: plan, check, apply, advance the plant.

mod log;
mod metrics;
mod safety;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_small_angle, ControlInput, VehicleState};
use crate::planner::{plan_step, PlannerMemory, PlannerSettings};
use crate::rcmpc::PlanStatus;
use crate::scenario::{generate_reference, ScenarioConfig, ScenarioError};
use crate::uncertainty::{
    apply_rain_slip, build_context, motion_mismatch, rain_slip_factor, ConnectivityMatrix, Mode,
    RngStreams,
};

pub use log::{read_log, write_log, LogError, LogLine};
pub use metrics::{compute_metrics, navigation_time, MetricTable, ModeMetrics};
pub use safety::{
    backup_policy, detect_collisions, plant_step, pre_collision_check, signed_distance,
    BackupDecision, BackupMode, CheckInput, CollisionEvent,
};

type State = VehicleState<f64>;
type Control = ControlInput<f64>;

/// Lateral error below which a vehicle counts as in its target lane.
pub const LANE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub planner: PlannerSettings,
    /// Steps rolled forward by the pre-collision check.
    pub check_steps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            planner: PlannerSettings::default(),
            check_steps: 10,
        }
    }
}

/// Everything recorded at one step besides the state and input traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub rain: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub connectivity: ConnectivityMatrix,
    pub margins: Vec<Vec<f64>>,
    pub mismatch: Vec<[f64; 4]>,
    pub status: Vec<PlanStatus>,
    pub qp_iterations: Vec<usize>,
    pub outer_iterations: Vec<usize>,
    pub objective: Vec<f64>,
    pub backup: Vec<Option<BackupMode>>,
    /// Smallest pairwise signed distance after the step.
    pub min_distance: f64,
    pub collisions: Vec<CollisionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub mode: Mode,
    pub success: bool,
    pub collisions: Vec<CollisionEvent>,
    /// Seconds until every lane-changing vehicle stays within 0.2 m of its
    /// target lane center; `None` if that never happens.
    pub navigation_time: Option<f64>,
    pub mean_velocity: Vec<f64>,
    pub mean_heading: Vec<f64>,
    /// Vehicles whose means enter the episode averages.
    pub measured: Vec<usize>,
    pub backup_activations: usize,
    pub min_distance: f64,
    /// `states[t][k]` for `t = 0..=T`.
    pub states: Vec<Vec<State>>,
    /// `inputs[t][k]` for `t = 0..T`.
    pub inputs: Vec<Vec<Control>>,
    pub steps: Vec<StepRecord>,
}

impl EpisodeResult {
    pub fn mean_velocity_measured(&self) -> f64 {
        mean(self.measured.iter().map(|&k| self.mean_velocity[k]))
    }

    pub fn mean_heading_measured(&self) -> f64 {
        mean(self.measured.iter().map(|&k| self.mean_heading[k]))
    }

    /// `Σ_t |φ_{t+1} − φ_t|` summed over the measured vehicles.
    pub fn heading_variation(&self) -> f64 {
        self.measured
            .iter()
            .map(|&k| {
                self.states
                    .windows(2)
                    .map(|w| (w[1][k].phi - w[0][k].phi).abs())
                    .sum::<f64>()
            })
            .sum()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Runs one episode with the scenario's own seed and mode.
pub fn run_episode(config: &ScenarioConfig, settings: &SimSettings) -> Result<EpisodeResult, ScenarioError> {
    config.validate()?;
    let reference = generate_reference(config)?;
    let streams = RngStreams::new(config.seed);
    let params: Vec<_> = config.vehicles.iter().map(|v| v.params.clone()).collect();
    let d_max = config.d_max();
    let dt = config.horizon.dt;
    let n = config.vehicles.len();
    let mut world = config.initial_states();
    let mut memory = PlannerMemory::new(n);
    let mut mismatch = vec![[0.0; 4]; n];
    let mut states = vec![world.clone()];
    let mut inputs = Vec::with_capacity(config.horizon.steps);
    let mut steps = Vec::with_capacity(config.horizon.steps);
    let mut collisions = Vec::new();
    let mut backup_activations = 0;
    let mut min_distance = safety::FAR;

    for t in 0..config.horizon.steps {
        let mut ctx = build_context(&world, &config.uncertainty, &d_max, &streams, t, config.mode);
        ctx.mismatch = mismatch.clone();
        let plan = plan_step(&world, &ctx, config, &reference, &memory, &settings.planner);
        let failed = plan.failed();
        let d_min = config.uncertainty.d_min;
        let rain_seen = if config.mode == Mode::Muacp { ctx.rain } else { 0.0 };
        let mut applied = Vec::with_capacity(n);
        let mut backup = Vec::with_capacity(n);
        for k in 0..n {
            let neighbors = &plan.neighbors[k];
            let inflation: Vec<f64> = neighbors.iter().map(|nb| (nb.margin - d_min).max(0.0)).collect();
            let flagged = !failed[k]
                && pre_collision_check(&CheckInput {
                    ego: world[k],
                    plan: &plan.plans[k].inputs,
                    params: &params[k],
                    neighbors,
                    inflation: &inflation,
                    dt,
                    plant: config.plant,
                    rain: rain_seen,
                    lookahead: settings.check_steps,
                });
            if failed[k] || flagged {
                let others: Vec<State> = neighbors.iter().filter_map(|nb| nb.states.first().copied()).collect();
                let d = backup_policy(&world[k], &params[k], &others, &config.road, d_min, &memory.applied[k], dt);
                applied.push(d.input);
                backup.push(Some(d.mode));
                backup_activations += 1;
            } else {
                applied.push(plan.applied[k]);
                backup.push(None);
            }
        }
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            let nominal = plant_step(config.plant, &world[k], &applied[k], &params[k], dt);
            let factor = rain_slip_factor(ctx.rain, &streams, k, t);
            let realized = apply_rain_slip(&world[k], &nominal, factor);
            let commanded = step_small_angle(&world[k], &applied[k], &params[k].axles(), dt);
            mismatch[k] = motion_mismatch(&commanded, &realized);
            next.push(realized);
        }
        let (events, dmin) = detect_collisions(&next, &params, t + 1);
        min_distance = min_distance.min(dmin);
        collisions.extend(events.iter().copied());
        steps.push(StepRecord {
            step: t,
            rain: ctx.rain,
            sigma: ctx.sigma,
            alpha: ctx.alpha,
            connectivity: ctx.connectivity,
            margins: ctx.margins,
            mismatch: ctx.mismatch,
            status: plan.plans.iter().map(|p| p.status).collect(),
            qp_iterations: plan.plans.iter().map(|p| p.qp_iterations).collect(),
            outer_iterations: plan.plans.iter().map(|p| p.outer_iterations).collect(),
            objective: plan.plans.iter().map(|p| p.objective).collect(),
            backup: backup.clone(),
            min_distance: dmin,
            collisions: events,
        });
        for (k, p) in plan.plans.into_iter().enumerate() {
            memory.plans[k] = backup[k].is_none().then_some(p);
        }
        memory.applied = applied.clone();
        inputs.push(applied);
        world = next;
        states.push(world.clone());
    }

    let changing: Vec<usize> = (0..n).filter(|&k| config.vehicles[k].changes_lane()).collect();
    let measured = if changing.is_empty() { (0..n).collect() } else { changing.clone() };
    let targets: Vec<(usize, f64)> = changing
        .iter()
        .map(|&k| (k, config.road.lane_center(config.vehicles[k].target_lane)))
        .collect();
    let nav = navigation_time(&states, &targets, dt);
    let per_vehicle = |f: fn(&State) -> f64| -> Vec<f64> {
        (0..n)
            .map(|k| mean(states[1..].iter().map(|row| f(&row[k]))))
            .collect()
    };
    Ok(EpisodeResult {
        seed: config.seed,
        mode: config.mode,
        success: collisions.is_empty() && nav.is_some(),
        collisions,
        navigation_time: nav,
        mean_velocity: per_vehicle(|z| z.v),
        mean_heading: per_vehicle(|z| z.phi),
        measured,
        backup_activations,
        min_distance,
        states,
        inputs,
        steps,
    })
}

/// Runs `config` once per seed on `workers` threads; results follow seed order.
pub fn run_batch(
    config: &ScenarioConfig,
    seeds: &[u64],
    settings: &SimSettings,
    workers: usize,
) -> Result<Vec<EpisodeResult>, ScenarioError> {
    let run = |&seed: &u64| {
        let mut c = config.clone();
        c.seed = seed;
        run_episode(&c, settings)
    };
    if workers <= 1 {
        return seeds.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ScenarioError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| seeds.par_iter().map(run).collect())
}
