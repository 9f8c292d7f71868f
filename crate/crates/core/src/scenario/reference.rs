//! Leader-generated reference trajectories.
//!
//! The leader follows its lane at the formation speed. Every vehicle's
//! reference is the leader's shifted back by its slot, with a quintic
//! lateral transition from its lane to its target lane.

use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, ScenarioError};
use crate::dynamics::VehicleState;

type State = VehicleState<f64>;

/// `states[k][t]` is vehicle `k`'s reference at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub states: Vec<Vec<State>>,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reference of vehicle `k` at step `t`, clamped to the last sample.
    pub fn at(&self, k: usize, t: usize) -> State {
        let s = &self.states[k];
        s[t.min(s.len() - 1)]
    }
}

/// Quintic smoothstep `10τ³ − 15τ⁴ + 6τ⁵` and its derivative.
pub fn smoothstep(tau: f64) -> (f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    let h = t3 * (10.0 - 15.0 * t + 6.0 * t2);
    let dh = if (0.0..=1.0).contains(&tau) {
        30.0 * t2 * (1.0 - t) * (1.0 - t)
    } else {
        0.0
    };
    (h, dh)
}

/// References for `steps + prediction + 1` samples, enough for the last MPC solve.
pub fn generate_reference(config: &ScenarioConfig) -> Result<ReferenceTrajectory, ScenarioError> {
    let road = &config.road;
    let f = &config.formation;
    let dt = config.horizon.dt;
    let samples = config.horizon.steps + config.horizon.prediction + 1;
    let lv = config
        .vehicles
        .iter()
        .position(|v| v.role == super::Role::Lv)
        .ok_or_else(|| ScenarioError::Reference("no LV".into()))?;
    let x0 = config.vehicles[lv].initial.map_or(0.0, |z| z.x);
    let gap = config.gap();
    let mut states = Vec::with_capacity(config.vehicles.len());
    for (k, v) in config.vehicles.iter().enumerate() {
        if v.lane >= road.lanes || v.target_lane >= road.lanes {
            return Err(ScenarioError::Reference(format!(
                "vehicle {k}: lane {} -> {} outside a {}-lane road",
                v.lane, v.target_lane, road.lanes
            )));
        }
        let (lo, hi) = road.drivable_interval(v.lane);
        let (y0, y1) = (road.lane_center(v.lane), road.lane_center(v.target_lane));
        if y1 < lo || y1 > hi {
            return Err(ScenarioError::Reference(format!(
                "vehicle {k}: target lane {} not reachable from lane {}",
                v.target_lane, v.lane
            )));
        }
        let lanes_crossed = (v.target_lane as f64 - v.lane as f64).abs();
        let start = f.lane_change_start + f.stagger * v.slot as f64;
        let duration = f.lane_change_duration * lanes_crossed.max(1.0);
        let offset = x0 - v.slot as f64 * gap;
        let mut path = Vec::with_capacity(samples);
        for t in 0..samples {
            let time = t as f64 * dt;
            let (h, dh) = smoothstep((time - start) / duration);
            let y = y0 + (y1 - y0) * h;
            let vy = (y1 - y0) * dh / duration;
            let phi = if f.speed > 0.0 { (vy / f.speed).atan() } else { 0.0 };
            let z = State::new(offset + f.speed * time, y, phi, f.speed);
            let p = &v.params;
            let arr = z.to_array();
            if (0..4).any(|i| arr[i] < p.z_min[i] || arr[i] > p.z_max[i]) {
                return Err(ScenarioError::Reference(format!(
                    "vehicle {k}: reference leaves the state bounds at step {t}"
                )));
            }
            path.push(z);
        }
        states.push(path);
    }
    Ok(ReferenceTrajectory { dt, states })
}
