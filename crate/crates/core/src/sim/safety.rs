//! Pre-collision checking, backup control and collision detection.

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_exact, step_small_angle, ControlInput, VehicleState};
use crate::geometry::{penetration_depth, polytope_distance_oracle, vehicle_polytope, Polytope};
use crate::rcmpc::NeighborPrediction;
use crate::scenario::{Plant, Road, VehicleParams};

type State = VehicleState<f64>;
type Control = ControlInput<f64>;

pub fn plant_step(plant: Plant, z: &State, u: &Control, params: &VehicleParams, dt: f64) -> State {
    match plant {
        Plant::Exact => step_exact(z, u, &params.axles(), dt),
        Plant::SmallAngle => step_small_angle(z, u, &params.axles(), dt),
    }
}

/// Distance between two footprints, negative penetration depth when they overlap.
pub fn signed_distance(p1: &Polytope<f64>, p2: &Polytope<f64>) -> f64 {
    match polytope_distance_oracle(p1, p2) {
        Ok(d) if d > 0.0 => d,
        _ => -penetration_depth(p1, p2).max(0.0),
    }
}

fn footprint(z: &State, p: &VehicleParams) -> Polytope<f64> {
    vehicle_polytope(z, p.length, p.width)
}

/// Cheap test that two footprints cannot be within `extra` of each other.
fn far_apart(a: &State, pa: &VehicleParams, b: &State, pb: &VehicleParams, extra: f64) -> bool {
    let ra = 0.5 * pa.length.hypot(pa.width);
    let rb = 0.5 * pb.length.hypot(pb.width);
    (a.x - b.x).hypot(a.y - b.y) > ra + rb + extra
}

/// One vehicle's view for the check: its own plan against the neighbor
/// predictions it planned with.
#[derive(Debug, Clone)]
pub struct CheckInput<'a> {
    pub ego: State,
    /// Planned input sequence; the last input is held past its end.
    pub plan: &'a [Control],
    pub params: &'a VehicleParams,
    pub neighbors: &'a [NeighborPrediction],
    /// Extra clearance demanded from each neighbor, same order as `neighbors`.
    pub inflation: &'a [f64],
    pub dt: f64,
    pub plant: Plant,
    pub rain: f64,
    pub lookahead: usize,
}

/// True if the rolled-out ego footprint, inflated by the worst-case rain slip,
/// comes within the required clearance of a predicted neighbor. Neighbors
/// currently wholly behind the ego are left to their own check.
pub fn pre_collision_check(input: &CheckInput) -> bool {
    let p = input.params;
    let ahead: Vec<bool> = input
        .neighbors
        .iter()
        .map(|nb| {
            nb.states
                .first()
                .is_some_and(|w| w.x + 0.5 * (nb.length + p.length) > input.ego.x)
        })
        .collect();
    let mut z = input.ego;
    let mut slip = 0.0;
    for s in 1..=input.lookahead {
        let u = input
            .plan
            .get(s - 1)
            .or(input.plan.last())
            .copied()
            .unwrap_or_else(Control::zero);
        let next = plant_step(input.plant, &z, &u, p, input.dt);
        slip += 0.5 * input.rain * ((next.y - z.y).abs() + 0.5 * p.length * (next.phi - z.phi).abs());
        z = next;
        let ego = footprint(&z, p);
        for ((nb, infl), _) in input.neighbors.iter().zip(input.inflation).zip(&ahead).filter(|(_, &a)| a) {
            let Some(w) = nb.states.get(s).or(nb.states.last()) else {
                continue;
            };
            let extra = slip + infl;
            let reach = 0.5 * (p.length.hypot(p.width) + nb.length.hypot(nb.width)) + extra;
            if (z.x - w.x).hypot(z.y - w.y) > reach {
                continue;
            }
            let other = vehicle_polytope(w, nb.length, nb.width);
            if signed_distance(&ego, &other) - extra < 0.0 {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackupMode {
    Braking,
    CarFollowing,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackupDecision {
    pub input: Control,
    pub mode: BackupMode,
}

/// Nearest vehicle ahead of `z` in the same lane.
fn leader_in_lane<'a>(z: &State, others: &'a [State], road: &Road) -> Option<&'a State> {
    let lane = road.lane_at(z.y);
    others
        .iter()
        .filter(|o| road.lane_at(o.y) == lane && o.x > z.x)
        .min_by(|a, b| a.x.total_cmp(&b.x))
}

/// Braking (or gap keeping behind a same-lane leader) while steering back to
/// the current lane center, within input and rate limits.
/// `others` holds the other vehicles as the ego perceives them.
pub fn backup_policy(
    z: &State,
    p: &VehicleParams,
    others: &[State],
    road: &Road,
    d_min: f64,
    u_prev: &Control,
    dt: f64,
) -> BackupDecision {
    let z = *z;
    if z.v <= 1e-3 {
        return BackupDecision {
            input: Control::zero(),
            mode: BackupMode::Stopped,
        };
    }
    let (a_des, mode) = match leader_in_lane(&z, others, road) {
        Some(l) => {
            let desired = d_min + p.length;
            let gap_error = l.x - z.x - desired;
            let mut a = 0.5 * gap_error + (l.v - z.v);
            if gap_error < 0.0 {
                a = a.min(0.0);
            }
            (a, BackupMode::CarFollowing)
        }
        None => (p.u_min[0], BackupMode::Braking),
    };
    let rate_clip = |des: f64, prev: f64, c: usize| {
        des.clamp(prev + p.du_min[c], prev + p.du_max[c]).clamp(p.u_min[c], p.u_max[c])
    };
    let mut a = rate_clip(a_des, u_prev.a, 0);
    if z.v + a * dt < 0.0 {
        a = -z.v / dt;
    }
    let center = road.lane_center(road.lane_at(z.y));
    let look = (z.v * 1.0).max(5.0);
    let psi = (center - z.y).atan2(look);
    let wheelbase = p.axles().wheelbase();
    let delta_des = (2.0 * wheelbase * (psi - z.phi).sin() / look).atan();
    let delta = rate_clip(delta_des, u_prev.delta, 1);
    BackupDecision {
        input: Control::new(a, delta),
        mode,
    }
}

/// Pairs farther apart than this are not measured exactly.
pub const FAR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub pair: (usize, usize),
    pub step: usize,
    pub depth: f64,
}

/// Overlapping footprints (exact distance zero) at `step`, and the smallest
/// pairwise signed distance, capped at 5 m.
pub fn detect_collisions(
    states: &[State],
    params: &[VehicleParams],
    step: usize,
) -> (Vec<CollisionEvent>, f64) {
    let mut events = Vec::new();
    let mut min_distance = FAR;
    for k in 0..states.len() {
        for j in k + 1..states.len() {
            if far_apart(&states[k], &params[k], &states[j], &params[j], FAR) {
                min_distance = min_distance.min(FAR);
                continue;
            }
            let (a, b) = (footprint(&states[k], &params[k]), footprint(&states[j], &params[j]));
            let d = polytope_distance_oracle(&a, &b).unwrap_or(0.0);
            if d == 0.0 {
                let depth = penetration_depth(&a, &b).max(0.0);
                events.push(CollisionEvent {
                    pair: (k, j),
                    step,
                    depth,
                });
                min_distance = min_distance.min(-depth);
            } else {
                min_distance = min_distance.min(d);
            }
        }
    }
    (events, min_distance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn road() -> Road {
        Road {
            lanes: 3,
            lane_width: 3.7,
            directions: vec![crate::scenario::LaneDirection::Forward; 3],
            solid_lines: vec![false; 2],
        }
    }

    #[test]
    fn braking_is_rate_limited() {
        let p = VehicleParams::default();
        let world = [State::new(0.0, 1.85, 0.0, 15.0)];
        let d = backup_policy(&world[0], &p, &world[1..], &road(), 0.5, &Control::zero(), 0.05);
        assert_eq!(d.mode, BackupMode::Braking);
        assert!((d.input.a + 0.3).abs() < 1e-12);
        let d = backup_policy(&world[0], &p, &world[1..], &road(), 0.5, &Control::new(-3.9, 0.0), 0.05);
        assert_eq!(d.input.a, -4.0);
    }

    #[test]
    fn stopped_vehicle_gets_zero_input() {
        let p = VehicleParams::default();
        let world = [State::new(0.0, 1.0, 0.05, 0.0)];
        let d = backup_policy(&world[0], &p, &world[1..], &road(), 0.5, &Control::new(-4.0, 0.01), 0.05);
        assert_eq!(d.mode, BackupMode::Stopped);
        assert_eq!(d.input, Control::zero());
    }

    #[test]
    fn leader_ahead_switches_to_car_following() {
        let p = VehicleParams::default();
        let world = [State::new(0.0, 1.85, 0.0, 15.0), State::new(10.0, 1.85, 0.0, 15.0)];
        let d = backup_policy(&world[0], &p, &world[1..], &road(), 0.5, &Control::zero(), 0.05);
        assert_eq!(d.mode, BackupMode::CarFollowing);
    }

    #[test]
    fn steers_back_toward_lane_center() {
        let p = VehicleParams::default();
        let world = [State::new(0.0, 2.5, 0.0, 15.0)];
        let d = backup_policy(&world[0], &p, &world[1..], &road(), 0.5, &Control::zero(), 0.05);
        assert!(d.input.delta < 0.0);
        assert!(d.input.delta >= -0.01);
    }

    fn cv(z: State, n: usize) -> NeighborPrediction {
        NeighborPrediction {
            id: 1,
            states: crate::planner::constant_velocity(&z, n, 0.05),
            length: 4.5,
            width: 1.8,
            margin: 0.5,
        }
    }

    fn check(ego: State, nb: &[NeighborPrediction], infl: f64) -> bool {
        let p = VehicleParams::default();
        let plan = vec![Control::zero(); 20];
        pre_collision_check(&CheckInput {
            ego,
            plan: &plan,
            params: &p,
            neighbors: nb,
            inflation: &vec![infl; nb.len()],
            dt: 0.05,
            plant: Plant::Exact,
            rain: 0.0,
            lookahead: 10,
        })
    }

    #[test]
    fn empty_road_never_flags() {
        let ego = State::new(0.0, 1.85, 0.0, 15.0);
        assert!(!check(ego, &[], 1.0));
        assert!(!check(ego, &[cv(State::new(0.0, 5.55, 0.0, 15.0), 20)], 0.0));
    }

    #[test]
    fn slower_vehicle_ahead_is_flagged_within_the_lookahead() {
        let ego = State::new(0.0, 1.85, 0.0, 15.0);
        // Closing at 10 m/s from a 1 m gap: contact after 0.1 s.
        let nb = [cv(State::new(5.5, 1.85, 0.0, 5.0), 20)];
        assert!(check(ego, &nb, 0.0));
        // Same gap at equal speed only trips once the inflation exceeds it.
        let nb = [cv(State::new(5.5, 1.85, 0.0, 15.0), 20)];
        assert!(!check(ego, &nb, 0.9));
        assert!(check(ego, &nb, 1.1));
    }

    #[test]
    fn vehicles_behind_are_not_the_egos_to_check() {
        let ego = State::new(0.0, 1.85, 0.0, 5.0);
        let nb = [cv(State::new(-5.0, 1.85, 0.0, 15.0), 20)];
        assert!(!check(ego, &nb, 0.0));
    }

    #[test]
    fn collision_is_zero_oracle_distance() {
        let p = VehicleParams::default();
        let touching = [State::new(0.0, 0.0, 0.0, 0.0), State::new(4.0, 0.0, 0.0, 0.0)];
        let (ev, d) = detect_collisions(&touching, &[p.clone(), p.clone()], 3);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].pair, (0, 1));
        assert!((ev[0].depth - 0.5).abs() < 1e-12);
        assert!((d + 0.5).abs() < 1e-12);
        let apart = [State::new(0.0, 0.0, 0.0, 0.0), State::new(5.0, 0.0, 0.0, 0.0)];
        let (ev, d) = detect_collisions(&apart, &[p.clone(), p.clone()], 3);
        assert!(ev.is_empty());
        assert!((d - 0.5).abs() < 1e-12);
    }
}
