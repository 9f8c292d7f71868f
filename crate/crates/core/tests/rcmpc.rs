mod common;

use common::{corners, quad_distance};
use muacp::rcmpc::subproblem::{NeighborPrediction, SubproblemData};
use muacp::rcmpc::{PlanWarmStart, RcmpcSettings};
use muacp::scenario::{VehicleParams, Weights};
use muacp::{solve_rcmpc, Control, PlanSolution, PlanStatus, State};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const DT: f64 = 0.05;

fn reference(x0: f64, y: f64, v: f64, n: usize) -> Vec<State> {
    (0..=n).map(|s| State::new(x0 + v * DT * s as f64, y, 0.0, v)).collect()
}

fn data<'a>(
    params: &'a VehicleParams,
    weights: &'a Weights,
    reference: &'a [State],
    neighbors: &'a [NeighborPrediction],
    z0: State,
) -> SubproblemData<'a> {
    SubproblemData {
        params,
        weights,
        dt: DT,
        z0,
        u_prev: Control::zero(),
        reference,
        neighbors,
        alpha: 0.0,
        regularizer_target: None,
        lateral_bounds: (0.9, 11.1 - 0.9),
        interaction_radius: 30.0,
    }
}

/// Smallest oracle distance minus margin over the plan.
fn worst_clearance(sol: &PlanSolution, p: &VehicleParams, nbs: &[NeighborPrediction]) -> f64 {
    let mut worst = f64::INFINITY;
    for (s, z) in sol.states.iter().enumerate().skip(1) {
        let ego = corners(z.x, z.y, z.phi, p.length, p.width);
        for nb in nbs {
            let w = nb.states[s];
            let d = quad_distance(&ego, &corners(w.x, w.y, w.phi, nb.length, nb.width));
            worst = worst.min(d - nb.margin);
        }
    }
    worst
}

fn moving(id: usize, z: State, n: usize) -> NeighborPrediction {
    NeighborPrediction {
        id,
        states: (0..=n).map(|s| State::new(z.x + z.v * DT * s as f64, z.y, z.phi, z.v)).collect(),
        length: 4.5,
        width: 1.8,
        margin: 0.5,
    }
}

#[test]
fn static_neighbor_across_the_reference() {
    let (p, w) = (VehicleParams::default(), Weights::default());
    let n = 30;
    let z0 = State::new(0.0, 5.55, 0.0, 10.0);
    let r = reference(0.0, 5.55, 10.0, n);
    let nbs = [moving(1, State::new(18.0, 5.55 + 1.3, 0.0, 0.0), n)];
    let settings = RcmpcSettings {
        max_outer: 25,
        ..Default::default()
    };
    let sol = solve_rcmpc(&data(&p, &w, &r, &nbs, z0), &PlanWarmStart::default(), &settings);
    assert_eq!(sol.status, PlanStatus::Optimal);
    assert!(worst_clearance(&sol, &p, &nbs) >= -1e-3);
}

#[test]
fn passing_a_slower_vehicle_keeps_the_margin() {
    let (p, w) = (VehicleParams::default(), Weights::default());
    let n = 20;
    let mut z = State::new(0.0, 1.85, 0.0, 15.0);
    let slow = State::new(9.0, 1.85 + 3.7, 0.0, 10.0);
    let mut warm = PlanWarmStart::default();
    let mut u_prev = Control::zero();
    let settings = RcmpcSettings::default();
    for t in 0..60 {
        let x0 = z.x;
        // Reference drifts from lane 0 into lane 1 as the ego passes.
        let r: Vec<State> = (0..=n)
            .map(|s| {
                let tau = ((t + s) as f64 * DT / 2.0).min(1.0);
                State::new(x0 + 15.0 * DT * s as f64, 1.85 + 3.7 * tau, 0.0, 15.0)
            })
            .collect();
        let here = State::new(slow.x + slow.v * DT * t as f64, slow.y, 0.0, slow.v);
        let nbs = [moving(1, here, n)];
        let mut d = data(&p, &w, &r, &nbs, z);
        d.u_prev = u_prev;
        let sol = solve_rcmpc(&d, &warm, &settings);
        assert!(matches!(sol.status, PlanStatus::Optimal | PlanStatus::MaxIterations), "step {t}");
        assert!(worst_clearance(&sol, &p, &nbs) >= -1e-3, "step {t}");
        z = sol.states[1];
        u_prev = sol.inputs[0];
        warm = PlanWarmStart::from_previous(&sol);
    }
    assert!(z.x > 9.0 + 10.0 * DT * 60.0 + 4.5);
}

#[test]
fn outer_residuals_mostly_shrink() {
    let (p, w) = (VehicleParams::default(), Weights::default());
    let mut rng = StdRng::seed_from_u64(21);
    let n = 20;
    let (mut monotone, mut total) = (0, 0);
    for _ in 0..50 {
        let z0 = State::new(0.0, rng.gen_range(1.0..3.0), rng.gen_range(-0.05..0.05), rng.gen_range(8.0..18.0));
        let r = reference(0.0, 1.85 + 3.7 * rng.gen_range(0..2) as f64, 15.0, n);
        let nbs = [moving(1, State::new(rng.gen_range(8.0..25.0), rng.gen_range(4.0..7.0), 0.0, rng.gen_range(5.0..15.0)), n)];
        let settings = RcmpcSettings {
            max_outer: 25,
            ..Default::default()
        };
        let sol = solve_rcmpc(&data(&p, &w, &r, &nbs, z0), &PlanWarmStart::default(), &settings);
        if sol.outer_residuals.len() < 3 {
            continue;
        }
        total += 1;
        if sol.outer_residuals.windows(2).skip(1).all(|w| w[1] <= w[0] * (1.0 + 1e-9)) {
            monotone += 1;
        }
    }
    assert!(total >= 10);
    assert!(monotone as f64 >= 0.8 * total as f64, "{monotone}/{total}");
}
