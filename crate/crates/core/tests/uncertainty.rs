use muacp::rcmpc::subproblem::{build_cost, Prediction, SubproblemData};
use muacp::scenario::{VehicleParams, Weights};
use muacp::uncertainty::{
    apply_rain_slip, build_context, fused_margin, max_score_fusion, rain_slip_factor, safety_margin,
    sample_connectivity, ConfidenceModel, Mode, Profile, RngStreams, UncertaintySettings,
};
use muacp::{Control, State};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ego_only_margin() {
    assert!((safety_margin(0.7, 1.0, 2.0).unwrap() - 1.6).abs() < 1e-12);
    assert_eq!(safety_margin(1.0, 0.5, 2.0).unwrap(), 0.5);
    assert_eq!(safety_margin(0.0, 0.5, 2.0).unwrap(), 2.5);
    assert!(safety_margin(1.2, 0.5, 2.0).is_err());
    assert!(safety_margin(0.5, -0.1, 2.0).is_err());
}

#[test]
fn margin_is_affine_and_decreasing() {
    for (d_min, d_max) in [(0.5, 2.0), (0.0, 1.0), (1.0, 3.5)] {
        let f = |r: f64| safety_margin(r, d_min, d_max).unwrap();
        for i in 0..100 {
            let (a, b) = (i as f64 / 100.0, (i + 1) as f64 / 100.0);
            assert!(f(b) < f(a));
            let mid = f((a + b) / 2.0);
            assert!((mid - (f(a) + f(b)) / 2.0).abs() < 1e-12);
            assert!(((f(a) - f(b)) / (b - a) - d_max).abs() < 1e-9);
        }
    }
}

#[test]
fn fusion_prefers_the_broadcast() {
    let z = State::new(10.0, 0.0, 0.0, 15.0);
    let seen = State::new(10.4, 0.3, 0.0, 15.0);
    let sources = [Some((seen, 0.7)), Some((z, 1.0)), Some((seen, 0.9))];
    let all = max_score_fusion(&sources, &[true, true, true]).unwrap();
    assert_eq!((all.source, all.confidence, all.state), (1, 1.0, z));
    let cut = max_score_fusion(&sources, &[true, false, true]).unwrap();
    assert_eq!((cut.source, cut.confidence), (2, 0.9));
    let own = max_score_fusion(&sources, &[true, false, false]).unwrap();
    assert_eq!((own.source, own.state), (0, seen));
    assert!((fused_margin(&own, 0.5, 2.0).unwrap() - 1.1).abs() < 1e-12);
    assert!(max_score_fusion(&[None, None], &[true, true]).is_none());
}

#[test]
fn ties_go_to_the_lowest_index() {
    let z = State::new(0.0, 0.0, 0.0, 0.0);
    let sources = [None, Some((z, 0.8)), Some((z, 0.8))];
    assert_eq!(max_score_fusion(&sources, &[true; 3]).unwrap().source, 1);
}

/// All supersets of `mask` within `k` bits.
fn supersets(mask: u32, k: usize) -> impl Iterator<Item = u32> {
    (0..1u32 << k).filter(move |s| s & mask == mask)
}

#[test]
fn fusion_is_monotone_in_connectivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 1..=5usize {
        for _ in 0..20 {
            let sources: Vec<Option<(State, f64)>> = (0..k)
                .map(|l| (l == 0 || rng.gen_bool(0.8)).then(|| (State::new(l as f64, 0.0, 0.0, 0.0), rng.gen_range(0.0..=1.0))))
                .collect();
            // The ego (index 0) always has its own observation and link.
            for mask in (0..1u32 << k).filter(|m| m & 1 == 1) {
                let conn = |m: u32| (0..k).map(|l| m >> l & 1 == 1).collect::<Vec<_>>();
                let small = max_score_fusion(&sources, &conn(mask)).unwrap();
                for sup in supersets(mask, k) {
                    let big = max_score_fusion(&sources, &conn(sup)).unwrap();
                    assert!(big.confidence >= small.confidence);
                    assert!(fused_margin(&big, 0.5, 2.0).unwrap() <= fused_margin(&small, 0.5, 2.0).unwrap());
                }
            }
        }
    }
}

#[test]
fn link_rate_within_binomial_bounds() {
    let streams = RngStreams::new(17);
    for sigma in [0.1, 0.5, 0.9] {
        let n = 10_000;
        let hits = (0..n).filter(|&t| sample_connectivity(2, sigma, &streams, t).get(0, 1)).count();
        let half = 2.576 * (sigma * (1.0 - sigma) / n as f64).sqrt();
        let rate = hits as f64 / n as f64;
        assert!((rate - sigma).abs() <= half, "sigma {sigma}: rate {rate}");
    }
}

#[test]
fn self_links_always_deliver() {
    let streams = RngStreams::new(2);
    for t in 0..50 {
        let c = sample_connectivity(4, 0.0, &streams, t);
        for k in 0..4 {
            for l in 0..4 {
                assert_eq!(c.get(k, l), k == l);
            }
        }
    }
}

#[test]
fn rain_factor_replays_the_stream() {
    let streams = RngStreams::new(99);
    for vehicle in 0..3 {
        for step in [0usize, 1, 7, 400] {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            rng.set_stream(vehicle as u64 * 8 + 2);
            rng.set_word_pos(step as u128 * 65536);
            let u: f64 = rng.gen();
            let want = 1.0 + (-0.4 + 0.8 * u);
            assert_eq!(rain_slip_factor(0.8, &streams, vehicle, step), want);
        }
    }
    assert_eq!(rain_slip_factor(0.0, &streams, 0, 3), 1.0);
}

#[test]
fn slip_scales_lateral_motion_only() {
    let prev = State::new(0.0, 1.0, 0.1, 15.0);
    let nominal = State::new(0.75, 1.2, 0.14, 15.1);
    let s = apply_rain_slip(&prev, &nominal, 1.5);
    assert_eq!((s.x, s.v), (0.75, 15.1));
    assert!((s.y - 1.3).abs() < 1e-12);
    assert!((s.phi - 0.16).abs() < 1e-12);
}

fn settings(rho: f64) -> UncertaintySettings {
    UncertaintySettings {
        deviation: [[-1.0, 1.0], [-1.0, 1.0], [-0.5, 0.5], [-1.0, 1.0]],
        confidence: ConfidenceModel::Fixed { rho },
        sigma: Profile::Constant(0.1),
        ..UncertaintySettings::default()
    }
}

#[test]
fn context_margins_by_mode() {
    let truth: Vec<State> = (0..4).map(|k| State::new(-10.0 * k as f64, 0.0, 0.0, 15.0)).collect();
    let streams = RngStreams::new(5);
    let s = settings(0.7);
    for step in 0..20 {
        for mode in Mode::ALL {
            let ctx = build_context(&truth, &s, &[2.0; 4], &streams, step, mode);
            for k in 0..4 {
                for j in (0..4).filter(|&j| j != k) {
                    let m = ctx.margins[k][j];
                    let f = ctx.fused[k][j].unwrap();
                    match mode {
                        Mode::Muacp => {
                            let want = if ctx.connectivity.get(k, j) { 0.5 } else { 0.5 + 0.3 * 2.0 };
                            assert!((m - want).abs() < 1e-12);
                        }
                        _ => assert_eq!(m, 0.5),
                    }
                    if mode == Mode::Sem {
                        assert_eq!(f.source, k);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_alpha_cost_equals_the_unregularized_one() {
    let params = VehicleParams::default();
    let weights = Weights::default();
    let n = 8;
    let dt = 0.05;
    let reference: Vec<State> = (0..=n).map(|s| State::new(15.0 * dt * s as f64, 3.7, 0.0, 15.0)).collect();
    let z0 = State::new(0.2, 0.1, 0.02, 14.5);
    let lin_inputs = vec![Control::new(0.1, 0.01); n];
    let lin_states = muacp::dynamics::rollout_small_angle(&z0, &lin_inputs, &params.axles(), dt);
    let data = |alpha: f64, target: Option<State>| SubproblemData {
        params: &params,
        weights: &weights,
        dt,
        z0,
        u_prev: Control::new(0.2, 0.0),
        reference: &reference,
        neighbors: &[],
        alpha,
        regularizer_target: target,
        lateral_bounds: (-1.0, 9.0),
        interaction_radius: 30.0,
    };
    let tcm = data(0.0, None);
    let muacp = data(0.0, Some(State::new(0.9, 0.3, 0.05, 14.0)));
    let pred = Prediction::build(&z0, &lin_states, &lin_inputs, &tcm);
    let (p0, q0) = build_cost(&tcm, &pred);
    let (p1, q1) = build_cost(&muacp, &pred);
    let diff = p0.as_slice().iter().zip(p1.as_slice()).chain(q0.iter().zip(&q1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-12);
    let (p2, _) = build_cost(&data(0.1, Some(State::new(0.9, 0.3, 0.05, 14.0))), &pred);
    assert!(p2.as_slice().iter().zip(p0.as_slice()).any(|(a, b)| (a - b).abs() > 1e-6));
}

proptest! {
    #[test]
    fn margin_stays_between_d_min_and_d_min_plus_d_max(rho in 0.0..=1.0f64, d_min in 0.0..3.0f64, d_max in 0.0..5.0f64) {
        let m = safety_margin(rho, d_min, d_max).unwrap();
        prop_assert!(m >= d_min && m <= d_min + d_max + 1e-12);
    }

    #[test]
    fn fused_confidence_is_at_least_the_egos(rhos in proptest::collection::vec(0.0..=1.0f64, 1..6), links in proptest::collection::vec(any::<bool>(), 6)) {
        let z = State::new(0.0, 0.0, 0.0, 0.0);
        let sources: Vec<_> = rhos.iter().map(|&r| Some((z, r))).collect();
        let mut conn: Vec<bool> = links[..rhos.len()].to_vec();
        conn[0] = true;
        let f = max_score_fusion(&sources, &conn).unwrap();
        prop_assert!(f.confidence >= rhos[0]);
        prop_assert!(conn[f.source]);
    }
}
