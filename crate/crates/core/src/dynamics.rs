//! Kinematic bicycle models.
//!
//! `step_exact` is the plant used by the simulator. `step_small_angle` is the
//! planner's internal model, and `linearize` produces the affine per-step
//! models that make each MPC subproblem a QP.
//!
//! The small-angle heading update uses `v·δ/(l_f + l_r)`, the small-angle
//! limit of the exact update (`cos β ≈ 1`, `tan δ ≈ δ`).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Pose and speed `[x, y, φ, v]` of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub x: T,
    pub y: T,
    pub phi: T,
    pub v: T,
}

impl<T: Scalar> VehicleState<T> {
    pub fn new(x: T, y: T, phi: T, v: T) -> Self {
        Self { x, y, phi, v }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.x, self.y, self.phi, self.v]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// Componentwise difference `self - other`.
    pub fn diff(&self, other: &Self) -> [T; 4] {
        let (a, b) = (self.to_array(), other.to_array());
        [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
    }
}

/// Acceleration and steering command `[a, δ]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub a: T,
    pub delta: T,
}

impl<T: Scalar> ControlInput<T> {
    pub fn new(a: T, delta: T) -> Self {
        Self { a, delta }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn to_array(self) -> [T; 2] {
        [self.a, self.delta]
    }

    pub fn from_array(a: [T; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

/// Distances from the center of gravity to the front and rear axles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axles<T> {
    pub front: T,
    pub rear: T,
}

impl<T: Scalar> Axles<T> {
    pub fn new(front: T, rear: T) -> Self {
        Self { front, rear }
    }

    #[inline]
    pub fn wheelbase(&self) -> T {
        self.front + self.rear
    }

    /// `l_r / (l_f + l_r)`
    #[inline]
    pub fn rear_ratio(&self) -> T {
        self.rear / self.wheelbase()
    }
}

/// Side slip angle `β = atan((l_r / (l_f + l_r)) · tan δ)`.
pub fn side_slip<T: Scalar>(delta: T, axles: &Axles<T>) -> T {
    (axles.rear_ratio() * delta.tan()).atan()
}

/// One Euler step of the nonlinear kinematic bicycle model.
pub fn step_exact<T: Scalar>(
    z: &VehicleState<T>,
    u: &ControlInput<T>,
    axles: &Axles<T>,
    dt: T,
) -> VehicleState<T> {
    let beta = side_slip(u.delta, axles);
    let course = z.phi + beta;
    VehicleState {
        x: z.x + z.v * course.cos() * dt,
        y: z.y + z.v * course.sin() * dt,
        phi: z.phi + z.v * beta.cos() * u.delta.tan() / axles.wheelbase() * dt,
        v: z.v + u.a * dt,
    }
}

/// One step of the small-angle model used inside the planner.
pub fn step_small_angle<T: Scalar>(
    z: &VehicleState<T>,
    u: &ControlInput<T>,
    axles: &Axles<T>,
    dt: T,
) -> VehicleState<T> {
    let beta = axles.rear_ratio() * u.delta;
    VehicleState {
        x: z.x + z.v * dt,
        y: z.y + z.v * (z.phi + beta) * dt,
        phi: z.phi + z.v * u.delta / axles.wheelbase() * dt,
        v: z.v + u.a * dt,
    }
}

/// Rolls the small-angle model forward from `z0` under `inputs`.
/// Returns `inputs.len() + 1` states, starting with `z0`.
pub fn rollout_small_angle<T: Scalar>(
    z0: &VehicleState<T>,
    inputs: &[ControlInput<T>],
    axles: &Axles<T>,
    dt: T,
) -> Vec<VehicleState<T>> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*z0);
    for u in inputs {
        let next = step_small_angle(out.last().unwrap(), u, axles, dt);
        out.push(next);
    }
    out
}

/// Affine model `z_{s+1} ≈ A_s z_s + B_s u_s + c_s` for every step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics<T> {
    pub a: Vec<[[T; 4]; 4]>,
    pub b: Vec<[[T; 2]; 4]>,
    pub c: Vec<[T; 4]>,
}

impl<T: Scalar> LinearizedDynamics<T> {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Evaluates the affine model of step `s`.
    pub fn predict(&self, s: usize, z: &VehicleState<T>, u: &ControlInput<T>) -> VehicleState<T> {
        let (zv, uv) = (z.to_array(), u.to_array());
        let mut out = self.c[s];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..4 {
                *o += self.a[s][i][j] * zv[j];
            }
            for j in 0..2 {
                *o += self.b[s][i][j] * uv[j];
            }
        }
        VehicleState::from_array(out)
    }
}

/// Jacobians of `step_small_angle` with respect to state and input.
pub fn small_angle_jacobians<T: Scalar>(
    z: &VehicleState<T>,
    u: &ControlInput<T>,
    axles: &Axles<T>,
    dt: T,
) -> ([[T; 4]; 4], [[T; 2]; 4]) {
    let (o, l) = (T::zero(), T::one());
    let k = axles.rear_ratio();
    let wb = axles.wheelbase();
    let a = [
        [l, o, o, dt],
        [o, l, z.v * dt, (z.phi + k * u.delta) * dt],
        [o, o, l, u.delta / wb * dt],
        [o, o, o, l],
    ];
    let b = [
        [o, o],
        [o, z.v * k * dt],
        [o, z.v / wb * dt],
        [dt, o],
    ];
    (a, b)
}

/// First-order expansion of the small-angle model around `states[s], inputs[s]`
/// for every input step. `states` must hold at least `inputs.len()` entries.
pub fn linearize<T: Scalar>(
    states: &[VehicleState<T>],
    inputs: &[ControlInput<T>],
    axles: &Axles<T>,
    dt: T,
) -> LinearizedDynamics<T> {
    assert!(
        states.len() >= inputs.len(),
        "linearization needs a state for every input"
    );
    let n = inputs.len();
    let mut out = LinearizedDynamics {
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
    };
    for (z, u) in states.iter().zip(inputs) {
        let (a, b) = small_angle_jacobians(z, u, axles, dt);
        let f = step_small_angle(z, u, axles, dt).to_array();
        let (zv, uv) = (z.to_array(), u.to_array());
        let mut c = f;
        for i in 0..4 {
            for j in 0..4 {
                c[i] -= a[i][j] * zv[j];
            }
            for j in 0..2 {
                c[i] -= b[i][j] * uv[j];
            }
        }
        out.a.push(a);
        out.b.push(b);
        out.c.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axles() -> Axles<f64> {
        Axles::new(1.35, 1.35)
    }

    #[test]
    fn zero_steering_has_zero_slip() {
        assert_eq!(side_slip(0.0, &axles()), 0.0);
    }

    #[test]
    fn slip_is_odd_in_steering() {
        for d in [0.01, 0.1, 0.3] {
            assert!((side_slip(-d, &axles()) + side_slip(d, &axles())).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_axles_halve_tangent() {
        // Oracle: direct evaluation of atan(tan(0.3) / 2).
        let expected = (0.3f64.tan() / 2.0).atan();
        assert!((side_slip(0.3, &axles()) - expected).abs() < 1e-15);
        // Independent series value of the same closed form, to 1e-12.
        assert!((expected - 0.153_452_194_891_849_4).abs() < 1e-9);
    }

    #[test]
    fn straight_line_motion() {
        let z = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let next = step_exact(&z, &ControlInput::zero(), &axles(), 0.05);
        assert!((next.x - 0.5).abs() < 1e-15);
        assert_eq!((next.y, next.phi, next.v), (0.0, 0.0, 10.0));
    }

    #[test]
    fn velocity_update_is_exact_in_both_models() {
        let z = VehicleState::new(1.0, 2.0, 0.05, 15.0);
        let u = ControlInput::new(4.0, 0.1);
        let e = step_exact(&z, &u, &axles(), 0.05);
        let s = step_small_angle(&z, &u, &axles(), 0.05);
        assert!((e.v - 15.2).abs() < 1e-12);
        assert_eq!(e.v, s.v);
    }

    #[test]
    fn models_agree_at_zero_angles() {
        let z = VehicleState::new(3.0, -1.0, 0.0, 12.0);
        let u = ControlInput::new(-2.0, 0.0);
        let e = step_exact(&z, &u, &axles(), 0.05);
        let s = step_small_angle(&z, &u, &axles(), 0.05);
        for (a, b) in e.to_array().iter().zip(s.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standing_vehicle_only_changes_speed() {
        let z = VehicleState::new(3.0, -1.0, 0.2, 0.0);
        let u = ControlInput::new(1.0, 0.3);
        let s = step_small_angle(&z, &u, &axles(), 0.05);
        assert_eq!((s.x, s.y, s.phi), (3.0, -1.0, 0.2));
        assert!((s.v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn linearization_reproduces_nonlinear_step_at_expansion_point() {
        let z = VehicleState::new(3.0, 1.0, 0.07, 14.0);
        let u = ControlInput::new(0.5, -0.04);
        let lin = linearize(&[z], &[u], &axles(), 0.05);
        let p = lin.predict(0, &z, &u);
        let f = step_small_angle(&z, &u, &axles(), 0.05);
        for (a, b) in p.to_array().iter().zip(f.to_array()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn jacobian_structure_at_zero_angles() {
        let z = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let (a, b) = small_angle_jacobians(&z, &ControlInput::zero(), &axles(), 0.05);
        // upper triangular
        for i in 0..4 {
            for j in 0..i {
                assert_eq!(a[i][j], 0.0);
            }
            assert_eq!(a[i][i], 1.0);
        }
        assert_eq!(a[0][3], 0.05);
        assert!((a[1][2] - 0.5).abs() < 1e-15);
        assert_eq!(b[3], [0.05, 0.0]);
        assert_eq!(b[0], [0.0, 0.0]);
    }

    #[test]
    fn single_precision_step() {
        let z = VehicleState::<f32>::new(0.0, 0.0, 0.0, 10.0);
        let n = step_small_angle(&z, &ControlInput::new(1.0, 0.0), &Axles::new(1.35, 1.35), 0.05);
        assert!((n.x - 0.5).abs() < 1e-6);
    }
}
