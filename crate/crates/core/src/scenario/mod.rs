//! Scenario files: vehicles, road, horizon, weights and uncertainty settings.

mod reference;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Axles, VehicleState};
use crate::uncertainty::{Mode, UncertaintySettings};

pub use reference::{generate_reference, smoothstep, ReferenceTrajectory};

type State = VehicleState<f64>;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("infeasible reference: {0}")]
    Reference(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub front_axle: f64,
    pub rear_axle: f64,
    pub z_min: [f64; 4],
    pub z_max: [f64; 4],
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    /// Per-step input change limits.
    pub du_min: [f64; 2],
    pub du_max: [f64; 2],
    pub d_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 1.8,
            front_axle: 1.35,
            rear_axle: 1.35,
            z_min: [-1.0e4, -100.0, -1.0, 0.0],
            z_max: [1.0e4, 100.0, 1.0, 30.0],
            u_min: [-4.0, -0.3],
            u_max: [4.0, 0.3],
            du_min: [-0.3, -0.01],
            du_max: [0.3, 0.01],
            d_max: 2.0,
        }
    }
}

impl VehicleParams {
    pub fn axles(&self) -> Axles<f64> {
        Axles::new(self.front_axle, self.rear_axle)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("length", self.length),
            ("width", self.width),
            ("front_axle", self.front_axle),
            ("rear_axle", self.rear_axle),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be > 0"));
            }
        }
        if (0..4).any(|i| !(self.z_min[i] < self.z_max[i])) {
            return invalid("z_min must be < z_max componentwise");
        }
        if (0..2).any(|i| !(self.u_min[i] < self.u_max[i])) {
            return invalid("u_min must be < u_max componentwise");
        }
        if (0..2).any(|i| !(self.du_min[i] < 0.0 && 0.0 < self.du_max[i])) {
            return invalid("du_min < 0 < du_max must hold componentwise");
        }
        if !(self.d_max >= 0.0) {
            return invalid("d_max must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Lv,
    Fv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub role: Role,
    pub lane: usize,
    pub target_lane: usize,
    /// Formation position behind the leader, in gaps.
    pub slot: usize,
    #[serde(default)]
    pub params: VehicleParams,
    /// Defaults to the formation position at the reference speed.
    #[serde(default)]
    pub initial: Option<State>,
}

impl VehicleSpec {
    pub fn changes_lane(&self) -> bool {
        self.lane != self.target_lane
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDirection {
    Forward,
    Backward,
}

/// Straight road along `x`; lane `i` spans `y ∈ [i w, (i + 1) w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Road {
    pub lanes: usize,
    pub lane_width: f64,
    pub directions: Vec<LaneDirection>,
    /// `solid_lines[i]` marks the boundary between lanes `i` and `i + 1`.
    pub solid_lines: Vec<bool>,
}

impl Road {
    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Lane whose span contains `y`, clamped to the road.
    pub fn lane_at(&self, y: f64) -> usize {
        let i = (y / self.lane_width).floor();
        i.clamp(0.0, (self.lanes - 1) as f64) as usize
    }

    /// Lateral span reachable from `lane` without entering opposite traffic
    /// or crossing a solid line.
    pub fn drivable_interval(&self, lane: usize) -> (f64, f64) {
        let open = |i: usize| self.directions[i] == self.directions[lane];
        let mut lo = lane;
        while lo > 0 && open(lo - 1) && !self.solid_lines[lo - 1] {
            lo -= 1;
        }
        let mut hi = lane;
        while hi + 1 < self.lanes && open(hi + 1) && !self.solid_lines[hi] {
            hi += 1;
        }
        (lo as f64 * self.lane_width, (hi + 1) as f64 * self.lane_width)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.lanes == 0 {
            return invalid("road needs at least one lane");
        }
        if !(self.lane_width > 0.0) {
            return invalid("lane_width must be > 0");
        }
        if self.directions.len() != self.lanes {
            return invalid("directions must list one entry per lane");
        }
        if self.solid_lines.len() + 1 != self.lanes {
            return invalid("solid_lines must have lanes - 1 entries");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    /// Episode length `T`.
    pub steps: usize,
    pub dt: f64,
    /// MPC prediction length `N`.
    pub prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub q_z: [f64; 4],
    pub q_u: [f64; 2],
    pub q_du: [f64; 2],
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q_z: [1.0, 100.0, 1.0, 0.1],
            q_u: [1.0, 1.0],
            q_du: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formation {
    /// Center spacing between consecutive slots; defaults to twice the leader length.
    #[serde(default)]
    pub gap: Option<f64>,
    pub speed: f64,
    /// Seconds before the first lane change starts.
    pub lane_change_start: f64,
    /// Seconds per lane crossed.
    pub lane_change_duration: f64,
    /// Extra delay per slot, seconds.
    pub stagger: f64,
}

impl Default for Formation {
    fn default() -> Self {
        Self {
            gap: None,
            speed: 15.0,
            lane_change_start: 0.25,
            lane_change_duration: 2.5,
            stagger: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Plant {
    #[default]
    Exact,
    SmallAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub vehicles: Vec<VehicleSpec>,
    pub road: Road,
    pub horizon: Horizon,
    pub weights: Weights,
    pub uncertainty: UncertaintySettings,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub formation: Formation,
    #[serde(default)]
    pub plant: Plant,
}

impl ScenarioConfig {
    pub fn leader(&self) -> usize {
        self.vehicles
            .iter()
            .position(|v| v.role == Role::Lv)
            .expect("validated scenario has a leader")
    }

    pub fn gap(&self) -> f64 {
        self.formation
            .gap
            .unwrap_or_else(|| 2.0 * self.vehicles[self.leader()].params.length)
    }

    /// Initial states, filling omitted ones from the formation.
    pub fn initial_states(&self) -> Vec<State> {
        let lv = self.leader();
        let x0 = self.vehicles[lv].initial.map_or(0.0, |z| z.x);
        let gap = self.gap();
        self.vehicles
            .iter()
            .map(|v| {
                v.initial.unwrap_or_else(|| {
                    State::new(
                        x0 - v.slot as f64 * gap,
                        self.road.lane_center(v.lane),
                        0.0,
                        self.formation.speed,
                    )
                })
            })
            .collect()
    }

    pub fn d_max(&self) -> Vec<f64> {
        self.vehicles.iter().map(|v| v.params.d_max).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon.steps < 1 {
            return invalid("horizon.steps must be >= 1");
        }
        if !(self.horizon.dt > 0.0 && self.horizon.dt.is_finite()) {
            return invalid("horizon.dt must be > 0");
        }
        if self.horizon.prediction < 1 {
            return invalid("horizon.prediction must be >= 1");
        }
        let w = &self.weights;
        if w.q_z.iter().chain(&w.q_u).chain(&w.q_du).any(|q| !(*q >= 0.0 && q.is_finite())) {
            return invalid("weights must be finite and >= 0");
        }
        self.road.validate()?;
        self.uncertainty.validate().map_err(ScenarioError::Validation)?;
        if self.vehicles.is_empty() {
            return invalid("at least one vehicle is required");
        }
        let leaders = self.vehicles.iter().filter(|v| v.role == Role::Lv).count();
        if leaders != 1 {
            return invalid(format!("exactly one LV is required, found {leaders}"));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            v.params.validate().map_err(|e| match e {
                ScenarioError::Validation(m) => ScenarioError::Validation(format!("vehicle {i}: {m}")),
                other => other,
            })?;
            if !(self.road.lane_width > v.params.width) {
                return invalid(format!("vehicle {i}: lane width must exceed vehicle width"));
            }
            if v.lane >= self.road.lanes || v.target_lane >= self.road.lanes {
                return invalid(format!("vehicle {i}: lane outside road"));
            }
            if let Some(z) = v.initial {
                if !z.is_finite() {
                    return invalid(format!("vehicle {i}: initial state must be finite"));
                }
            }
        }
        let f = &self.formation;
        if !(f.speed >= 0.0 && f.lane_change_start >= 0.0 && f.lane_change_duration > 0.0 && f.stagger >= 0.0) {
            return invalid("formation timings must be >= 0 and duration > 0");
        }
        let lv = &self.vehicles[self.leader()];
        if lv.slot != 0 {
            return invalid("the LV occupies slot 0");
        }
        for v in &self.vehicles {
            if !(v.params.z_min[3] <= f.speed && f.speed <= v.params.z_max[3]) {
                return invalid("formation speed outside vehicle speed bounds");
            }
        }
        let gap = self.gap();
        for lane in 0..self.road.lanes {
            let mut slots: Vec<(usize, &VehicleSpec)> = self
                .vehicles
                .iter()
                .filter(|v| v.target_lane == lane)
                .map(|v| (v.slot, v))
                .collect();
            slots.sort_by_key(|(s, _)| *s);
            for pair in slots.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                if a.0 == b.0 {
                    return invalid(format!("two vehicles share slot {} in lane {lane}", a.0));
                }
                let spacing = (b.0 - a.0) as f64 * gap;
                let need = self.uncertainty.d_min + 0.5 * (a.1.params.length + b.1.params.length);
                if spacing < need {
                    return invalid(format!(
                        "formation spacing {spacing} below d_min + vehicle length ({need})"
                    ));
                }
            }
        }
        generate_reference(self).map(|_| ())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn write_scenario(config: &ScenarioConfig, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    std::fs::write(path, config.to_json() + "\n").map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

const PRESETS: &[(&str, &str)] = &[
    ("single", include_str!("../../presets/single.json")),
    ("lane3", include_str!("../../presets/lane3.json")),
    ("lane4", include_str!("../../presets/lane4.json")),
    ("lane5", include_str!("../../presets/lane5.json")),
    ("lane6", include_str!("../../presets/lane6.json")),
    ("table1_3av", include_str!("../../presets/table1_3av.json")),
    ("table1_6av", include_str!("../../presets/table1_6av.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// A bundled scenario by name.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name)?;
    Some(parse_scenario(text).expect("bundled presets are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_load() {
        for name in preset_names() {
            let c = preset(name).unwrap();
            assert_eq!(c.horizon.steps, 100, "{name}");
            assert_eq!(c.horizon.dt, 0.05, "{name}");
        }
    }

    #[test]
    fn minimal_single_vehicle() {
        let c = preset("single").unwrap();
        assert_eq!(c.vehicles.len(), 1);
        assert_eq!(c.vehicles[0].params, VehicleParams::default());
    }

    #[test]
    fn three_vehicle_preset_layout() {
        let c = preset("lane3").unwrap();
        assert_eq!(c.vehicles.len(), 3);
        assert_eq!(c.road.lanes, 3);
        assert_eq!(c.road.lane_width, 3.7);
        assert_eq!(c.weights.q_z, [1.0, 100.0, 1.0, 0.1]);
        assert_eq!(c.vehicles.iter().filter(|v| v.changes_lane()).count(), 2);
        let target = c.vehicles[c.leader()].target_lane;
        assert!(c.vehicles.iter().all(|v| v.target_lane == target));
    }

    #[test]
    fn zero_dt_is_rejected() {
        let mut c = preset("single").unwrap();
        c.horizon.dt = 0.0;
        let err = parse_scenario(&c.to_json()).unwrap_err();
        assert!(err.to_string().contains("dt"), "{err}");
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(parse_scenario("{\"vehicles\": 3"), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn two_leaders_rejected() {
        let mut c = preset("lane3").unwrap();
        c.vehicles[1].role = Role::Lv;
        assert!(c.validate().unwrap_err().to_string().contains("exactly one LV"));
    }

    #[test]
    fn narrow_lane_rejected() {
        let mut c = preset("single").unwrap();
        c.road.lane_width = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tight_gap_rejected() {
        let mut c = preset("lane3").unwrap();
        c.formation.gap = Some(4.0);
        assert!(c.validate().unwrap_err().to_string().contains("spacing"));
    }

    #[test]
    fn drivable_interval_respects_solid_lines_and_direction() {
        let c = preset("lane6").unwrap();
        let w = c.road.lane_width;
        assert_eq!(c.road.drivable_interval(4), (3.0 * w, 6.0 * w));
        assert_eq!(c.road.drivable_interval(0), (0.0, 3.0 * w));
        let mut r = c.road.clone();
        r.solid_lines[3] = true;
        assert_eq!(r.drivable_interval(3), (3.0 * w, 4.0 * w));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_scenario("/nonexistent/scenario.json"),
            Err(ScenarioError::Io { .. })
        ));
    }
}
