//! Perception, communication and motion uncertainty.
//!
//! All randomness comes from [`RngStreams`]: one ChaCha stream per
//! (vehicle, purpose), positioned by step, so draws for one vehicle never
//! shift another's and any step can be replayed in isolation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;

type State = VehicleState<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UncertaintyError {
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("negative margin parameter (d_min = {d_min}, d_max = {d_max})")]
    NegativeMargin { d_min: f64, d_max: f64 },
}

/// A value that is either constant or given per step; the last entry of a
/// series holds beyond its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Series(Vec<f64>),
}

impl Profile {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Series(v) => v.get(step).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Profile::Constant(v) => vec![*v],
            Profile::Series(v) => v.clone(),
        }
    }
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceModel {
    Fixed { rho: f64 },
    /// `ρ = clamp(1 − range / range_max, 0, 1)`
    DistanceDecay { range_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    Pinned,
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySettings {
    /// Intervals for the deviation `[Δx, Δy, Δφ, Δv]`.
    pub deviation: [[f64; 2]; 4],
    pub confidence: ConfidenceModel,
    /// Link delivery probability per step.
    pub sigma: Profile,
    /// Rain rate per step in `[0, 1]`.
    pub rain: Profile,
    pub alpha: f64,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    /// Chance threshold; logged only.
    pub epsilon: f64,
    pub d_min: f64,
}

impl Default for UncertaintySettings {
    fn default() -> Self {
        Self {
            deviation: [[0.0; 2]; 4],
            confidence: ConfidenceModel::Fixed { rho: 1.0 },
            sigma: Profile::Constant(1.0),
            rain: Profile::Constant(0.0),
            alpha: 0.1,
            alpha_mode: AlphaMode::Pinned,
            epsilon: 0.05,
            d_min: 0.5,
        }
    }
}

impl UncertaintySettings {
    /// Returns a description of the first violated invariant.
    pub fn validate(&self) -> Result<(), String> {
        for (i, iv) in self.deviation.iter().enumerate() {
            if !(iv[0].is_finite() && iv[1].is_finite()) || iv[0] > iv[1] {
                return Err(format!("deviation interval {i} must be finite with lo <= hi"));
            }
        }
        match self.confidence {
            ConfidenceModel::Fixed { rho } if !(0.0..=1.0).contains(&rho) => {
                return Err(format!("confidence rho = {rho} outside [0, 1]"))
            }
            ConfidenceModel::DistanceDecay { range_max } if !(range_max > 0.0) => {
                return Err("confidence range_max must be > 0".into())
            }
            _ => {}
        }
        for (name, p) in [("sigma", &self.sigma), ("rain", &self.rain)] {
            let v = p.values();
            if v.is_empty() || v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(format!("{name} values must lie in [0, 1]"));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err("alpha must be >= 0".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err("epsilon must lie in (0, 1)".into());
        }
        if !(self.d_min >= 0.0) {
            return Err("d_min must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Perception = 0,
    Connectivity = 1,
    Rain = 2,
}

/// Words reserved per step in each stream; far more than any step draws.
const WORDS_PER_STEP: u128 = 1 << 16;

/// Deterministic random streams derived from one scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    pub seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, vehicle: usize, purpose: Purpose, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(vehicle as u64 * 8 + purpose as u64);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }
}

fn uniform<R: Rng>(rng: &mut R, iv: [f64; 2]) -> f64 {
    let u: f64 = rng.gen();
    iv[0] + (iv[1] - iv[0]) * u
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionObservation {
    pub observer: usize,
    pub target: usize,
    pub state: State,
    pub confidence: f64,
}

/// Observations of every target `j ≠ k` by every observer `k`, flattened
/// observer-major. Observer `k` draws from its own stream in target order.
pub fn sample_perception(
    truth: &[State],
    settings: &UncertaintySettings,
    streams: &RngStreams,
    step: usize,
) -> Vec<PerceptionObservation> {
    let mut out = Vec::with_capacity(truth.len() * truth.len().saturating_sub(1));
    for (k, zk) in truth.iter().enumerate() {
        let mut rng = streams.stream(k, Purpose::Perception, step);
        for (j, zj) in truth.iter().enumerate() {
            if j == k {
                continue;
            }
            let d: Vec<f64> = settings.deviation.iter().map(|iv| uniform(&mut rng, *iv)).collect();
            let confidence = match settings.confidence {
                ConfidenceModel::Fixed { rho } => rho,
                ConfidenceModel::DistanceDecay { range_max } => {
                    let range = (zj.x - zk.x).hypot(zj.y - zk.y);
                    (1.0 - range / range_max).clamp(0.0, 1.0)
                }
            };
            out.push(PerceptionObservation {
                observer: k,
                target: j,
                state: State::new(zj.x + d[0], zj.y + d[1], zj.phi + d[2], zj.v + d[3]),
                confidence,
            });
        }
    }
    out
}

/// `d = d_min + (1 − ρ) d_max`
pub fn safety_margin(rho: f64, d_min: f64, d_max: f64) -> Result<f64, UncertaintyError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(UncertaintyError::ConfidenceOutOfRange(rho));
    }
    if !(d_min >= 0.0 && d_max >= 0.0) {
        return Err(UncertaintyError::NegativeMargin { d_min, d_max });
    }
    Ok(d_min + (1.0 - rho) * d_max)
}

/// `I[k][l] = 1` when vehicle `k` receives vehicle `l`'s broadcast.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityMatrix(pub Vec<Vec<bool>>);

impl ConnectivityMatrix {
    pub fn full(k: usize) -> Self {
        Self(vec![vec![true; k]; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize, l: usize) -> bool {
        self.0[k][l]
    }

    pub fn row(&self, k: usize) -> &[bool] {
        &self.0[k]
    }
}

/// Bernoulli(σ) links with self links fixed to 1. Row `k` draws from
/// vehicle `k`'s stream.
pub fn sample_connectivity(
    count: usize,
    sigma: f64,
    streams: &RngStreams,
    step: usize,
) -> ConnectivityMatrix {
    let rows = (0..count)
        .map(|k| {
            let mut rng = streams.stream(k, Purpose::Connectivity, step);
            (0..count)
                .map(|l| {
                    let u: f64 = rng.gen();
                    l == k || u < sigma
                })
                .collect()
        })
        .collect();
    ConnectivityMatrix(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub confidence: f64,
    pub source: usize,
    pub state: State,
}

/// Max-score fusion over the sources connected to the ego.
///
/// `sources[l]` is source `l`'s observation of the target, if any; the
/// target's own broadcast enters as a source with `ρ = 1` and no deviation.
/// Ties go to the lowest index. Returns `None` when no connected source
/// observed the target.
pub fn max_score_fusion(
    sources: &[Option<(State, f64)>],
    connected: &[bool],
) -> Option<FusionResult> {
    let mut best: Option<FusionResult> = None;
    for (l, obs) in sources.iter().enumerate() {
        let Some((state, rho)) = obs else { continue };
        if !connected.get(l).copied().unwrap_or(false) {
            continue;
        }
        if best.map_or(true, |b| *rho > b.confidence) {
            best = Some(FusionResult {
                confidence: *rho,
                source: l,
                state: *state,
            });
        }
    }
    best
}

pub fn fused_margin(fusion: &FusionResult, d_min: f64, d_max: f64) -> Result<f64, UncertaintyError> {
    safety_margin(fusion.confidence, d_min, d_max)
}

/// `Δz̃ = ẑ − z`
pub fn motion_mismatch(commanded: &State, realized: &State) -> [f64; 4] {
    commanded.diff(realized)
}

pub fn regularizer_weight(rain: f64, alpha: f64, mode: AlphaMode) -> f64 {
    match mode {
        AlphaMode::Pinned => alpha,
        AlphaMode::Proportional => alpha * rain,
    }
}

/// Slip factor `1 + η`, `η ~ U(−0.5 r, 0.5 r)`, from the vehicle's rain stream.
pub fn rain_slip_factor(rain: f64, streams: &RngStreams, vehicle: usize, step: usize) -> f64 {
    if rain <= 0.0 {
        return 1.0;
    }
    let mut rng = streams.stream(vehicle, Purpose::Rain, step);
    1.0 + uniform(&mut rng, [-0.5 * rain, 0.5 * rain])
}

/// Scales the lateral displacement and heading change of a nominal step.
pub fn apply_rain_slip(previous: &State, nominal: &State, factor: f64) -> State {
    State {
        x: nominal.x,
        y: previous.y + factor * (nominal.y - previous.y),
        phi: previous.phi + factor * (nominal.phi - previous.phi),
        v: nominal.v,
    }
}

/// How a vehicle turns observations into margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fused confidence margins and motion regularizer.
    Muacp,
    /// Same information flow, fixed `d_min` margins, no regularizer.
    Tcm,
    /// Own observations only, fixed `d_min` margins, no V2V.
    Sem,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Muacp, Mode::Tcm, Mode::Sem];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Muacp => "MUACP",
            Mode::Tcm => "TCM",
            Mode::Sem => "SEM",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "muacp" => Ok(Mode::Muacp),
            "tcm" => Ok(Mode::Tcm),
            "sem" => Ok(Mode::Sem),
            other => Err(format!("unknown mode '{other}' (expected muacp, tcm or sem)")),
        }
    }
}

/// Everything the planner needs to know about uncertainty at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyContext {
    pub step: usize,
    pub rain: f64,
    pub sigma: f64,
    pub connectivity: ConnectivityMatrix,
    /// `observations[k][j]`: what `k` perceives of `j` (`None` on the diagonal).
    pub observations: Vec<Vec<Option<PerceptionObservation>>>,
    /// `fused[k][j]`: the belief `k` plans with.
    pub fused: Vec<Vec<Option<FusionResult>>>,
    /// `margins[k][j]` in meters.
    pub margins: Vec<Vec<f64>>,
    pub alpha: f64,
    /// Per vehicle `Δz̃`; filled by the simulator from feedback.
    pub mismatch: Vec<[f64; 4]>,
}

/// Builds the context for step `step`. `d_max[k]` is vehicle `k`'s maximum
/// detection error.
pub fn build_context(
    truth: &[State],
    settings: &UncertaintySettings,
    d_max: &[f64],
    streams: &RngStreams,
    step: usize,
    mode: Mode,
) -> UncertaintyContext {
    let n = truth.len();
    let sigma = settings.sigma.at(step);
    let rain = settings.rain.at(step);
    let connectivity = match mode {
        Mode::Sem => ConnectivityMatrix(
            (0..n).map(|k| (0..n).map(|l| l == k).collect()).collect(),
        ),
        _ => sample_connectivity(n, sigma, streams, step),
    };
    let mut observations = vec![vec![None; n]; n];
    for obs in sample_perception(truth, settings, streams, step) {
        observations[obs.observer][obs.target] = Some(obs);
    }
    let mut fused = vec![vec![None; n]; n];
    let mut margins = vec![vec![settings.d_min; n]; n];
    for k in 0..n {
        for j in 0..n {
            if j == k {
                continue;
            }
            let sources: Vec<Option<(State, f64)>> = (0..n)
                .map(|l| {
                    if l == j {
                        Some((truth[j], 1.0))
                    } else {
                        observations[l][j].map(|o| (o.state, o.confidence))
                    }
                })
                .collect();
            let result = max_score_fusion(&sources, connectivity.row(k))
                .expect("ego observation is always connected");
            if mode == Mode::Muacp {
                margins[k][j] = fused_margin(&result, settings.d_min, d_max[k])
                    .expect("validated settings give valid margins");
            }
            fused[k][j] = Some(result);
        }
    }
    let alpha = match mode {
        Mode::Muacp => regularizer_weight(rain, settings.alpha, settings.alpha_mode),
        _ => 0.0,
    };
    UncertaintyContext {
        step,
        rain,
        sigma,
        connectivity,
        observations,
        fused,
        margins,
        alpha,
        mismatch: vec![[0.0; 4]; n],
    }
}
