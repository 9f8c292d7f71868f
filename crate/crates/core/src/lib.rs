//! Uncertainty-aware cooperative lane-change planning for vehicle platoons.
//!
//! Each vehicle solves a regularized model predictive control problem with
//! dual-form polytope collision constraints. Margins grow with perception
//! uncertainty, V2V links may drop, and rain perturbs the plant. The [`sim`]
//! module closes the loop in 2D.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! planner and simulator run in `f64`.

pub mod dynamics;
pub mod geometry;
pub mod linalg;
pub mod planner;
pub mod rcmpc;
pub mod scalar;
pub mod scenario;
pub mod sim;
pub mod uncertainty;

pub use scalar::Scalar;

pub type Real = f64;
pub type State = dynamics::VehicleState<Real>;
pub type Control = dynamics::ControlInput<Real>;
pub type Axles = dynamics::Axles<Real>;
pub type Polytope = geometry::Polytope<Real>;
pub type DualCertificate = geometry::DualCertificate<Real>;
pub type QpProblem = rcmpc::qp::QpProblem<Real>;
pub type QpSolution = rcmpc::qp::QpSolution<Real>;

pub use planner::{plan_step, PlannerSettings, PlatoonPlanStep};
pub use rcmpc::{solve_rcmpc, PlanSolution, PlanStatus, RcmpcSettings};
pub use scenario::{load_scenario, preset, ScenarioConfig, ScenarioError};
pub use sim::{compute_metrics, run_batch, run_episode, EpisodeResult, MetricTable, SimSettings};
pub use uncertainty::Mode;
