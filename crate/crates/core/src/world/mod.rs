//! Deterministic 2-D closed-loop driving environment.
//!
//! Every route follows a straight reference line. Positions along it are described by
//! route coordinates `(s, d)`: `s` is distance along the line and `d` the lateral offset,
//! positive to the left. Lane 0 is centred on `d = 0`, lane 1 on `d = LANE_WIDTH`.

mod control;
mod expert;
mod rollout;
mod scenario;
mod sim;

pub use control::{track, PlanHold};
pub use expert::{expert_plan, expert_policy, ExpertPlanner};
pub use rollout::{
    collect_frames, collection_seed, evaluate, rollout, run_episodes, CollectConfig, EpisodeResult, EvalReport, Frame,
    GroupReport, PlanQuery, Planner, RolloutConfig, TraceRow,
};
pub use scenario::{AgentKind, AgentSpec, Motion, RouteFrame, Scenario, ScenarioKind, SuiteConfig, Target};
pub use sim::{discs_collide, AgentState, EgoState, Infraction, InfractionKind, Status, World};

pub const LANE_WIDTH: f64 = 3.5;
/// Lateral slack of the ego centre beyond the outermost open lane centre.
pub const ROAD_MARGIN: f64 = 1.25;
pub const DT: f64 = 0.05;
pub const WHEELBASE: f64 = 2.5;
pub const MAX_STEER: f64 = 0.5;
pub const MAX_ACCEL: f64 = 4.0;
pub const VEHICLE_DISC_RADIUS: f64 = 1.0;
pub const VEHICLE_DISC_OFFSETS: [f64; 3] = [-1.5, 0.0, 1.5];
pub const VEHICLE_HALF_LENGTH: f64 = 2.5;
pub const PEDESTRIAN_RADIUS: f64 = 0.4;
/// Passing a target with a larger lateral error is an infraction.
pub const TARGET_TOLERANCE: f64 = 2.0;
/// Agents farther than this are left out of the context.
pub const SENSOR_RANGE: f64 = 60.0;
