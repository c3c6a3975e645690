//! Rule-based expert with privileged access to the world state.
//!
//! Lateral: cubic Hermite lane-change curve `d(s)` from the ego towards the lane the expert
//! wants. Longitudinal: intelligent driver model against corridor agents and virtual
//! obstacles (stop line, end of lane 0, merge yielding).

use super::scenario::{AgentKind, ScenarioKind};
use super::sim::World;
use super::{DT, LANE_WIDTH, MAX_ACCEL, VEHICLE_HALF_LENGTH};
use crate::geom::{
    arc_lengths, resample_at, to_ego_frame, TrajKind, Trajectory, GEOMETRIC_N_POINT, GEOMETRIC_SPACING,
    TEMPORAL_N_POINT, TEMPORAL_SPACING,
};
use crate::model::Context;

pub const IDM_ACCEL: f64 = 2.0;
pub const IDM_DECEL: f64 = 3.0;
pub const IDM_GAP: f64 = 3.0;
pub const IDM_HEADWAY: f64 = 1.2;
pub const IDM_DELTA: f64 = 4.0;
/// Standstill gap kept to virtual obstacles.
pub const VIRTUAL_GAP: f64 = 1.5;
/// Deceleration of the speed cap towards standing obstacles, m/s².
pub const STOP_DECEL: f64 = 1.5;
const STOP_TAU: f64 = 0.5;
/// Lateral half-width of the driving corridor for vehicles.
pub const CORRIDOR: f64 = 2.5;
pub const MIN_CHANGE_LENGTH: f64 = 12.0;
/// Lane 0 closing: the expert stops this far before the end while waiting to merge.
pub const LANE_END_STOP: f64 = 15.0;
pub const MERGE_HORIZON: f64 = 70.0;
pub const MERGE_GAP: f64 = 8.0;
/// Seconds of closing speed added to the merge gap.
pub const MERGE_GAP_TIME: f64 = 2.0;
/// Waiting to merge, the expert falls back this far behind a blocking vehicle.
pub const MERGE_YIELD: f64 = 13.0;
pub const OVERTAKE_CLEARANCE: f64 = 8.0;

const PATH_STEP: f64 = 0.25;
const PATH_LENGTH: f64 = 40.0;

#[derive(Debug, Clone, Copy)]
struct Obstacle {
    /// Route coordinate the ego front must stay behind.
    rear: f64,
    speed: f64,
    gap0: f64,
}

/// The lateral curve the expert follows.
#[derive(Debug, Clone, Copy)]
struct LaneChange {
    s0: f64,
    d0: f64,
    slope: f64,
    d1: f64,
    length: f64,
}

impl LaneChange {
    fn d_at(&self, s: f64) -> f64 {
        let u = (s - self.s0) / self.length;
        if u <= 0.0 {
            return self.d0 + self.slope * (s - self.s0);
        }
        if u >= 1.0 {
            return self.d1;
        }
        let (u2, u3) = (u * u, u * u * u);
        let m0 = self.slope * self.length;
        (2.0 * u3 - 3.0 * u2 + 1.0) * self.d0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * self.d1
    }
}

fn idm(v: f64, v0: f64, obstacles: &[Obstacle], s_front: f64) -> f64 {
    let mut a = IDM_ACCEL * (1.0 - (v / v0).powf(IDM_DELTA));
    for o in obstacles {
        let gap = (o.rear - s_front).max(0.1);
        let dv = v - o.speed;
        let s_star = o.gap0 + (v * IDM_HEADWAY + v * dv / (2.0 * (IDM_ACCEL * IDM_DECEL).sqrt())).max(0.0);
        let ai = IDM_ACCEL * (1.0 - (v / v0).powf(IDM_DELTA) - (s_star / gap).powi(2));
        a = a.min(ai);
        if o.speed.abs() < 0.1 {
            let cap = (2.0 * STOP_DECEL * (gap - o.gap0).max(0.0)).sqrt();
            a = a.min((cap - v) / STOP_TAU);
        }
    }
    a.clamp(-MAX_ACCEL, IDM_ACCEL)
}

fn merge_gap_ok(ds: f64, v_ego: f64, v_agent: f64) -> bool {
    ds > MERGE_GAP + (v_ego - v_agent).max(0.0) * MERGE_GAP_TIME
        || ds < -(MERGE_GAP + (v_agent - v_ego).max(0.0) * MERGE_GAP_TIME)
}

/// Lane centre the expert steers for, plus extra virtual obstacles.
fn decide(w: &World) -> (f64, Vec<Obstacle>) {
    let (s, d) = w.ego_route();
    let v = w.ego.speed;
    let sc = &w.scenario;
    let goal_d = sc.targets.get(w.next_target).or(sc.targets.last()).map_or(0.0, |t| t.d);
    let mut extra = Vec::new();
    let lane = match sc.kind {
        ScenarioKind::LaneFork => {
            if w.stop_pending() {
                World::lane_of(d)
            } else {
                goal_d
            }
        }
        ScenarioKind::ParkedOvertake => {
            let lookahead = (3.0 * v + 10.0).max(25.0);
            let blocked = w.agents.iter().any(|a| {
                a.kind == AgentKind::Vehicle
                    && a.d.abs() < CORRIDOR
                    && a.s - s > -OVERTAKE_CLEARANCE
                    && a.s - s < lookahead
            });
            if blocked {
                LANE_WIDTH
            } else {
                goal_d
            }
        }
        ScenarioKind::EmergencyBrake => goal_d,
        ScenarioKind::MergeLite => {
            let end = sc.lane0_end.unwrap_or(f64::INFINITY);
            let lane1: Vec<_> = w
                .agents
                .iter()
                .filter(|a| a.kind == AgentKind::Vehicle && (a.d - LANE_WIDTH).abs() < CORRIDOR)
                .collect();
            let gap = lane1.iter().all(|a| merge_gap_ok(a.s - s, v, a.vs));
            if d > 0.5 * LANE_WIDTH || (end - s < MERGE_HORIZON && gap) {
                LANE_WIDTH
            } else {
                extra.push(Obstacle {
                    rear: end - LANE_END_STOP,
                    speed: 0.0,
                    gap0: VIRTUAL_GAP,
                });
                for a in lane1 {
                    let ds = a.s - s;
                    if !merge_gap_ok(ds, v, a.vs) && (ds > 0.0 || a.vs > v) {
                        extra.push(Obstacle {
                            rear: a.s - MERGE_YIELD,
                            speed: a.vs,
                            gap0: IDM_GAP,
                        });
                    }
                }
                0.0
            }
        }
    };
    if let (Some(line), true) = (sc.stop_line, w.stop_pending()) {
        extra.push(Obstacle {
            rear: line,
            speed: 0.0,
            gap0: VIRTUAL_GAP,
        });
    }
    (lane, extra)
}

struct Intent {
    curve: LaneChange,
    obstacles: Vec<Obstacle>,
}

fn intent(w: &World) -> Intent {
    let (s, d) = w.ego_route();
    let (lane, mut obstacles) = decide(w);
    let curve = LaneChange {
        s0: s,
        d0: d,
        slope: w.heading_error().tan(),
        d1: lane,
        length: (2.0 * w.ego.speed).max(MIN_CHANGE_LENGTH),
    };
    for a in &w.agents {
        if a.s - s < -VEHICLE_HALF_LENGTH {
            continue;
        }
        let dp = curve.d_at(a.s);
        let blocking = match a.kind {
            AgentKind::Vehicle => (a.d - dp).abs() < CORRIDOR,
            AgentKind::Pedestrian => a.triggered && a.d < dp + 2.0 && a.d > dp - 5.0,
        };
        if blocking {
            obstacles.push(Obstacle {
                rear: a.s - a.half_length(),
                speed: a.vs,
                gap0: IDM_GAP,
            });
        }
    }
    Intent { curve, obstacles }
}

impl Intent {
    /// World-frame polyline of the curve starting at the ego position.
    fn path(&self, w: &World) -> Vec<[f64; 2]> {
        let mut pts = vec![[w.ego.pose.x, w.ego.pose.y]];
        let n = (PATH_LENGTH / PATH_STEP) as usize;
        for i in 1..=n {
            let s = self.curve.s0 + i as f64 * PATH_STEP;
            pts.push(w.scenario.frame.to_world(s, self.curve.d_at(s)));
        }
        pts
    }
}

/// Ground-truth plan of the given representation, ego frame.
pub fn expert_plan(w: &World, kind: TrajKind) -> Trajectory {
    let it = intent(w);
    let (s, _) = w.ego_route();
    let v = w.ego.speed;
    let v0 = w.scenario.cruise_speed;
    let path = it.path(w);
    let distances: Vec<f64> = match kind {
        TrajKind::Geometric => (1..=GEOMETRIC_N_POINT).map(|k| k as f64 * GEOMETRIC_SPACING).collect(),
        TrajKind::Temporal => {
            let per_point = (TEMPORAL_SPACING / DT).round() as usize;
            let mut out = Vec::with_capacity(TEMPORAL_N_POINT);
            let (mut x, mut vel) = (0.0, v);
            let mut obs = it.obstacles.clone();
            for _ in 0..TEMPORAL_N_POINT {
                for _ in 0..per_point {
                    let a = idm(vel, v0, &obs, s + x + VEHICLE_HALF_LENGTH);
                    x += vel * DT;
                    vel = (vel + a * DT).max(0.0);
                    for o in &mut obs {
                        o.rear += o.speed * DT;
                    }
                }
                out.push(x);
            }
            out
        }
    };
    debug_assert!(arc_lengths(&path).last().copied().unwrap_or(0.0) > GEOMETRIC_N_POINT as f64);
    let world_pts = resample_at(&path, &distances);
    let ego_pts = to_ego_frame(&world_pts, &w.ego.pose);
    match kind {
        TrajKind::Geometric => {
            let a = idm(v, v0, &it.obstacles, s + VEHICLE_HALF_LENGTH);
            Trajectory::geometric(ego_pts, (v + 0.5 * a).max(0.0))
        }
        TrajKind::Temporal => {
            let mut pts = ego_pts;
            if distances.last().copied().unwrap_or(0.0) < 1e-9 {
                pts.iter_mut().for_each(|p| *p = [0.0, 0.0]);
            }
            Trajectory::temporal(pts)
        }
    }
}

/// Ground-truth plan together with the planner conditioning at this state.
pub fn expert_policy(w: &World, kind: TrajKind) -> (Trajectory, Context) {
    (expert_plan(w, kind), w.context())
}

/// The expert used as a closed-loop planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertPlanner {
    pub kind: TrajKind,
}
