use serde::{Deserialize, Serialize};

use super::scenario::{AgentKind, Motion, Scenario};
use super::{
    DT, LANE_WIDTH, MAX_ACCEL, MAX_STEER, PEDESTRIAN_RADIUS, ROAD_MARGIN, SENSOR_RANGE, TARGET_TOLERANCE,
    VEHICLE_DISC_OFFSETS, VEHICLE_DISC_RADIUS, VEHICLE_HALF_LENGTH, WHEELBASE,
};
use crate::geom::{to_ego_frame, Pose};
use crate::model::{Context, ObstacleSlot, K_OBS};

/// Below this speed the ego counts as stopped at a stop line.
pub(crate) const STOP_SPEED: f64 = 0.5;
/// Admissible distance of the ego front before the stop line when stopped.
pub(crate) const STOP_WINDOW: (f64, f64) = (-1.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    pub speed: f64,
    /// Realised acceleration over the last tick.
    pub accel: f64,
    pub steer: f64,
}

impl EgoState {
    pub fn discs(&self) -> [[f64; 2]; 3] {
        vehicle_discs(self.pose.x, self.pose.y, self.pose.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub kind: AgentKind,
    pub motion: Motion,
    pub s: f64,
    pub d: f64,
    /// Route-frame velocity.
    pub vs: f64,
    pub vd: f64,
    pub triggered: bool,
}

impl AgentState {
    pub fn half_length(&self) -> f64 {
        match self.kind {
            AgentKind::Vehicle => VEHICLE_HALF_LENGTH,
            AgentKind::Pedestrian => PEDESTRIAN_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfractionKind {
    Collision,
    OffRoad,
    MissedTarget,
}

impl InfractionKind {
    pub fn penalty(self) -> f64 {
        match self {
            InfractionKind::Collision => 0.5,
            InfractionKind::OffRoad => 0.6,
            InfractionKind::MissedTarget => 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infraction {
    pub kind: InfractionKind,
    pub tick: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Running,
    Completed,
    Collision,
    OffRoad,
    Timeout,
    /// The planner returned an error.
    Failed,
}

/// Whether any disc of `a` overlaps any disc of `b`.
pub fn discs_collide(a: &[[f64; 2]], ra: f64, b: &[[f64; 2]], rb: f64) -> bool {
    let r = ra + rb;
    a.iter().any(|p| b.iter().any(|q| (p[0] - q[0]).hypot(p[1] - q[1]) < r))
}

fn vehicle_discs(x: f64, y: f64, heading: f64) -> [[f64; 2]; 3] {
    let (s, c) = heading.sin_cos();
    VEHICLE_DISC_OFFSETS.map(|o| [x + o * c, y + o * s])
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

/// Complete simulator state of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub scenario: Scenario,
    pub ego: EgoState,
    pub agents: Vec<AgentState>,
    pub tick: usize,
    pub status: Status,
    pub infractions: Vec<Infraction>,
    /// Index of the first target not yet passed.
    pub next_target: usize,
    pub stop_done: bool,
    /// Largest route coordinate reached.
    pub progress: f64,
}

impl World {
    pub fn new(scenario: Scenario) -> Self {
        let p = scenario.frame.to_world(0.0, scenario.ego_d);
        let ego = EgoState {
            pose: Pose::new(p[0], p[1], scenario.frame.heading + scenario.ego_heading_error),
            speed: scenario.ego_speed,
            accel: 0.0,
            steer: 0.0,
        };
        let agents = scenario
            .agents
            .iter()
            .map(|a| {
                let vs = match a.motion {
                    Motion::Cruise { speed } => speed,
                    _ => 0.0,
                };
                AgentState {
                    kind: a.kind,
                    motion: a.motion,
                    s: a.s,
                    d: a.d,
                    vs,
                    vd: 0.0,
                    triggered: false,
                }
            })
            .collect();
        let stop_done = scenario.stop_line.is_none();
        Self {
            scenario,
            ego,
            agents,
            tick: 0,
            status: Status::Running,
            infractions: Vec::new(),
            next_target: 0,
            stop_done,
            progress: 0.0,
        }
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    /// Ego position in route coordinates `(s, d)`.
    pub fn ego_route(&self) -> (f64, f64) {
        self.scenario.frame.to_route([self.ego.pose.x, self.ego.pose.y])
    }

    pub fn heading_error(&self) -> f64 {
        wrap_angle(self.ego.pose.heading - self.scenario.frame.heading)
    }

    pub fn completion(&self) -> f64 {
        (self.progress / self.scenario.route_length).clamp(0.0, 1.0)
    }

    pub fn agent_world(&self, a: &AgentState) -> [f64; 2] {
        self.scenario.frame.to_world(a.s, a.d)
    }

    /// Whether a stop at the stop line is still owed.
    pub fn stop_pending(&self) -> bool {
        !self.stop_done && self.scenario.stop_line.is_some()
    }

    /// Advances one tick with the given controls; does nothing once the episode ended.
    pub fn step(&mut self, steer: f64, accel: f64) {
        if !self.is_running() {
            return;
        }
        let steer = if steer.is_finite() {
            steer.clamp(-MAX_STEER, MAX_STEER)
        } else {
            0.0
        };
        let accel = if accel.is_finite() {
            accel.clamp(-MAX_ACCEL, MAX_ACCEL)
        } else {
            -MAX_ACCEL
        };
        let e = &mut self.ego;
        let v = e.speed;
        e.pose.x += v * e.pose.heading.cos() * DT;
        e.pose.y += v * e.pose.heading.sin() * DT;
        e.pose.heading += v / WHEELBASE * steer.tan() * DT;
        e.speed = (v + accel * DT).max(0.0);
        e.accel = (e.speed - v) / DT;
        e.steer = steer;
        self.tick += 1;

        let (s_ego, _) = self.ego_route();
        for a in &mut self.agents {
            match a.motion {
                Motion::Static => {}
                Motion::Cruise { speed } => a.s += speed * DT,
                Motion::Crossing {
                    trigger_gap,
                    speed,
                    d_end,
                } => {
                    if !a.triggered && a.s - s_ego < trigger_gap {
                        a.triggered = true;
                    }
                    if a.triggered && a.d < d_end {
                        a.d = (a.d + speed * DT).min(d_end);
                        a.vd = if a.d < d_end { speed } else { 0.0 };
                    } else {
                        a.vd = 0.0;
                    }
                }
            }
        }
        self.check();
    }

    fn infraction(&mut self, kind: InfractionKind, detail: String) {
        self.infractions.push(Infraction {
            kind,
            tick: self.tick,
            detail,
        });
    }

    fn check(&mut self) {
        let (s, d) = self.ego_route();
        self.progress = self.progress.max(s);

        let ego_discs = self.ego.discs();
        let hit = self.agents.iter().position(|a| {
            let p = self.agent_world(a);
            match a.kind {
                AgentKind::Vehicle => discs_collide(
                    &ego_discs,
                    VEHICLE_DISC_RADIUS,
                    &vehicle_discs(p[0], p[1], self.scenario.frame.heading),
                    VEHICLE_DISC_RADIUS,
                ),
                AgentKind::Pedestrian => discs_collide(&ego_discs, VEHICLE_DISC_RADIUS, &[p], PEDESTRIAN_RADIUS),
            }
        });
        if let Some(i) = hit {
            self.infraction(InfractionKind::Collision, format!("agent {i} at s={s:.2}"));
            self.status = Status::Collision;
            return;
        }

        let (lo, hi) = self.scenario.open_lanes(s);
        if d < lo - ROAD_MARGIN || d > hi + ROAD_MARGIN {
            self.infraction(InfractionKind::OffRoad, format!("d={d:.2} at s={s:.2}"));
            self.status = Status::OffRoad;
            return;
        }

        if let (Some(line), false) = (self.scenario.stop_line, self.stop_done) {
            let front = s + VEHICLE_HALF_LENGTH;
            let before = line - front;
            if self.ego.speed < STOP_SPEED && (STOP_WINDOW.0..=STOP_WINDOW.1).contains(&before) {
                self.stop_done = true;
            } else if before < STOP_WINDOW.0 {
                self.stop_done = true;
                self.infraction(InfractionKind::MissedTarget, format!("ran stop line at s={line:.2}"));
            }
        }

        while let Some(t) = self.scenario.targets.get(self.next_target).copied() {
            if s < t.s {
                break;
            }
            if (d - t.d).abs() > TARGET_TOLERANCE {
                self.infraction(
                    InfractionKind::MissedTarget,
                    format!("target ({:.2}, {:.2}) passed at d={d:.2}", t.s, t.d),
                );
            }
            self.next_target += 1;
        }

        if s >= self.scenario.route_length {
            self.status = Status::Completed;
        } else if self.tick >= self.scenario.max_ticks {
            self.status = Status::Timeout;
        }
    }

    /// Lane centre closest to lateral offset `d`.
    pub fn lane_of(d: f64) -> f64 {
        if d > 0.5 * LANE_WIDTH {
            LANE_WIDTH
        } else {
            0.0
        }
    }

    /// Route coordinates of the point the planner is steered towards.
    pub fn goal(&self) -> (f64, f64, bool) {
        let (_, d) = self.ego_route();
        if let (Some(line), true) = (self.scenario.stop_line, self.stop_pending()) {
            return (line, Self::lane_of(d), true);
        }
        let t = self
            .scenario
            .targets
            .get(self.next_target)
            .or(self.scenario.targets.last())
            .expect("scenario has targets");
        (t.s, t.d, false)
    }

    /// Planner conditioning built from the current state.
    pub fn context(&self) -> Context {
        let pose = self.ego.pose;
        let (gs, gd, stop) = self.goal();
        let goal = self.scenario.frame.to_world(gs, gd);
        let target = to_ego_frame(&[goal], &pose)[0];
        let (_, d) = self.ego_route();

        let ego_vel = [self.ego.speed * pose.heading.cos(), self.ego.speed * pose.heading.sin()];
        let mut near: Vec<(f64, [f64; 2], [f64; 2])> = self
            .agents
            .iter()
            .filter_map(|a| {
                let p = self.agent_world(a);
                let dist = (p[0] - pose.x).hypot(p[1] - pose.y);
                (dist <= SENSOR_RANGE).then(|| {
                    let v = self.scenario.frame.velocity_to_world(a.vs, a.vd);
                    (dist, p, [v[0] - ego_vel[0], v[1] - ego_vel[1]])
                })
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut obstacles = [ObstacleSlot::default(); K_OBS];
        let (sn, cs) = pose.heading.sin_cos();
        for (slot, (_, p, v)) in obstacles.iter_mut().zip(near) {
            *slot = ObstacleSlot {
                rel_pos: to_ego_frame(&[p], &pose)[0],
                rel_vel: [cs * v[0] + sn * v[1], -sn * v[0] + cs * v[1]],
                present: true,
            };
        }
        Context {
            ego_speed: self.ego.speed,
            target_point: target,
            lane_offset: d,
            heading_error: self.heading_error(),
            obstacles,
            stop_flag: stop,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Scenario, ScenarioKind, SuiteConfig};
    use proptest::prelude::*;

    fn world(kind: ScenarioKind, seed: u64) -> World {
        World::new(Scenario::generate(kind, seed, &SuiteConfig::default()).unwrap())
    }

    fn empty_world() -> World {
        let mut w = world(ScenarioKind::ParkedOvertake, 1);
        w.agents.clear();
        w.scenario.agents.clear();
        w
    }

    #[test]
    fn zero_controls_at_rest_keep_the_ego_still() {
        let mut w = empty_world();
        w.ego.speed = 0.0;
        let before = w.ego;
        w.step(0.0, 0.0);
        assert_eq!(w.ego.pose, before.pose);
        assert_eq!(w.ego.speed, 0.0);
    }

    #[test]
    fn constant_speed_moves_along_heading() {
        let mut w = empty_world();
        w.ego.speed = 6.0;
        let p0 = w.ego.pose;
        let n = 40;
        for _ in 0..n {
            w.step(0.0, 0.0);
        }
        let dist = n as f64 * DT * 6.0;
        assert!((w.ego.pose.x - (p0.x + dist * p0.heading.cos())).abs() < 1e-12);
        assert!((w.ego.pose.y - (p0.y + dist * p0.heading.sin())).abs() < 1e-12);
    }

    #[test]
    fn speed_follows_acceleration_with_clamping() {
        let mut w = empty_world();
        w.ego.speed = 5.0;
        for _ in 0..10 {
            w.step(0.0, 1.5);
        }
        assert!((w.ego.speed - (5.0 + 10.0 * DT * 1.5)).abs() < 1e-12);
        for _ in 0..10 {
            w.step(0.0, 99.0);
        }
        assert!((w.ego.speed - (5.75 + 10.0 * DT * MAX_ACCEL)).abs() < 1e-12);
        for _ in 0..200 {
            w.step(0.0, -99.0);
        }
        assert_eq!(w.ego.speed, 0.0);
    }

    #[test]
    fn steering_is_bounded() {
        let mut w = empty_world();
        w.step(3.0, 0.0);
        assert_eq!(w.ego.steer, MAX_STEER);
    }

    #[test]
    fn driving_into_a_parked_car_collides() {
        let mut w = world(ScenarioKind::ParkedOvertake, 3);
        while w.is_running() {
            w.step(0.0, 1.0);
        }
        assert_eq!(w.status, Status::Collision);
        assert_eq!(w.infractions[0].kind, InfractionKind::Collision);
    }

    #[test]
    fn leaving_the_road_terminates() {
        let mut w = empty_world();
        while w.is_running() {
            w.step(0.3, 0.0);
        }
        assert_eq!(w.status, Status::OffRoad);
    }

    #[test]
    fn running_a_stop_line_is_an_infraction() {
        let mut w = world(ScenarioKind::LaneFork, 2);
        for _ in 0..200 {
            w.step(0.0, 1.0);
        }
        assert!(w.stop_done);
        assert!(w.infractions.iter().any(|i| i.kind == InfractionKind::MissedTarget));
    }

    #[test]
    fn braking_to_a_halt_times_out_without_infractions() {
        let mut w = world(ScenarioKind::MergeLite, 4);
        while w.is_running() {
            w.step(0.0, -MAX_ACCEL);
        }
        assert_eq!(w.status, Status::Timeout);
        assert!(w.infractions.is_empty());
        assert!(w.completion() < 0.1);
    }

    #[test]
    fn context_sees_agents_nearest_first() {
        let w = world(ScenarioKind::ParkedOvertake, 5);
        let z = w.context();
        assert!((z.lane_offset - w.scenario.ego_d).abs() < 1e-9);
        let present: Vec<_> = z.obstacles.iter().filter(|o| o.present).collect();
        assert!(!present.is_empty());
        for pair in present.windows(2) {
            let n = |o: &ObstacleSlot| o.rel_pos[0].hypot(o.rel_pos[1]);
            assert!(n(pair[0]) <= n(pair[1]));
        }
        let first = present[0];
        assert!(first.rel_pos[0] > 0.0);
        assert!((first.rel_vel[0] + w.ego.speed).abs() < 1e-9);
    }

    #[test]
    fn pedestrian_crosses_once_triggered() {
        let mut w = world(ScenarioKind::EmergencyBrake, 6);
        w.ego.speed = 0.0;
        w.step(0.0, 0.0);
        assert!(!w.agents[0].triggered);
        let s_p = w.agents[0].s;
        w.ego.pose = {
            let p = w.scenario.frame.to_world(s_p - 10.0, 0.0);
            Pose::new(p[0], p[1], w.scenario.frame.heading)
        };
        w.step(0.0, 0.0);
        assert!(w.agents[0].triggered && w.agents[0].vd > 0.0);
    }

    proptest! {
        #[test]
        fn collision_test_is_symmetric(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64, ah in -3.2..3.2f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64, bh in -3.2..3.2f64,
            rb in 0.1..1.5f64,
        ) {
            let a = vehicle_discs(ax, ay, ah);
            let b = vehicle_discs(bx, by, bh);
            prop_assert_eq!(discs_collide(&a, 1.0, &b, rb), discs_collide(&b, rb, &a, 1.0));
            prop_assert_eq!(discs_collide(&a, 1.0, &[[bx, by]], rb), discs_collide(&[[bx, by]], rb, &a, 1.0));
        }
    }
}
