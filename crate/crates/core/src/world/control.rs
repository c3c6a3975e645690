use super::sim::EgoState;
use super::{DT, MAX_ACCEL, MAX_STEER, WHEELBASE};
use crate::geom::{from_ego_frame, Pose, TrajKind, Trajectory, TEMPORAL_SPACING};

/// Gain of the geometric speed loop, 1/s.
pub const GEOMETRIC_SPEED_GAIN: f64 = 2.0;
/// Gain of the temporal speed loop, 1/s.
pub const TEMPORAL_SPEED_GAIN: f64 = 8.0;
pub const LOOKAHEAD_BASE: f64 = 3.0;
pub const LOOKAHEAD_PER_SPEED: f64 = 0.5;

const DEGENERATE_EPS: f64 = 1e-6;

/// A plan frozen in world coordinates between replanning calls.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanHold {
    pub kind: TrajKind,
    /// Plan origin followed by the plan's waypoints, world frame.
    pub path: Vec<[f64; 2]>,
    pub speed: Option<f64>,
    /// Ticks elapsed since the plan was issued.
    pub age: usize,
    degenerate: bool,
}

impl PlanHold {
    pub fn new(plan: &Trajectory, pose: &Pose) -> Self {
        let degenerate = plan.points.is_empty()
            || plan.points.iter().all(|p| p[0].hypot(p[1]) < DEGENERATE_EPS)
            || !plan.points.iter().flatten().all(|v| v.is_finite());
        let mut path = vec![[pose.x, pose.y]];
        if !degenerate {
            path.extend(from_ego_frame(&plan.points, pose));
        }
        Self {
            kind: plan.kind,
            path,
            speed: plan.speed,
            age: 0,
            degenerate,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Speed the plan asks for at the current age.
    pub fn target_speed(&self) -> f64 {
        match self.kind {
            TrajKind::Geometric => self.speed.unwrap_or(0.0).max(0.0),
            TrajKind::Temporal => {
                let tau = self.age as f64 * DT;
                let i = ((tau / TEMPORAL_SPACING) as usize).min(self.path.len() - 2);
                let (p, q) = (self.path[i], self.path[i + 1]);
                (q[0] - p[0]).hypot(q[1] - p[1]) / TEMPORAL_SPACING
            }
        }
    }

    /// Steering and acceleration commands for `ego`.
    pub fn control(&self, ego: &EgoState) -> (f64, f64) {
        if self.degenerate {
            return (0.0, -MAX_ACCEL);
        }
        let gain = match self.kind {
            TrajKind::Geometric => GEOMETRIC_SPEED_GAIN,
            TrajKind::Temporal => TEMPORAL_SPEED_GAIN,
        };
        let accel = (gain * (self.target_speed() - ego.speed)).clamp(-MAX_ACCEL, MAX_ACCEL);
        let lookahead = LOOKAHEAD_BASE + LOOKAHEAD_PER_SPEED * ego.speed;
        let goal = point_ahead(&self.path, [ego.pose.x, ego.pose.y], lookahead);
        let (s, c) = ego.pose.heading.sin_cos();
        let (dx, dy) = (goal[0] - ego.pose.x, goal[1] - ego.pose.y);
        let lateral = -s * dx + c * dy;
        let dist_sq = dx * dx + dy * dy;
        let steer = if dist_sq < 1e-12 {
            0.0
        } else {
            (2.0 * WHEELBASE * lateral / dist_sq).atan()
        };
        (steer.clamp(-MAX_STEER, MAX_STEER), accel)
    }
}

/// Point `lookahead` metres along `path` past the projection of `p`, extrapolating
/// the last segment beyond the path end.
fn point_ahead(path: &[[f64; 2]], p: [f64; 2], lookahead: f64) -> [f64; 2] {
    let segs: Vec<(usize, f64)> = path
        .windows(2)
        .enumerate()
        .map(|(i, w)| (i, (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])))
        .filter(|&(_, l)| l > 1e-9)
        .collect();
    if segs.is_empty() {
        return path[0];
    }
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for (k, &(i, len)) in segs.iter().enumerate() {
        let (a, b) = (path[i], path[i + 1]);
        let u = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
        let last = k + 1 == segs.len();
        let u = if last { u.max(0.0) } else { u.clamp(0.0, 1.0) };
        let q = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
        let dist = (p[0] - q[0]).hypot(p[1] - q[1]);
        if dist < best.0 {
            best = (dist, k, u * len);
        }
    }
    let (_, mut k, mut along) = best;
    let mut remaining = lookahead;
    loop {
        let (i, len) = segs[k];
        let (a, b) = (path[i], path[i + 1]);
        if k + 1 == segs.len() || along + remaining <= len {
            let u = (along + remaining) / len;
            return [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
        }
        remaining -= len - along;
        along = 0.0;
        k += 1;
    }
}

/// Controls for a freshly issued plan.
pub fn track(plan: &Trajectory, ego: &EgoState) -> (f64, f64) {
    PlanHold::new(plan, &ego.pose).control(ego)
}
