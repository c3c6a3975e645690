//! Trajectory representations, ego-frame transforms and the K-means anchor vocabulary.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_text_artifact, write_text_artifact, TextHeader};
use crate::error::{Error, Result};

pub const GEOMETRIC_N_POINT: usize = 10;
pub const TEMPORAL_N_POINT: usize = 8;
/// Arc-length spacing of geometric waypoints, metres.
pub const GEOMETRIC_SPACING: f64 = 1.0;
/// Time spacing of temporal waypoints, seconds.
pub const TEMPORAL_SPACING: f64 = 0.25;

const KMEANS_MAX_ITERS: usize = 200;
const ANCHOR_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajKind {
    Geometric,
    Temporal,
}

impl TrajKind {
    pub fn default_n_point(self) -> usize {
        match self {
            TrajKind::Geometric => GEOMETRIC_N_POINT,
            TrajKind::Temporal => TEMPORAL_N_POINT,
        }
    }

    /// Metres for geometric, seconds for temporal.
    pub fn spacing(self) -> f64 {
        match self {
            TrajKind::Geometric => GEOMETRIC_SPACING,
            TrajKind::Temporal => TEMPORAL_SPACING,
        }
    }

    pub fn has_speed(self) -> bool {
        matches!(self, TrajKind::Geometric)
    }

    /// Length of the flattened diffusion state: `2 * n_point`, plus one speed channel if geometric.
    pub fn state_dim(self, n_point: usize) -> usize {
        2 * n_point + usize::from(self.has_speed())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrajKind::Geometric => "geometric",
            TrajKind::Temporal => "temporal",
        }
    }
}

impl fmt::Display for TrajKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrajKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" | "geo" => Ok(TrajKind::Geometric),
            "temporal" | "temp" => Ok(TrajKind::Temporal),
            other => Err(Error::Parse(format!("unknown representation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }
}

/// World frame to ego frame: translate by the ego position, then rotate by `-heading`.
pub fn to_ego_frame(points: &[[f64; 2]], ego: &Pose) -> Vec<[f64; 2]> {
    let (s, c) = ego.heading.sin_cos();
    points
        .iter()
        .map(|p| {
            let dx = p[0] - ego.x;
            let dy = p[1] - ego.y;
            [c * dx + s * dy, -s * dx + c * dy]
        })
        .collect()
}

pub fn from_ego_frame(points: &[[f64; 2]], ego: &Pose) -> Vec<[f64; 2]> {
    let (s, c) = ego.heading.sin_cos();
    points
        .iter()
        .map(|p| [ego.x + c * p[0] - s * p[1], ego.y + s * p[0] + c * p[1]])
        .collect()
}

/// A planned or ground-truth trajectory in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: TrajKind,
    pub points: Vec<[f64; 2]>,
    /// Present iff `kind` is geometric.
    pub speed: Option<f64>,
}

impl Trajectory {
    pub fn geometric(points: Vec<[f64; 2]>, speed: f64) -> Self {
        Self {
            kind: TrajKind::Geometric,
            points,
            speed: Some(speed),
        }
    }

    pub fn temporal(points: Vec<[f64; 2]>) -> Self {
        Self {
            kind: TrajKind::Temporal,
            points,
            speed: None,
        }
    }

    pub fn n_point(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.has_speed() != self.speed.is_some() {
            return Err(Error::Shape(format!(
                "{} trajectory with speed {:?}",
                self.kind, self.speed
            )));
        }
        if !self.points.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("trajectory coordinate".into()));
        }
        if let Some(v) = self.speed {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonFinite(format!("trajectory speed {v}")));
            }
        }
        Ok(())
    }

    /// Waypoints flattened as `x1 y1 x2 y2 ...`.
    pub fn flat_points(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    /// Diffusion state: flattened waypoints followed by the speed channel when geometric.
    pub fn to_state(&self) -> Vec<f64> {
        let mut v = self.flat_points();
        if let Some(s) = self.speed {
            v.push(s);
        }
        v
    }

    /// Inverse of [`Trajectory::to_state`]. Negative decoded speeds are clamped to zero.
    pub fn from_state(kind: TrajKind, state: &[f64]) -> Result<Self> {
        let extra = usize::from(kind.has_speed());
        if state.len() < extra || (state.len() - extra) % 2 != 0 {
            return Err(Error::Shape(format!(
                "state of length {} is not a {kind} trajectory",
                state.len()
            )));
        }
        let n = (state.len() - extra) / 2;
        let points = (0..n).map(|i| [state[2 * i], state[2 * i + 1]]).collect();
        let speed = kind.has_speed().then(|| state[2 * n].max(0.0));
        Ok(Self { kind, points, speed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub index: usize,
    pub points: Vec<[f64; 2]>,
    /// Cluster-mean speed for geometric anchors; `0` for temporal anchors.
    pub speed: f64,
}

impl Anchor {
    pub fn flat_points(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn to_state(&self, kind: TrajKind) -> Vec<f64> {
        let mut v = self.flat_points();
        if kind.has_speed() {
            v.push(self.speed);
        }
        v
    }

    pub fn to_trajectory(&self, kind: TrajKind) -> Trajectory {
        Trajectory {
            kind,
            points: self.points.clone(),
            speed: kind.has_speed().then_some(self.speed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub kind: TrajKind,
    pub anchors: Vec<Anchor>,
    pub seed: u64,
    /// Within-cluster sum of squared distances on the fitting data.
    pub inertia: f64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn n_point(&self) -> usize {
        self.anchors.first().map_or(0, |a| a.points.len())
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim(self.n_point())
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchors.len() < 2 {
            return Err(Error::Config("an anchor set needs at least 2 anchors".into()));
        }
        let n = self.n_point();
        for (i, a) in self.anchors.iter().enumerate() {
            if a.index != i || a.points.len() != n {
                return Err(Error::Shape(format!("anchor {i} is malformed")));
            }
            if !(a.speed >= 0.0 && a.speed.is_finite()) {
                return Err(Error::NonFinite(format!("anchor {i} speed {}", a.speed)));
            }
        }
        for i in 0..self.anchors.len() {
            for j in i + 1..self.anchors.len() {
                if self.anchors[i].points == self.anchors[j].points {
                    return Err(Error::Config(format!("anchors {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the versioned plain-text anchor table.
    pub fn to_text(&self, config_hash: &str) -> String {
        let mut header = TextHeader::new("anchors", ANCHOR_FILE_VERSION);
        header
            .set("config_hash", config_hash)
            .set("seed", self.seed)
            .set("kind", self.kind)
            .set("n_point", self.n_point())
            .set("n_anchor", self.len())
            .set("inertia", crate::artifact::fmt_f64(self.inertia))
            .set("columns", "index speed x1 y1 ... xN yN");
        let rows: Vec<Vec<f64>> = self
            .anchors
            .iter()
            .map(|a| {
                let mut row = vec![a.index as f64, a.speed];
                row.extend(a.flat_points());
                row
            })
            .collect();
        write_text_artifact(&header, &rows)
    }

    /// Parses an anchor table; returns the set and the config hash it was written with.
    pub fn from_text(text: &str) -> Result<(Self, String)> {
        let (header, rows) = read_text_artifact(text, "anchors", ANCHOR_FILE_VERSION)?;
        let kind: TrajKind = header.get("kind")?.parse()?;
        let n_point: usize = header.parse("n_point")?;
        let n_anchor: usize = header.parse("n_anchor")?;
        if rows.len() != n_anchor {
            return Err(Error::Parse(format!(
                "header announces {n_anchor} anchors, found {}",
                rows.len()
            )));
        }
        let anchors = rows
            .iter()
            .map(|row| {
                if row.len() != 2 + 2 * n_point {
                    return Err(Error::Parse(format!("anchor row of width {}", row.len())));
                }
                Ok(Anchor {
                    index: row[0] as usize,
                    speed: row[1],
                    points: row[2..].chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let set = AnchorSet {
            kind,
            anchors,
            seed: header.parse("seed")?,
            inertia: header.parse("inertia")?,
        };
        set.validate()?;
        Ok((set, header.get("config_hash")?.to_string()))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Sum of squared distances of every point to its assigned center.
pub fn inertia(points: &[Vec<f64>], centers: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &k)| sq_dist(p, &centers[k]))
        .sum()
}

/// Output of plain Lloyd's K-means on flat vectors.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's K-means with k-means++ seeding.
///
/// Runs until the assignment reaches a fixpoint or `KMEANS_MAX_ITERS` iterations.
/// An empty cluster is re-seeded from the point farthest from its current center
/// (lowest index on ties), which keeps the procedure deterministic.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || points.len() < k {
        return Err(Error::Config(format!(
            "cannot fit {k} clusters to {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let first = rng.random_range(0..points.len());
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > r && *d > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers).0).collect();
    let mut last_inertia = f64::INFINITY;
    let mut iterations = 0;
    for iter in 0..KMEANS_MAX_ITERS {
        iterations = iter + 1;
        // update step
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .map(|i| (i, sq_dist(&points[i], &centers[assignment[i]])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                centers[c] = points[far.0].clone();
                assignment[far.0] = c;
            }
        }
        let current = inertia(points, &centers, &assignment);
        debug_assert!(
            current <= last_inertia * (1.0 + 1e-12) + 1e-12,
            "k-means inertia increased: {last_inertia} -> {current}"
        );
        last_inertia = current;

        // assignment step
        let next: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = inertia(points, &centers, &assignment);
    Ok(KMeansFit {
        centers,
        assignment,
        inertia,
        iterations,
    })
}

/// Fits the anchor vocabulary by K-means over flattened waypoints.
///
/// The data is put in a canonical order before seeding, so the result does not depend
/// on dataset order. Anchors are returned sorted lexicographically by their waypoints.
pub fn fit_anchors(dataset: &[Trajectory], n_anchor: usize, seed: u64) -> Result<AnchorSet> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Empty("anchor fitting dataset".into()))?;
    let kind = first.kind;
    let n_point = first.n_point();
    if n_anchor < 2 {
        return Err(Error::Config("n_anchor must be at least 2".into()));
    }
    for t in dataset {
        if t.kind != kind || t.n_point() != n_point {
            return Err(Error::Shape("anchor dataset mixes trajectory shapes".into()));
        }
        t.validate()?;
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let keyed: Vec<Vec<f64>> = dataset.iter().map(|t| t.to_state()).collect();
    order.sort_by(|&i, &j| lex_cmp(&keyed[i], &keyed[j]));
    let points: Vec<Vec<f64>> = order.iter().map(|&i| dataset[i].flat_points()).collect();
    let speeds: Vec<f64> = order.iter().map(|&i| dataset[i].speed.unwrap_or(0.0)).collect();

    let fit = kmeans(&points, n_anchor, seed)?;

    let mut speed_sum = vec![0.0; n_anchor];
    let mut counts = vec![0usize; n_anchor];
    for (&a, &v) in fit.assignment.iter().zip(&speeds) {
        speed_sum[a] += v;
        counts[a] += 1;
    }
    let mut clusters: Vec<(Vec<f64>, f64)> = fit
        .centers
        .iter()
        .enumerate()
        .map(|(c, center)| {
            let speed = if kind.has_speed() && counts[c] > 0 {
                speed_sum[c] / counts[c] as f64
            } else {
                0.0
            };
            (center.clone(), speed)
        })
        .collect();
    clusters.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    let anchors = clusters
        .into_iter()
        .enumerate()
        .map(|(index, (center, speed))| Anchor {
            index,
            points: center.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            speed,
        })
        .collect();
    let set = AnchorSet {
        kind,
        anchors,
        seed,
        inertia: fit.inertia,
    };
    set.validate()?;
    Ok(set)
}

/// Index of the anchor closest in L2 over flattened waypoints; lowest index wins ties.
pub fn nearest_anchor(traj: &Trajectory, anchors: &AnchorSet) -> Result<usize> {
    if traj.kind != anchors.kind || traj.n_point() != anchors.n_point() {
        return Err(Error::Shape(format!(
            "{} trajectory with {} points vs {} anchors with {} points",
            traj.kind,
            traj.n_point(),
            anchors.kind,
            anchors.n_point()
        )));
    }
    let flat = traj.flat_points();
    let mut best = (0, f64::INFINITY);
    for a in &anchors.anchors {
        let d = sq_dist(&flat, &a.flat_points());
        if d < best.1 {
            best = (a.index, d);
        }
    }
    Ok(best.0)
}

/// Cumulative arc length of a polyline.
pub fn arc_lengths(polyline: &[[f64; 2]]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(polyline.len());
    for (i, p) in polyline.iter().enumerate() {
        if i > 0 {
            let q = polyline[i - 1];
            acc += (p[0] - q[0]).hypot(p[1] - q[1]);
        }
        out.push(acc);
    }
    out
}

/// Points at the given arc lengths along `polyline`, clamped to its ends.
pub fn resample_at(polyline: &[[f64; 2]], distances: &[f64]) -> Vec<[f64; 2]> {
    if polyline.is_empty() {
        return vec![[0.0, 0.0]; distances.len()];
    }
    let cum = arc_lengths(polyline);
    let total = *cum.last().unwrap();
    distances
        .iter()
        .map(|&d| {
            if total <= 0.0 || d <= 0.0 {
                return polyline[0];
            }
            if d >= total {
                return *polyline.last().unwrap();
            }
            let seg = cum.partition_point(|&c| c <= d).clamp(1, polyline.len() - 1);
            let (c0, c1) = (cum[seg - 1], cum[seg]);
            let w = if c1 > c0 { (d - c0) / (c1 - c0) } else { 0.0 };
            let (p, q) = (polyline[seg - 1], polyline[seg]);
            [p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])]
        })
        .collect()
}

/// Converts a geometric plan into temporal waypoints under constant speed.
///
/// The polyline runs from the ego origin through the plan's waypoints; point `k` sits at
/// arc length `v * 0.25 s * k`, clamped at the path end.
pub fn temporal_from_plan(traj: &Trajectory, n_out: usize) -> Result<Trajectory> {
    let speed = match (traj.kind, traj.speed) {
        (TrajKind::Geometric, Some(v)) => v.max(0.0),
        _ => {
            return Err(Error::Shape(
                "temporal_from_plan expects a geometric trajectory with speed".into(),
            ))
        }
    };
    let mut polyline = Vec::with_capacity(traj.points.len() + 1);
    polyline.push([0.0, 0.0]);
    polyline.extend_from_slice(&traj.points);
    let distances: Vec<f64> = (1..=n_out).map(|k| speed * TEMPORAL_SPACING * k as f64).collect();
    Ok(Trajectory::temporal(resample_at(&polyline, &distances)))
}
