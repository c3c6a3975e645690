use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::control::PlanHold;
use super::expert::{expert_plan, ExpertPlanner};
use super::scenario::{Scenario, ScenarioKind};
use super::sim::{Infraction, Status, World};
use super::DT;
use crate::artifact::{fmt_f64, sub_seed};
use crate::error::{Error, Result};
use crate::geom::{TrajKind, Trajectory, TEMPORAL_SPACING};
use crate::model::Context;
use crate::sampling::Policy;
use crate::training::{FilterFrame, Record};

/// Jerk bound of a comfortable tick, m/s^3.
pub const COMFORT_JERK: f64 = 6.0;
/// Acceleration bound of a comfortable tick, m/s^2.
pub const COMFORT_ACCEL: f64 = 3.0;

/// One planning request issued during a rollout.
#[derive(Debug, Clone, Copy)]
pub struct PlanQuery<'a> {
    pub world: &'a World,
    pub context: Context,
    pub noise_seed: u64,
}

/// Anything that turns planning requests into ego-frame trajectories.
pub trait Planner {
    fn kind(&self) -> TrajKind;

    /// One plan per query, in order.
    fn plan(&self, queries: &[PlanQuery<'_>]) -> Result<Vec<Trajectory>>;
}

impl Planner for ExpertPlanner {
    fn kind(&self) -> TrajKind {
        self.kind
    }

    fn plan(&self, queries: &[PlanQuery<'_>]) -> Result<Vec<Trajectory>> {
        Ok(queries.iter().map(|q| expert_plan(q.world, self.kind)).collect())
    }
}

impl Planner for Policy {
    fn kind(&self) -> TrajKind {
        Policy::kind(self)
    }

    fn plan(&self, queries: &[PlanQuery<'_>]) -> Result<Vec<Trajectory>> {
        let contexts: Vec<Context> = queries.iter().map(|q| q.context).collect();
        let seeds: Vec<u64> = queries.iter().map(|q| q.noise_seed).collect();
        self.plan_batch(&contexts, &seeds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Physics ticks between planner calls.
    pub replan_every: usize,
    pub record_trace: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            replan_every: 10,
            record_trace: false,
        }
    }
}

/// Ego state after one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub steer: f64,
    pub s: f64,
    pub d: f64,
}

impl TraceRow {
    fn of(w: &World) -> Self {
        let (s, d) = w.ego_route();
        let e = &w.ego;
        Self {
            tick: w.tick,
            x: e.pose.x,
            y: e.pose.y,
            heading: e.pose.heading,
            speed: e.speed,
            accel: e.accel,
            steer: e.steer,
            s,
            d,
        }
    }

    pub fn to_csv(rows: &[TraceRow]) -> String {
        let mut out = String::from("tick,x,y,heading,speed,accel,steer,s,d\n");
        for r in rows {
            let vals = [r.x, r.y, r.heading, r.speed, r.accel, r.steer, r.s, r.d];
            let cols: Vec<String> = vals.iter().map(|v| fmt_f64(*v)).collect();
            out.push_str(&format!("{},{}\n", r.tick, cols.join(",")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub status: Status,
    pub success: bool,
    pub completion: f64,
    pub infractions: Vec<Infraction>,
    pub driving_score: f64,
    pub efficiency: f64,
    pub comfort: f64,
    pub ticks: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostic: Option<String>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Default)]
struct Meter {
    speed_sum: f64,
    comfortable: usize,
    ticks: usize,
    prev_accel: Option<f64>,
}

impl Meter {
    fn record(&mut self, w: &World) {
        let a = w.ego.accel;
        let jerk = self.prev_accel.map_or(0.0, |p| (a - p) / DT);
        self.prev_accel = Some(a);
        self.speed_sum += w.ego.speed;
        self.ticks += 1;
        if jerk.abs() < COMFORT_JERK && a.abs() < COMFORT_ACCEL {
            self.comfortable += 1;
        }
    }
}

fn finish(w: &World, m: &Meter, diagnostic: Option<String>, trace: Vec<TraceRow>) -> EpisodeResult {
    let completion = w.completion();
    let penalty: f64 = w.infractions.iter().map(|i| i.kind.penalty()).product();
    let (efficiency, comfort) = if m.ticks == 0 {
        (0.0, 100.0)
    } else {
        let n = m.ticks as f64;
        (
            (m.speed_sum / n / w.scenario.cruise_speed * 100.0).min(100.0),
            m.comfortable as f64 / n * 100.0,
        )
    };
    let success = w.status == Status::Completed && w.infractions.is_empty() && completion >= 1.0;
    EpisodeResult {
        kind: w.scenario.kind,
        seed: w.scenario.seed,
        status: w.status,
        success,
        completion,
        infractions: w.infractions.clone(),
        driving_score: (100.0 * completion * penalty).clamp(0.0, 100.0),
        efficiency,
        comfort,
        ticks: w.tick,
        diagnostic,
        trace,
    }
}

fn noise_seed(sc: &Scenario, tick: usize) -> u64 {
    sub_seed(sc.seed, &format!("plan:{}:{tick}", sc.kind))
}

struct Episode {
    world: World,
    hold: Option<PlanHold>,
    meter: Meter,
    trace: Vec<TraceRow>,
    diagnostic: Option<String>,
}

/// Calls the planner for every index in `due`; a failing batch is retried query by query
/// so that only the offending episodes fail.
fn plan_due(planner: &dyn Planner, eps: &mut [Episode], due: &[usize]) {
    if due.is_empty() {
        return;
    }
    let queries: Vec<PlanQuery<'_>> = due
        .iter()
        .map(|&i| PlanQuery {
            world: &eps[i].world,
            context: eps[i].world.context(),
            noise_seed: noise_seed(&eps[i].world.scenario, eps[i].world.tick),
        })
        .collect();
    let plans: Vec<Result<Trajectory>> = match planner.plan(&queries) {
        Ok(p) if p.len() == queries.len() => p.into_iter().map(Ok).collect(),
        _ => queries
            .iter()
            .map(|q| {
                planner
                    .plan(std::slice::from_ref(q))
                    .and_then(|mut v| v.pop().ok_or_else(|| Error::Empty("planner returned no plan".into())))
            })
            .collect(),
    };
    drop(queries);
    for (&i, plan) in due.iter().zip(plans) {
        let ep = &mut eps[i];
        match plan.and_then(|p| p.validate().map(|_| p)) {
            Ok(p) => ep.hold = Some(PlanHold::new(&p, &ep.world.ego.pose)),
            Err(e) => {
                ep.world.status = Status::Failed;
                ep.diagnostic = Some(format!("planner error at tick {}: {e}", ep.world.tick));
            }
        }
    }
}

/// Runs all scenarios in lockstep, batching planner calls across episodes.
pub fn run_episodes(scenarios: &[Scenario], planner: &dyn Planner, cfg: &RolloutConfig) -> Vec<EpisodeResult> {
    let every = cfg.replan_every.max(1);
    let mut eps: Vec<Episode> = scenarios
        .iter()
        .map(|sc| Episode {
            world: World::new(sc.clone()),
            hold: None,
            meter: Meter::default(),
            trace: Vec::new(),
            diagnostic: None,
        })
        .collect();
    loop {
        let running: Vec<usize> = (0..eps.len()).filter(|&i| eps[i].world.is_running()).collect();
        if running.is_empty() {
            break;
        }
        let due: Vec<usize> = running
            .iter()
            .copied()
            .filter(|&i| eps[i].world.tick % every == 0 || eps[i].hold.is_none())
            .collect();
        plan_due(planner, &mut eps, &due);
        for &i in &running {
            let ep = &mut eps[i];
            let Some(hold) = ep.hold.as_mut() else { continue };
            if !ep.world.is_running() {
                continue;
            }
            let (steer, accel) = hold.control(&ep.world.ego);
            hold.age += 1;
            ep.world.step(steer, accel);
            ep.meter.record(&ep.world);
            if cfg.record_trace {
                ep.trace.push(TraceRow::of(&ep.world));
            }
        }
    }
    eps.into_iter()
        .map(|ep| finish(&ep.world, &ep.meter, ep.diagnostic, ep.trace))
        .collect()
}

/// Runs one episode to termination.
pub fn rollout(scenario: &Scenario, planner: &dyn Planner, cfg: &RolloutConfig) -> EpisodeResult {
    run_episodes(std::slice::from_ref(scenario), planner, cfg)
        .pop()
        .expect("one episode")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub kind: ScenarioKind,
    pub episodes: usize,
    pub driving_score: f64,
    pub success_rate: f64,
    pub efficiency: f64,
    pub comfort: f64,
}

/// Aggregate closed-loop metrics, all in [0, 100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub driving_score: f64,
    pub success_rate: f64,
    pub efficiency: f64,
    pub comfort: f64,
    pub groups: Vec<GroupReport>,
    pub results: Vec<EpisodeResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl EvalReport {
    /// Aggregates episode results; the input order does not matter.
    pub fn from_results(mut results: Vec<EpisodeResult>) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Empty("evaluation suite".into()));
        }
        results.sort_by_key(|r| (r.kind, r.seed));
        let summary = |rs: &[&EpisodeResult]| {
            (
                mean(rs.iter().map(|r| r.driving_score)),
                mean(rs.iter().map(|r| if r.success { 100.0 } else { 0.0 })),
                mean(rs.iter().map(|r| r.efficiency)),
                mean(rs.iter().map(|r| r.comfort)),
            )
        };
        let mut by_kind: BTreeMap<ScenarioKind, Vec<&EpisodeResult>> = BTreeMap::new();
        for r in &results {
            by_kind.entry(r.kind).or_default().push(r);
        }
        let groups = by_kind
            .into_iter()
            .map(|(kind, rs)| {
                let (ds, sr, eff, comfort) = summary(&rs);
                GroupReport {
                    kind,
                    episodes: rs.len(),
                    driving_score: ds,
                    success_rate: sr,
                    efficiency: eff,
                    comfort,
                }
            })
            .collect();
        let all: Vec<&EpisodeResult> = results.iter().collect();
        let (ds, sr, eff, comfort) = summary(&all);
        Ok(Self {
            episodes: results.len(),
            driving_score: ds,
            success_rate: sr,
            efficiency: eff,
            comfort,
            groups,
            results,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn evaluate(scenarios: &[Scenario], planner: &dyn Planner, cfg: &RolloutConfig) -> Result<EvalReport> {
    if scenarios.is_empty() {
        return Err(Error::Empty("evaluation suite".into()));
    }
    EvalReport::from_results(run_episodes(scenarios, planner, cfg))
}

/// Expert demonstration frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Episode index; frames of one episode share it.
    pub sequence: u64,
    pub kind: ScenarioKind,
    pub tick: usize,
    pub plan: Trajectory,
    pub context: Context,
}

impl Frame {
    pub fn to_record(&self) -> Record {
        Record {
            x0: self.plan.clone(),
            z: self.context,
            group: self.kind.index(),
        }
    }
}

impl FilterFrame for Frame {
    fn sequence(&self) -> u64 {
        self.sequence
    }

    fn target_speed(&self) -> f64 {
        match self.plan.speed {
            Some(v) => v,
            None => {
                let p = self.plan.points[0];
                p[0].hypot(p[1]) / TEMPORAL_SPACING
            }
        }
    }

    fn waypoints(&self) -> &[[f64; 2]] {
        &self.plan.points
    }
}

/// Settings of expert data collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub episodes_per_kind: usize,
    /// Std of the steering perturbation added to executed controls, rad.
    pub steer_noise: f64,
    /// Std of the acceleration perturbation, m/s^2.
    pub accel_noise: f64,
    pub record_every: usize,
    pub replan_every: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes_per_kind: 150,
            steer_noise: 0.05,
            accel_noise: 0.4,
            record_every: 5,
            replan_every: 10,
        }
    }
}

/// Scenario seeds used for data collection; disjoint from evaluation suites in practice.
pub fn collection_seed(seed: u64, kind: ScenarioKind, episode: usize) -> u64 {
    sub_seed(seed, &format!("collect:{kind}:{episode}"))
}

/// Rolls out the expert with perturbed execution and records clean expert labels.
///
/// The perturbation is drawn once per planning period and held; frames are recorded every
/// `record_every` ticks while the episode runs.
pub fn collect_frames(
    kinds: &[ScenarioKind],
    suite: &super::SuiteConfig,
    traj: TrajKind,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Vec<Frame>> {
    if cfg.record_every == 0 || cfg.replan_every == 0 {
        return Err(Error::Config("record_every and replan_every must be positive".into()));
    }
    let steer_n = Normal::new(0.0, cfg.steer_noise).map_err(|e| Error::Config(e.to_string()))?;
    let accel_n = Normal::new(0.0, cfg.accel_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Vec::new();
    let mut sequence = 0u64;
    for &kind in kinds {
        for ep in 0..cfg.episodes_per_kind {
            let sc_seed = collection_seed(seed, kind, ep);
            let mut world = World::new(Scenario::generate(kind, sc_seed, suite)?);
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(sc_seed, "perturbation"));
            let mut hold = PlanHold::new(&expert_plan(&world, traj), &world.ego.pose);
            let mut noise = (0.0, 0.0);
            while world.is_running() {
                if world.tick % cfg.replan_every == 0 {
                    hold = PlanHold::new(&expert_plan(&world, traj), &world.ego.pose);
                    noise = (steer_n.sample(&mut rng), accel_n.sample(&mut rng));
                }
                if world.tick % cfg.record_every == 0 {
                    frames.push(Frame {
                        sequence,
                        kind,
                        tick: world.tick,
                        plan: expert_plan(&world, traj),
                        context: world.context(),
                    });
                }
                let (steer, accel) = hold.control(&world.ego);
                hold.age += 1;
                world.step(steer + noise.0, accel + noise.1);
            }
            sequence += 1;
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::filter_dataset;
    use crate::world::{SuiteConfig, MAX_ACCEL};

    struct Brake;

    impl Planner for Brake {
        fn kind(&self) -> TrajKind {
            TrajKind::Geometric
        }

        fn plan(&self, q: &[PlanQuery<'_>]) -> Result<Vec<Trajectory>> {
            Ok(q.iter()
                .map(|_| Trajectory::geometric(vec![[0.0, 0.0]; 10], 0.0))
                .collect())
        }
    }

    /// Fails for one scenario seed only.
    struct Picky(u64);

    impl Planner for Picky {
        fn kind(&self) -> TrajKind {
            TrajKind::Geometric
        }

        fn plan(&self, q: &[PlanQuery<'_>]) -> Result<Vec<Trajectory>> {
            if q.iter().any(|q| q.world.scenario.seed == self.0) {
                return Err(Error::Config("refused".into()));
            }
            ExpertPlanner {
                kind: TrajKind::Geometric,
            }
            .plan(q)
        }
    }

    fn suite(seed_count: u64) -> Vec<Scenario> {
        SuiteConfig {
            seed_count,
            ..SuiteConfig::default()
        }
        .scenarios()
        .unwrap()
    }

    #[test]
    fn expert_solves_the_shipped_suite() {
        let scenarios = suite(20);
        for kind in [TrajKind::Geometric, TrajKind::Temporal] {
            let report = evaluate(&scenarios, &ExpertPlanner { kind }, &RolloutConfig::default()).unwrap();
            let failed: Vec<_> = report
                .results
                .iter()
                .filter(|r| !r.success)
                .map(|r| (r.kind, r.seed, r.status, r.infractions.clone()))
                .collect();
            assert!(failed.is_empty(), "{kind}: {failed:?}");
            assert_eq!(report.success_rate, 100.0);
            assert_eq!(report.driving_score, 100.0);
        }
    }

    #[test]
    fn braking_planner_stays_put_without_collisions() {
        let report = evaluate(&suite(2), &Brake, &RolloutConfig::default()).unwrap();
        for r in &report.results {
            assert!(r.completion < 0.05, "{r:?}");
            assert!(r.infractions.is_empty());
            assert_eq!(r.status, Status::Timeout);
        }
        assert_eq!(report.success_rate, 0.0);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let sc = &suite(1)[3];
        let cfg = RolloutConfig {
            record_trace: true,
            ..Default::default()
        };
        let p = ExpertPlanner {
            kind: TrajKind::Temporal,
        };
        let a = rollout(sc, &p, &cfg);
        let b = rollout(sc, &p, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), a.ticks);
        assert!(TraceRow::to_csv(&a.trace).lines().count() == a.ticks + 1);
    }

    #[test]
    fn failing_queries_are_isolated() {
        let scenarios = suite(2);
        let report = evaluate(&scenarios, &Picky(1001), &RolloutConfig::default()).unwrap();
        for r in &report.results {
            if r.seed == 1001 {
                assert_eq!(r.status, Status::Failed);
                assert!(r.diagnostic.as_deref().unwrap().contains("refused"));
            } else {
                assert!(r.success, "{r:?}");
            }
        }
    }

    #[test]
    fn aggregates_match_recomputation() {
        let report = evaluate(&suite(2), &Brake, &RolloutConfig::default()).unwrap();
        let n = report.results.len() as f64;
        let ds: f64 = report.results.iter().map(|r| r.driving_score).sum::<f64>() / n;
        assert!((report.driving_score - ds).abs() < 1e-12);
        let mut shuffled = report.results.clone();
        shuffled.reverse();
        assert_eq!(EvalReport::from_results(shuffled).unwrap(), report);
        for g in &report.groups {
            assert_eq!(g.episodes, 2);
        }
        let back = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back.to_json(), report.to_json());
        for r in &report.results {
            for m in [r.driving_score, r.efficiency, r.comfort] {
                assert!((0.0..=100.0).contains(&m));
            }
        }
    }

    #[test]
    fn empty_suite_is_an_error() {
        assert!(evaluate(&[], &Brake, &RolloutConfig::default()).is_err());
        assert!(EvalReport::from_results(Vec::new()).is_err());
    }

    #[test]
    fn collected_data_is_plentiful_after_filtering() {
        let s = SuiteConfig::default();
        let cfg = CollectConfig::default();
        for kind in ScenarioKind::ALL {
            let frames = collect_frames(&[kind], &s, TrajKind::Geometric, &cfg, 0).unwrap();
            let kept = filter_dataset(&frames, 0);
            assert!(kept.len() >= 500, "{kind}: {} of {}", kept.len(), frames.len());
        }
    }

    #[test]
    fn brake_limit_is_respected() {
        let sc = &suite(1)[0];
        let r = rollout(
            sc,
            &Brake,
            &RolloutConfig {
                record_trace: true,
                ..Default::default()
            },
        );
        assert!(r.trace.iter().all(|t| t.accel >= -MAX_ACCEL - 1e-9));
    }
}
