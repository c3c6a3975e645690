//! Run configuration and the stages of the end-to-end pipeline.
//!
//! Every stage is a pure function of the run configuration, its seed and the artifacts
//! of the previous stage, so re-running with the same inputs reproduces every file.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{short_hash, sub_seed};
use crate::error::{Error, Result};
use crate::geom::{fit_anchors, AnchorSet, TrajKind, Trajectory};
use crate::model::{AnchorClassifier, Context, DenoiserNet, Normalizer, Variant};
use crate::nn::checkpoint::Checkpoint;
use crate::sampling::{Policy, SamplerSettings};
use crate::schedule::ScheduleConfig;
use crate::training::{filter_dataset, label, train, DatasetFile, EpochLog, TrainConfig};
use crate::world::{
    collect_frames, evaluate, expert_plan, CollectConfig, EvalReport, PlanHold, RolloutConfig, Scenario, ScenarioKind,
    SuiteConfig, World,
};

pub const DEFAULT_N_ANCHOR: usize = 20;

/// Single flat configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: TrajKind,
    pub variant: Variant,
    /// Root seed; every stage derives its own stream from it. `train.seed` is ignored.
    pub seed: u64,
    pub n_anchor: usize,
    /// Scenario suite TOML; the built-in suite is used when absent.
    pub suite: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub sampler: SamplerSettings,
    pub collect: CollectConfig,
    pub rollout: RolloutConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: TrajKind::Geometric,
            variant: Variant::Bridge,
            seed: 0,
            n_anchor: DEFAULT_N_ANCHOR,
            suite: None,
            out_dir: PathBuf::from("runs"),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerSettings::default(),
            collect: CollectConfig::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.train.validate(&self.schedule)?;
        if self.n_anchor < 2 {
            return Err(Error::Config("n_anchor must be at least 2".into()));
        }
        for v in Variant::ALL {
            self.sampler.for_variant(v).validate()?;
        }
        Ok(())
    }

    /// Hash of the settings that determine artifact contents (paths excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.suite = None;
        short_hash(c.to_toml().as_bytes())
    }

    pub fn suite_config(&self) -> Result<SuiteConfig> {
        match &self.suite {
            Some(p) => SuiteConfig::from_toml(
                &std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read suite {}: {e}", p.display())))?,
            ),
            None => Ok(SuiteConfig::default()),
        }
    }

    /// Training settings with the seed derived from the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: sub_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }
}

/// Expert rollouts over every scenario kind, reduced by the redundancy filter.
pub fn generate_dataset(cfg: &RunConfig, suite: &SuiteConfig) -> Result<DatasetFile> {
    let frames = collect_frames(
        &ScenarioKind::ALL,
        suite,
        cfg.kind,
        &cfg.collect,
        sub_seed(cfg.seed, "data"),
    )?;
    let kept = filter_dataset(&frames, sub_seed(cfg.seed, "filter"));
    if kept.is_empty() {
        return Err(Error::Empty("filtered dataset".into()));
    }
    Ok(DatasetFile {
        kind: cfg.kind,
        n_point: kept[0].plan.n_point(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        records: kept.iter().map(|f| f.to_record()).collect(),
    })
}

pub fn fit_anchor_set(cfg: &RunConfig, data: &DatasetFile) -> Result<AnchorSet> {
    check_kind(cfg.kind, data.kind, "dataset")?;
    let trajs: Vec<Trajectory> = data.records.iter().map(|r| r.x0.clone()).collect();
    fit_anchors(&trajs, cfg.n_anchor, sub_seed(cfg.seed, "anchors"))
}

fn check_kind(expected: TrajKind, found: TrajKind, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::Mismatch(format!(
            "{what} is {found} but the run uses {expected}"
        )));
    }
    Ok(())
}

/// Trains `variant` and assembles the planning policy.
pub fn train_policy(
    cfg: &RunConfig,
    data: &DatasetFile,
    anchors: &AnchorSet,
    variant: Variant,
) -> Result<(Policy, Vec<EpochLog>)> {
    check_kind(cfg.kind, data.kind, "dataset")?;
    check_kind(cfg.kind, anchors.kind, "anchor set")?;
    let samples = label(&data.records, anchors)?;
    let out = train(&samples, anchors, variant, &cfg.schedule, &cfg.train_config())?;
    let policy = Policy {
        variant,
        denoiser: out.denoiser,
        classifier: out.classifier,
        anchors: variant.uses_anchors().then(|| anchors.clone()),
        schedule: cfg.schedule,
        sampler: cfg.sampler.for_variant(variant),
        t_trunc: cfg.train.t_trunc,
    };
    policy.validate()?;
    Ok((policy, out.log))
}

pub fn evaluate_policy(cfg: &RunConfig, policy: &Policy, suite: &SuiteConfig) -> Result<EvalReport> {
    evaluate(&suite.scenarios()?, policy, &cfg.rollout)
}

/// Generate, fit, train and evaluate in memory.
pub fn run_pipeline(cfg: &RunConfig, variant: Variant) -> Result<EvalReport> {
    let suite = cfg.suite_config()?;
    let data = generate_dataset(cfg, &suite)?;
    let anchors = fit_anchor_set(cfg, &data)?;
    let (policy, _) = train_policy(cfg, &data, &anchors, variant)?;
    evaluate_policy(cfg, &policy, &suite)
}

/// Planner conditioning after the expert has driven `scenario` for `tick` ticks.
pub fn scenario_context(
    cfg: &RunConfig,
    suite: &SuiteConfig,
    kind: ScenarioKind,
    scenario_seed: u64,
    tick: usize,
) -> Result<Context> {
    let mut world = World::new(Scenario::generate(kind, scenario_seed, suite)?);
    let mut hold: Option<PlanHold> = None;
    while world.tick < tick {
        if !world.is_running() {
            return Err(Error::Config(format!("the episode ended at tick {}", world.tick)));
        }
        if hold.is_none() || world.tick % cfg.rollout.replan_every == 0 {
            hold = Some(PlanHold::new(&expert_plan(&world, cfg.kind), &world.ego.pose));
        }
        if let Some(h) = hold.as_mut() {
            let (steer, accel) = h.control(&world.ego);
            h.age += 1;
            world.step(steer, accel);
        }
    }
    Ok(world.context())
}

pub const REPORT_VERSION: u32 = 1;

/// An evaluation report together with the provenance of the policy it scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub kind: TrajKind,
    pub variant: Variant,
    pub report: EvalReport,
}

impl ReportFile {
    pub fn new(cfg: &RunConfig, variant: Variant, report: EvalReport) -> Self {
        Self {
            schema_version: REPORT_VERSION,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            kind: cfg.kind,
            variant,
            report,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if f.schema_version != REPORT_VERSION {
            return Err(Error::Parse(format!(
                "report schema version {} is not supported",
                f.schema_version
            )));
        }
        Ok(f)
    }
}

/// Hash identifying an anchor set's contents.
pub fn anchors_hash(anchors: &AnchorSet) -> String {
    short_hash(anchors.to_text("").as_bytes())
}

fn list(v: &[usize]) -> String {
    v.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            w.parse()
                .map_err(|_| Error::Checkpoint(format!("bad width list `{s}`")))
        })
        .collect()
}

fn parse<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck.header_value(key)?;
    v.parse()
        .map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{key}`")))
}

fn push_norm(ck: &mut Checkpoint, name: &str, n: &Normalizer) {
    ck.push(format!("{name}.mean"), vec![n.mean.len()], n.mean.clone());
    ck.push(format!("{name}.std"), vec![n.std.len()], n.std.clone());
}

fn load_norm(ck: &Checkpoint, name: &str) -> Result<Normalizer> {
    Ok(Normalizer {
        mean: ck.blob(&format!("{name}.mean"))?.data.clone(),
        std: ck.blob(&format!("{name}.std"))?.data.clone(),
    })
}

/// Serializes a trained policy. The anchor set itself is stored separately; only its
/// hash is recorded.
pub fn policy_to_checkpoint(policy: &Policy, config_hash: &str, seed: u64) -> Checkpoint {
    let mut ck = Checkpoint::default();
    let s = &policy.schedule;
    let den = &policy.denoiser;
    let widths = den.mlp.widths();
    ck.set_header("variant", policy.variant);
    ck.set_header("kind", den.kind);
    ck.set_header("n_point", den.n_point);
    ck.set_header("denoiser_hidden", list(&widths[1..widths.len() - 1]));
    ck.set_header("beta_d", s.beta_d);
    ck.set_header("beta_min", s.beta_min);
    ck.set_header("t_max", s.t_max);
    ck.set_header("t_eps", s.t_eps);
    ck.set_header("gamma_clip", s.gamma_clip);
    ck.set_header("t_trunc", policy.t_trunc);
    ck.set_header("config_hash", config_hash);
    ck.set_header("seed", seed);
    ck.push_module("denoiser", &den.mlp);
    push_norm(&mut ck, "state_norm", &den.state_norm);
    push_norm(&mut ck, "context_norm", &den.context_norm);
    if let (Some(phi), Some(anchors)) = (&policy.classifier, &policy.anchors) {
        let w = phi.trunk.widths();
        ck.set_header("n_anchor", phi.n_anchor());
        ck.set_header("classifier_hidden", list(&w[1..w.len() - 1]));
        ck.set_header("classifier_features", w[w.len() - 1]);
        ck.set_header("anchors_hash", anchors_hash(anchors));
        ck.push_module("classifier", phi);
    }
    ck
}

/// Rebuilds a policy; anchor variants need the anchor set the checkpoint was trained with.
pub fn policy_from_checkpoint(
    ck: &Checkpoint,
    anchors: Option<&AnchorSet>,
    sampler: &SamplerSettings,
) -> Result<Policy> {
    let variant: Variant = parse(ck, "variant")?;
    let kind: TrajKind = parse(ck, "kind")?;
    let n_point: usize = parse(ck, "n_point")?;
    let schedule = ScheduleConfig {
        beta_d: parse(ck, "beta_d")?,
        beta_min: parse(ck, "beta_min")?,
        t_max: parse(ck, "t_max")?,
        t_eps: parse(ck, "t_eps")?,
        gamma_clip: parse(ck, "gamma_clip")?,
    };
    schedule.validate()?;
    // Parameters are overwritten below; the RNG only fills placeholders.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut denoiser = DenoiserNet::new(
        kind,
        n_point,
        &parse_list(ck.header_value("denoiser_hidden")?)?,
        variant.uses_anchors(),
        load_norm(ck, "state_norm")?,
        load_norm(ck, "context_norm")?,
        schedule.t_max,
        &mut rng,
    )?;
    ck.load_module("denoiser", &mut denoiser.mlp)?;
    let (classifier, anchors) = if variant.uses_anchors() {
        let anchors =
            anchors.ok_or_else(|| Error::Mismatch(format!("the {variant} checkpoint needs its anchor set")))?;
        check_kind(kind, anchors.kind, "anchor set")?;
        let expected = ck.header_value("anchors_hash")?;
        if anchors_hash(anchors) != expected {
            return Err(Error::Mismatch(format!(
                "anchor set hash {} differs from the checkpoint's {expected}",
                anchors_hash(anchors)
            )));
        }
        let mut phi = AnchorClassifier::new(
            parse(ck, "n_anchor")?,
            &parse_list(ck.header_value("classifier_hidden")?)?,
            parse(ck, "classifier_features")?,
            denoiser.context_norm.clone(),
            &mut rng,
        )?;
        ck.load_module("classifier", &mut phi)?;
        (Some(phi), Some(anchors.clone()))
    } else {
        (None, None)
    };
    let policy = Policy {
        variant,
        denoiser,
        classifier,
        anchors,
        schedule,
        sampler: sampler.for_variant(variant),
        t_trunc: parse(ck, "t_trunc")?,
    };
    policy.validate()?;
    Ok(policy)
}
