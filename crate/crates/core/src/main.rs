use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use clap::{Parser, Subcommand};

use anchorbridge::artifact::sub_seed;
use anchorbridge::geom::{AnchorSet, TrajKind, Trajectory};
use anchorbridge::model::Variant;
use anchorbridge::nn::checkpoint::Checkpoint;
use anchorbridge::pipeline::{
    fit_anchor_set, generate_dataset, policy_from_checkpoint, policy_to_checkpoint, scenario_context, train_policy,
    ReportFile, RunConfig,
};
use anchorbridge::render::render_frames;
use anchorbridge::sampling::{Policy, Trace};
use anchorbridge::training::{log_to_csv, DatasetFile};
use anchorbridge::world::{evaluate, ScenarioKind, SuiteConfig};

const LOSS_LOG_VERSION: u32 = 1;

/// Anchor-guided diffusion-bridge planning on a toy driving benchmark.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the expert over the scenario kinds and write the filtered dataset.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<out_dir>/dataset.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the K-means anchor vocabulary to a dataset.
    FitAnchors {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to `<out_dir>/anchors.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one planner variant and write its checkpoint and loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Required by the bridge and truncated variants.
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Overrides the variant in the config.
        #[arg(long)]
        variant: Option<Variant>,
        /// Defaults to `<out_dir>/<variant>.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to `<out_dir>/<variant>_loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Plan once at a scenario state and print the trajectory as JSON.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long, default_value = "lane-fork")]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 1000)]
        scenario_seed: u64,
        /// The expert drives this many ticks before the plan is taken.
        #[arg(long, default_value_t = 0)]
        tick: usize,
        /// Also write every solver state to this CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a checkpoint closed-loop over the scenario suite.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Overrides the suite in the config.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Defaults to `<out_dir>/<variant>_report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one SVG per solver state of a plan trace.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        ensure!(p.exists(), "{} does not exist", p.display());
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    require(&[path])?;
    let cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = &cfg.suite {
        require(&[s.as_path()])?;
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn warn_hash(what: &str, found: &str, cfg: &RunConfig) {
    let expected = cfg.hash();
    if found != expected {
        eprintln!("warning: {what} was written with config {found}, current config is {expected}");
    }
}

fn load_anchors(path: &Path, cfg: &RunConfig) -> Result<AnchorSet> {
    let (set, hash) = AnchorSet::from_text(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    warn_hash("anchor set", &hash, cfg);
    ensure!(
        set.kind == cfg.kind,
        "anchor set is {} but the config uses {}",
        set.kind,
        cfg.kind
    );
    Ok(set)
}

fn load_policy(cfg: &RunConfig, checkpoint: &Path, anchors: Option<&Path>) -> Result<Policy> {
    let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let ck = Checkpoint::from_bytes(&bytes).with_context(|| format!("parsing {}", checkpoint.display()))?;
    warn_hash("checkpoint", ck.header_value("config_hash")?, cfg);
    let kind: TrajKind = ck.header_value("kind")?.parse()?;
    ensure!(
        kind == cfg.kind,
        "checkpoint is {kind} but the config uses {}",
        cfg.kind
    );
    let set = anchors.map(|p| load_anchors(p, cfg)).transpose()?;
    Ok(policy_from_checkpoint(&ck, set.as_ref(), &cfg.sampler)?)
}

fn trajectory_json(t: &Trajectory) -> serde_json::Value {
    serde_json::json!({
        "kind": t.kind,
        "points": t.points,
        "speed": t.speed,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out } => {
            let cfg = load_config(&config)?;
            let suite = cfg.suite_config()?;
            let data = generate_dataset(&cfg, &suite)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("dataset.txt"));
            write(&out, data.to_text())?;
            eprintln!("{} records -> {}", data.records.len(), out.display());
        }
        Command::FitAnchors { config, dataset, out } => {
            let cfg = load_config(&config)?;
            require(&[&dataset])?;
            let data = DatasetFile::from_text(&read(&dataset)?)?;
            warn_hash("dataset", &data.config_hash, &cfg);
            let set = fit_anchor_set(&cfg, &data)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("anchors.txt"));
            write(&out, set.to_text(&cfg.hash()))?;
            eprintln!(
                "{} anchors, inertia {:.6e} -> {}",
                set.len(),
                set.inertia,
                out.display()
            );
        }
        Command::Train {
            config,
            dataset,
            anchors,
            variant,
            out,
            log,
        } => {
            let cfg = load_config(&config)?;
            let variant = variant.unwrap_or(cfg.variant);
            require(&[&dataset])?;
            let data = DatasetFile::from_text(&read(&dataset)?)?;
            warn_hash("dataset", &data.config_hash, &cfg);
            let set = match (&anchors, variant.uses_anchors()) {
                (Some(p), _) => {
                    require(&[p])?;
                    load_anchors(p, &cfg)?
                }
                (None, true) => bail!("the {variant} variant needs --anchors"),
                (None, false) => fit_anchor_set(&cfg, &data)?,
            };
            let (policy, epochs) = train_policy(&cfg, &data, &set, variant)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("{variant}.ckpt")));
            let log = log.unwrap_or_else(|| cfg.out_dir.join(format!("{variant}_loss.csv")));
            write(&out, policy_to_checkpoint(&policy, &cfg.hash(), cfg.seed).to_bytes())?;
            let header = format!(
                "# version={LOSS_LOG_VERSION} variant={variant} config_hash={} seed={}\n",
                cfg.hash(),
                cfg.seed
            );
            write(&log, header + &log_to_csv(&epochs))?;
            if let Some(last) = epochs.last() {
                eprintln!(
                    "{variant}: {} epochs, diffusion loss {:.4e}, classifier accuracy {:.3} -> {}",
                    last.epoch,
                    last.diffusion_loss,
                    last.classifier_accuracy,
                    out.display()
                );
            }
        }
        Command::Plan {
            config,
            checkpoint,
            anchors,
            scenario,
            scenario_seed,
            tick,
            trace,
        } => {
            let cfg = load_config(&config)?;
            require(&[&checkpoint])?;
            if let Some(a) = &anchors {
                require(&[a])?;
            }
            let policy = load_policy(&cfg, &checkpoint, anchors.as_deref())?;
            let suite = cfg.suite_config()?;
            let z = scenario_context(&cfg, &suite, scenario, scenario_seed, tick)?;
            let noise_seed = sub_seed(cfg.seed, "plan");
            let (traj, mut tr): (Trajectory, Trace) = policy.plan_traced(&z, noise_seed)?;
            if let Some(path) = trace {
                tr.config_hash = cfg.hash();
                tr.seed = cfg.seed;
                write(&path, tr.to_csv())?;
            }
            let text = serde_json::to_string_pretty(&trajectory_json(&traj))?;
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = writeln!(stdout, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
        Command::Eval {
            config,
            checkpoint,
            anchors,
            suite,
            out,
        } => {
            let cfg = load_config(&config)?;
            require(&[&checkpoint])?;
            for p in anchors.iter().chain(suite.iter()) {
                require(&[p])?;
            }
            let policy = load_policy(&cfg, &checkpoint, anchors.as_deref())?;
            let suite_cfg = match &suite {
                Some(p) => SuiteConfig::from_toml(&read(p)?)?,
                None => cfg.suite_config()?,
            };
            let report = evaluate(&suite_cfg.scenarios()?, &policy, &cfg.rollout)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join(format!("{}_report.json", policy.variant)));
            let file = ReportFile::new(&cfg, policy.variant, report);
            write(&out, file.to_json())?;
            let r = &file.report;
            eprintln!(
                "{} episodes: SR {:.1} DS {:.2} efficiency {:.1} comfort {:.1} -> {}",
                r.episodes,
                r.success_rate,
                r.driving_score,
                r.efficiency,
                r.comfort,
                out.display()
            );
        }
        Command::Render { trace, out } => {
            require(&[&trace])?;
            let tr = Trace::from_csv(&read(&trace)?)?;
            let frames = render_frames(&tr)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (k, svg) in frames.iter().enumerate() {
                write(&out.join(format!("frame_{k:03}.svg")), svg)?;
            }
            eprintln!("{} frames -> {}", frames.len(), out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
