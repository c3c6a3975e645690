//! Training for the bridge policy and the two diffusion baselines, plus dataset filtering and IO.
//!
//! Losses are measured in the denoiser's normalised coordinates.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::artifact::{read_text_artifact, sub_seed, write_text_artifact, TextHeader};
use crate::error::{Error, Result};
use crate::geom::{nearest_anchor, AnchorSet, TrajKind, Trajectory};
use crate::model::{argmax_lowest, AnchorClassifier, Context, DenoiserNet, Normalizer, Variant, CONTEXT_WIDTH};
use crate::nn::{softmax, AdamW, AdamWConfig, Gradients, LrSchedule};
use crate::schedule::{alpha_sigma_unchecked, coeffs_impl, ScheduleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Upper end of the truncated baseline's time range.
    pub t_trunc: f64,
    pub w_diffusion: f64,
    pub w_classification: f64,
    pub lr: LrSchedule,
    pub weight_decay: f64,
    pub denoiser_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub classifier_features: usize,
    /// Standardise states and contexts with dataset statistics.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            t_trunc: 0.3,
            w_diffusion: 1.0,
            w_classification: 1.0,
            lr: LrSchedule::default(),
            weight_decay: 0.01,
            denoiser_hidden: vec![256, 256, 256],
            classifier_hidden: vec![128, 128],
            classifier_features: 64,
            normalize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sched: &ScheduleConfig) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.t_trunc > sched.t_eps && self.t_trunc < sched.t_max) {
            return Err(Error::Config(format!(
                "t_trunc {} must lie in ({}, {})",
                self.t_trunc, sched.t_eps, sched.t_max
            )));
        }
        if !(self.w_diffusion >= 0.0 && self.w_classification >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.denoiser_hidden.contains(&0) || self.classifier_hidden.contains(&0) || self.classifier_features == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// A ground-truth trajectory with its context, before anchor labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub x0: Trajectory,
    pub z: Context,
    /// Free grouping label; the data generator stores the scenario kind here.
    pub group: u32,
}

/// A labelled training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x0: Trajectory,
    pub z: Context,
    pub anchor_index: usize,
}

impl Sample {
    pub fn labelled(x0: Trajectory, z: Context, anchors: &AnchorSet) -> Result<Self> {
        let anchor_index = nearest_anchor(&x0, anchors)?;
        Ok(Self { x0, z, anchor_index })
    }
}

pub fn label(records: &[Record], anchors: &AnchorSet) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| Sample::labelled(r.x0.clone(), r.z, anchors))
        .collect()
}

fn sample_time<R: Rng + ?Sized>(variant: Variant, sched: &ScheduleConfig, t_trunc: f64, rng: &mut R) -> f64 {
    let hi = match variant {
        Variant::Truncated => t_trunc,
        Variant::Bridge | Variant::Full => sched.t_max,
    };
    sched.t_eps + (hi - sched.t_eps) * rng.random::<f64>()
}

/// Forward corruption used by each training recipe.
///
/// * bridge: `a_t y + b_t x0 + c_t eps`
/// * full: `alpha_t x0 + sigma_t eps`
/// * truncated: `alpha_t y + sigma_t eps`
pub fn corrupt(variant: Variant, sched: &ScheduleConfig, t: f64, x0: &[f64], y: &[f64], eps: &[f64], out: &mut [f64]) {
    match variant {
        Variant::Bridge => {
            let co = coeffs_impl(sched, t, true);
            for i in 0..out.len() {
                out[i] = co.a * y[i] + co.b * x0[i] + co.c * eps[i];
            }
        }
        Variant::Full => {
            let (al, si) = alpha_sigma_unchecked(sched, t);
            for i in 0..out.len() {
                out[i] = al * x0[i] + si * eps[i];
            }
        }
        Variant::Truncated => {
            let (al, si) = alpha_sigma_unchecked(sched, t);
            for i in 0..out.len() {
                out[i] = al * y[i] + si * eps[i];
            }
        }
    }
}

/// Mean squared denoising error and its parameter gradient over normalised rows.
///
/// `y` holds the anchor (normalised) per row; it is ignored for the full-diffusion variant.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss_batch<R: Rng + ?Sized>(
    net: &DenoiserNet,
    variant: Variant,
    sched: &ScheduleConfig,
    t_trunc: f64,
    x0: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let d = net.state_dim();
    let n = x0.nrows();
    if n == 0 || x0.ncols() != d || y.dim() != (n, d) || z.dim() != (n, CONTEXT_WIDTH) {
        return Err(Error::Shape("training batch shapes disagree with the denoiser".into()));
    }
    if net.anchor_input == matches!(variant, Variant::Full) {
        return Err(Error::Config(format!(
            "denoiser anchor input does not fit the {variant} variant"
        )));
    }
    let mut input = Array2::zeros((n, net.input_width()));
    let mut eps = vec![0.0; d];
    let mut xt = vec![0.0; d];
    for (i, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
        let t = sample_time(variant, sched, t_trunc, rng);
        eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        let (x0_i, y_i) = (x0.row(i), y.row(i));
        let (x0_s, y_s) = (x0_i.as_slice().unwrap(), y_i.as_slice().unwrap());
        corrupt(variant, sched, t, x0_s, y_s, &eps, &mut xt);
        net.write_input(row.as_slice_mut().unwrap(), &xt, t, y_s, z.row(i).as_slice().unwrap());
    }
    let (out, tape) = net.forward_inputs(input.view())?;
    let diff = &out - &x0;
    let scale = 1.0 / (n * d) as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() * scale;
    let dout = diff * (2.0 * scale);
    let (grads, _) = net.mlp.backward(&tape, dout.view())?;
    Ok((loss, grads))
}

fn single_row(v: Vec<f64>) -> Array2<f64> {
    let n = v.len();
    Array2::from_shape_vec((1, n), v).unwrap()
}

fn sample_rows(net: &DenoiserNet, sample: &Sample, y: &[f64]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    (
        single_row(net.state_norm.normalize(&sample.x0.to_state())),
        single_row(net.state_norm.normalize(y)),
        single_row(net.context_norm.normalize(&sample.z.encode())),
    )
}

fn anchor_state(sample: &Sample, anchors: &AnchorSet) -> Result<Vec<f64>> {
    let a = anchors.anchors.get(sample.anchor_index).ok_or_else(|| {
        Error::Shape(format!(
            "anchor index {} out of range for {} anchors",
            sample.anchor_index,
            anchors.len()
        ))
    })?;
    Ok(a.to_state(anchors.kind))
}

/// One bridge training draw for a single sample.
pub fn bridge_loss_step<R: Rng + ?Sized>(
    net: &DenoiserNet,
    sample: &Sample,
    anchors: &AnchorSet,
    sched: &ScheduleConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let (x0, y, z) = sample_rows(net, sample, &anchor_state(sample, anchors)?);
    diffusion_loss_batch(
        net,
        Variant::Bridge,
        sched,
        cfg.t_trunc,
        x0.view(),
        y.view(),
        z.view(),
        rng,
    )
}

/// One truncated-baseline training draw for a single sample.
pub fn truncated_loss_step<R: Rng + ?Sized>(
    net: &DenoiserNet,
    sample: &Sample,
    anchors: &AnchorSet,
    sched: &ScheduleConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let (x0, y, z) = sample_rows(net, sample, &anchor_state(sample, anchors)?);
    diffusion_loss_batch(
        net,
        Variant::Truncated,
        sched,
        cfg.t_trunc,
        x0.view(),
        y.view(),
        z.view(),
        rng,
    )
}

/// One full-diffusion training draw for a single sample.
pub fn full_diffusion_loss_step<R: Rng + ?Sized>(
    net: &DenoiserNet,
    sample: &Sample,
    sched: &ScheduleConfig,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let zeros = vec![0.0; net.state_dim()];
    let (x0, _, z) = sample_rows(net, sample, &zeros);
    let y = Array2::zeros(x0.raw_dim());
    diffusion_loss_batch(
        net,
        Variant::Full,
        sched,
        cfg.t_trunc,
        x0.view(),
        y.view(),
        z.view(),
        rng,
    )
}

/// Mean cross-entropy, number of correct argmax predictions and gradients.
pub fn classifier_loss_batch(
    phi: &AnchorClassifier,
    z: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, usize, Gradients)> {
    let n = z.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::Shape("classifier batch and labels disagree".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= phi.n_anchor()) {
        return Err(Error::Shape(format!("label {bad} out of range")));
    }
    let (logits, feats, tape) = phi.forward_batch(z)?;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i).to_vec();
        let p = softmax(&row);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        if argmax_lowest(&row) == label {
            correct += 1;
        }
        for (j, pj) in p.iter().enumerate() {
            dlogits[[i, j]] = (pj - f64::from(u8::from(j == label))) / n as f64;
        }
    }
    let grads = phi.backward(&tape, &feats, dlogits.view())?;
    Ok((loss / n as f64, correct, grads))
}

/// Cross-entropy of the classifier against the sample's anchor label.
pub fn classifier_loss_step(phi: &AnchorClassifier, sample: &Sample, anchors: &AnchorSet) -> Result<(f64, Gradients)> {
    if phi.n_anchor() != anchors.len() {
        return Err(Error::Shape("classifier and anchor set sizes differ".into()));
    }
    let z = single_row(phi.context_norm.normalize(&sample.z.encode()));
    let (loss, _, g) = classifier_loss_batch(phi, z.view(), &[sample.anchor_index])?;
    Ok((loss, g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub diffusion_loss: f64,
    pub classifier_loss: f64,
    pub classifier_accuracy: f64,
    pub lr: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,diffusion_loss,classifier_loss,classifier_accuracy,lr\n");
    for e in log {
        s.push_str(&format!(
            "{},{:.9e},{:.9e},{:.6},{:.9e}\n",
            e.epoch, e.diffusion_loss, e.classifier_loss, e.classifier_accuracy, e.lr
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub denoiser: DenoiserNet,
    /// Absent for the full-diffusion variant, which never consults anchors.
    pub classifier: Option<AnchorClassifier>,
    pub log: Vec<EpochLog>,
}

/// Mini-batch AdamW on the joint denoiser / classifier objective.
///
/// Seeds for initialisation, shuffling and noise are derived from `cfg.seed`, so equal
/// inputs give bit-identical parameters.
pub fn train(
    dataset: &[Sample],
    anchors: &AnchorSet,
    variant: Variant,
    sched: &ScheduleConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate(sched)?;
    sched.validate()?;
    anchors.validate()?;
    let first = dataset.first().ok_or_else(|| Error::Empty("training dataset".into()))?;
    let kind = first.x0.kind;
    let n_point = first.x0.n_point();
    if kind != anchors.kind || n_point != anchors.n_point() {
        return Err(Error::Mismatch(format!(
            "dataset is {kind} with {n_point} points, anchors are {} with {}",
            anchors.kind,
            anchors.n_point()
        )));
    }
    let d = kind.state_dim(n_point);
    let mut states = Vec::with_capacity(dataset.len());
    let mut contexts = Vec::with_capacity(dataset.len());
    for s in dataset {
        if s.x0.kind != kind || s.x0.n_point() != n_point {
            return Err(Error::Mismatch("mixed representations in dataset".into()));
        }
        if s.anchor_index >= anchors.len() {
            return Err(Error::Shape(format!("anchor index {} out of range", s.anchor_index)));
        }
        states.push(s.x0.to_state());
        contexts.push(s.z.encode());
    }
    let (state_norm, context_norm) = if cfg.normalize {
        (Normalizer::fit(&states)?, Normalizer::fit(&contexts)?)
    } else {
        (Normalizer::identity(d), Normalizer::identity(CONTEXT_WIDTH))
    };

    let n = dataset.len();
    let anchor_rows: Vec<Vec<f64>> = anchors
        .anchors
        .iter()
        .map(|a| state_norm.normalize(&a.to_state(kind)))
        .collect();
    let mut x0 = Array2::zeros((n, d));
    let mut y = Array2::zeros((n, d));
    let mut z = Array2::zeros((n, CONTEXT_WIDTH));
    for i in 0..n {
        x0.row_mut(i)
            .assign(&ndarray::aview1(&state_norm.normalize(&states[i])));
        y.row_mut(i)
            .assign(&ndarray::aview1(&anchor_rows[dataset[i].anchor_index]));
        z.row_mut(i)
            .assign(&ndarray::aview1(&context_norm.normalize(&contexts[i])));
    }
    let labels: Vec<usize> = dataset.iter().map(|s| s.anchor_index).collect();

    let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "init"));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "shuffle"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "noise"));

    let mut denoiser = DenoiserNet::new(
        kind,
        n_point,
        &cfg.denoiser_hidden,
        variant.uses_anchors(),
        state_norm,
        context_norm.clone(),
        sched.t_max,
        &mut init_rng,
    )?;
    let mut classifier = if variant.uses_anchors() {
        Some(AnchorClassifier::new(
            anchors.len(),
            &cfg.classifier_hidden,
            cfg.classifier_features,
            context_norm,
            &mut init_rng,
        )?)
    } else {
        None
    };
    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut opt_d = AdamW::new(&denoiser.mlp, adam);
    let mut opt_c = classifier.as_ref().map(|c| AdamW::new(c, adam));

    let batch = cfg.batch_size.min(n);
    let n_batches = n.div_ceil(batch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut dl_sum, mut cl_sum, mut correct) = (0.0, 0.0, 0usize);
        let mut lr = cfg.lr.lr0;
        for (b, idx) in order.chunks(batch).enumerate() {
            lr = cfg.lr.lr_at(epoch as f64 + b as f64 / n_batches as f64);
            let bx = x0.select(Axis(0), idx);
            let by = y.select(Axis(0), idx);
            let bz = z.select(Axis(0), idx);
            let (loss, mut g) = diffusion_loss_batch(
                &denoiser,
                variant,
                sched,
                cfg.t_trunc,
                bx.view(),
                by.view(),
                bz.view(),
                &mut noise_rng,
            )?;
            if !loss.is_finite() || !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "diffusion loss {loss} at epoch {epoch}, batch {b}"
                )));
            }
            g.scale(cfg.w_diffusion);
            opt_d.step(&mut denoiser.mlp, &g, lr)?;
            dl_sum += loss * idx.len() as f64;

            if let (Some(phi), Some(opt)) = (classifier.as_mut(), opt_c.as_mut()) {
                let bl: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let (closs, ok, mut g) = classifier_loss_batch(phi, bz.view(), &bl)?;
                if !closs.is_finite() || !g.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "classifier loss {closs} at epoch {epoch}, batch {b}"
                    )));
                }
                g.scale(cfg.w_classification);
                opt.step(phi, &g, lr)?;
                cl_sum += closs * idx.len() as f64;
                correct += ok;
            }
        }
        let has_cls = classifier.is_some();
        log.push(EpochLog {
            epoch: epoch + 1,
            diffusion_loss: dl_sum / n as f64,
            classifier_loss: if has_cls { cl_sum / n as f64 } else { 0.0 },
            classifier_accuracy: if has_cls { correct as f64 / n as f64 } else { 0.0 },
            lr,
        });
    }
    Ok(TrainOutput {
        denoiser,
        classifier,
        log,
    })
}

/// A time-ordered frame as seen by [`filter_dataset`].
pub trait FilterFrame {
    /// Frames with different sequence ids are never compared.
    fn sequence(&self) -> u64;
    fn target_speed(&self) -> f64;
    /// Planned waypoints in the ego frame.
    fn waypoints(&self) -> &[[f64; 2]];
}

pub const SPEED_CHANGE: f64 = 0.1;
pub const BEARING_CHANGE_DEG: f64 = 0.5;
pub const RESIDUAL_KEEP: f64 = 0.14;

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}

/// Whether each frame trips a change threshold against its predecessor in the same sequence.
pub fn threshold_trips<F: FilterFrame>(frames: &[F]) -> Vec<bool> {
    let limit = BEARING_CHANGE_DEG.to_radians();
    let mut out = vec![false; frames.len()];
    for i in 1..frames.len() {
        let (prev, cur) = (&frames[i - 1], &frames[i]);
        if prev.sequence() != cur.sequence() {
            continue;
        }
        let speed = (cur.target_speed() - prev.target_speed()).abs() > SPEED_CHANGE;
        let (pw, cw) = (prev.waypoints(), cur.waypoints());
        let bearing = pw.len() != cw.len()
            || pw
                .iter()
                .zip(cw)
                .any(|(p, c)| wrap_angle(c[1].atan2(c[0]) - p[1].atan2(p[0])).abs() > limit);
        out[i] = speed || bearing;
    }
    out
}

/// Indices kept by the redundancy filter, in input order.
///
/// Frames that trip a threshold are kept; from the rest exactly `round(0.14 n)` are drawn
/// without replacement using `seed`.
pub fn filter_indices<F: FilterFrame>(frames: &[F], seed: u64) -> Vec<usize> {
    let trips = threshold_trips(frames);
    let residual: Vec<usize> = (0..frames.len()).filter(|&i| !trips[i]).collect();
    let n_keep = (RESIDUAL_KEEP * residual.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = trips;
    for j in rand::seq::index::sample(&mut rng, residual.len(), n_keep) {
        keep[residual[j]] = true;
    }
    (0..frames.len()).filter(|&i| keep[i]).collect()
}

pub fn filter_dataset<F: FilterFrame + Clone>(frames: &[F], seed: u64) -> Vec<F> {
    filter_indices(frames, seed)
        .into_iter()
        .map(|i| frames[i].clone())
        .collect()
}

pub const DATASET_VERSION: u32 = 1;

/// A dataset file's header fields and records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub kind: TrajKind,
    pub n_point: usize,
    pub config_hash: String,
    pub seed: u64,
    pub records: Vec<Record>,
}

impl DatasetFile {
    /// Rows are `group, state..., context...`.
    pub fn to_text(&self) -> String {
        let mut h = TextHeader::new("dataset", DATASET_VERSION);
        h.set("kind", self.kind)
            .set("n_point", self.n_point)
            .set("state_dim", self.kind.state_dim(self.n_point))
            .set("context_width", CONTEXT_WIDTH)
            .set("records", self.records.len())
            .set("config_hash", &self.config_hash)
            .set("seed", self.seed);
        let rows: Vec<Vec<f64>> = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![f64::from(r.group)];
                row.extend(r.x0.to_state());
                row.extend(r.z.encode());
                row
            })
            .collect();
        write_text_artifact(&h, &rows)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, rows) = read_text_artifact(text, "dataset", DATASET_VERSION)?;
        let kind: TrajKind = h.get("kind")?.parse()?;
        let n_point: usize = h.parse("n_point")?;
        let d = kind.state_dim(n_point);
        if h.parse::<usize>("state_dim")? != d || h.parse::<usize>("context_width")? != CONTEXT_WIDTH {
            return Err(Error::Mismatch("dataset widths do not match this build".into()));
        }
        let expected: usize = h.parse("records")?;
        if rows.len() != expected {
            return Err(Error::Parse(format!(
                "dataset declares {expected} records, found {}",
                rows.len()
            )));
        }
        let records = rows
            .iter()
            .map(|row| {
                if row.len() != 1 + d + CONTEXT_WIDTH {
                    return Err(Error::Parse(format!("dataset row of width {}", row.len())));
                }
                Ok(Record {
                    group: row[0] as u32,
                    x0: Trajectory::from_state(kind, &row[1..1 + d])?,
                    z: Context::decode(&row[1 + d..])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            n_point,
            config_hash: h.get("config_hash")?.to_string(),
            seed: h.parse("seed")?,
            records,
        })
    }
}
