//! Denoiser and anchor-classifier heads over the flat toy context.
//!
//! # Context encoding
//!
//! [`Context::encode`] writes a fixed-width vector of [`CONTEXT_WIDTH`] entries, in order:
//!
//! | index   | field                                                        |
//! |---------|--------------------------------------------------------------|
//! | 0       | ego speed, m/s                                               |
//! | 1, 2    | target point, ego frame, m                                   |
//! | 3       | lane offset (lateral offset from the rightmost lane centre), m |
//! | 4       | heading error w.r.t. the route direction, rad                |
//! | 5 + 5k  | obstacle slot `k`: rel. x, rel. y (m), rel. vx, rel. vy (m/s), present flag |
//! | 25      | stop flag                                                    |
//!
//! Absent obstacle slots are all zeros. Slots are filled nearest first.
//!
//! # Denoiser input
//!
//! `concat(x_t, x_T, z, time_embedding(t))`, all in normalised units. The full-diffusion
//! variant writes zeros in the `x_T` block.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{AnchorSet, TrajKind};
use crate::nn::{softmax, Activation, Gradients, Mlp, Module, ParamSpec, Tape};

pub const K_OBS: usize = 4;
pub const SLOT_WIDTH: usize = 5;
pub const CONTEXT_WIDTH: usize = 5 + K_OBS * SLOT_WIDTH + 1;
pub const TIME_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObstacleSlot {
    pub rel_pos: [f64; 2],
    pub rel_vel: [f64; 2],
    pub present: bool,
}

/// Planner conditioning vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Context {
    pub ego_speed: f64,
    pub target_point: [f64; 2],
    pub lane_offset: f64,
    pub heading_error: f64,
    pub obstacles: [ObstacleSlot; K_OBS],
    pub stop_flag: bool,
}

impl Context {
    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(CONTEXT_WIDTH);
        v.extend([
            self.ego_speed,
            self.target_point[0],
            self.target_point[1],
            self.lane_offset,
            self.heading_error,
        ]);
        for s in &self.obstacles {
            if s.present {
                v.extend([s.rel_pos[0], s.rel_pos[1], s.rel_vel[0], s.rel_vel[1], 1.0]);
            } else {
                v.extend([0.0; SLOT_WIDTH]);
            }
        }
        v.push(f64::from(u8::from(self.stop_flag)));
        v
    }

    pub fn decode(v: &[f64]) -> Result<Self> {
        if v.len() != CONTEXT_WIDTH {
            return Err(Error::Shape(format!(
                "context of width {}, expected {CONTEXT_WIDTH}",
                v.len()
            )));
        }
        let mut obstacles = [ObstacleSlot::default(); K_OBS];
        for (k, slot) in obstacles.iter_mut().enumerate() {
            let s = &v[5 + k * SLOT_WIDTH..5 + (k + 1) * SLOT_WIDTH];
            if s[4] > 0.5 {
                *slot = ObstacleSlot {
                    rel_pos: [s[0], s[1]],
                    rel_vel: [s[2], s[3]],
                    present: true,
                };
            }
        }
        Ok(Self {
            ego_speed: v[0],
            target_point: [v[1], v[2]],
            lane_offset: v[3],
            heading_error: v[4],
            obstacles,
            stop_flag: v[CONTEXT_WIDTH - 1] > 0.5,
        })
    }
}

/// Sinusoidal features of the diffusion time on a geometric frequency ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    /// `dim / 2` frequencies from `pi / (2 T)` doubling upward, so the slowest component
    /// is monotone over `[0, T]` and the fastest resolves steps of ~`T / 2^(dim/2)`.
    pub fn new(dim: usize, t_max: f64) -> Self {
        let base = std::f64::consts::FRAC_PI_2 / t_max;
        Self {
            freqs: (0..dim / 2).map(|k| base * 2f64.powi(k as i32)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        for (k, w) in self.freqs.iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            out[2 * k] = s;
            out[2 * k + 1] = c;
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.embed_into(t, &mut v);
        v
    }
}

/// Per-dimension affine standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub const STD_FLOOR: f64 = 1e-2;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Empty("normalizer data".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // Constant dimensions are centred but left unscaled.
        let std = var
            .into_iter()
            .map(|v| {
                let s = v.sqrt();
                if s < 1e-9 {
                    1.0
                } else {
                    s.max(Self::STD_FLOOR)
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }
}

/// Which training / sampling recipe a policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Diffusion bridge between the selected anchor and the plan.
    Bridge,
    /// Conditional diffusion from Gaussian noise; no anchor input.
    Full,
    /// Truncated diffusion from a noised anchor.
    Truncated,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Bridge, Variant::Full, Variant::Truncated];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bridge => "bridge",
            Variant::Full => "full",
            Variant::Truncated => "truncated",
        }
    }

    pub fn uses_anchors(self) -> bool {
        !matches!(self, Variant::Full)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge" => Ok(Variant::Bridge),
            "full" => Ok(Variant::Full),
            "truncated" => Ok(Variant::Truncated),
            other => Err(Error::Parse(format!("unknown variant `{other}`"))),
        }
    }
}

/// The denoiser `x_theta(x_t, t, x_T, z)`, predicting the clean trajectory directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub mlp: Mlp,
    pub kind: TrajKind,
    pub n_point: usize,
    /// When false the anchor block of the input is zeroed (full-diffusion ablation).
    pub anchor_input: bool,
    pub state_norm: Normalizer,
    pub context_norm: Normalizer,
    pub time_embedding: TimeEmbedding,
}

impl DenoiserNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: TrajKind,
        n_point: usize,
        hidden: &[usize],
        anchor_input: bool,
        state_norm: Normalizer,
        context_norm: Normalizer,
        t_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d = kind.state_dim(n_point);
        if state_norm.dim() != d || context_norm.dim() != CONTEXT_WIDTH {
            return Err(Error::Shape("normalizer widths do not match the model".into()));
        }
        let mut widths = vec![2 * d + CONTEXT_WIDTH + TIME_EMBED_DIM];
        widths.extend_from_slice(hidden);
        widths.push(d);
        Ok(Self {
            mlp: Mlp::new(&widths, Activation::Gelu, true, rng)?,
            kind,
            n_point,
            anchor_input,
            state_norm,
            context_norm,
            time_embedding: TimeEmbedding::new(TIME_EMBED_DIM, t_max),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim(self.n_point)
    }

    pub fn input_width(&self) -> usize {
        self.mlp.n_in()
    }

    /// Writes one network input row from normalised state, anchor and context.
    pub fn write_input(&self, row: &mut [f64], x_t: &[f64], t: f64, x_end: &[f64], z: &[f64]) {
        let d = self.state_dim();
        row[..d].copy_from_slice(x_t);
        if self.anchor_input {
            row[d..2 * d].copy_from_slice(x_end);
        } else {
            row[d..2 * d].iter_mut().for_each(|v| *v = 0.0);
        }
        row[2 * d..2 * d + CONTEXT_WIDTH].copy_from_slice(z);
        self.time_embedding.embed_into(t, &mut row[2 * d + CONTEXT_WIDTH..]);
    }

    /// Batched prediction in normalised units. `z` is the normalised context per row.
    pub fn predict_normalized(
        &self,
        x_t: ArrayView2<'_, f64>,
        t: &[f64],
        x_end: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        let d = self.state_dim();
        let n = x_t.nrows();
        if x_t.ncols() != d || x_end.dim() != (n, d) || z.dim() != (n, CONTEXT_WIDTH) || t.len() != n {
            return Err(Error::Shape("denoiser batch shapes disagree".into()));
        }
        let mut input = Array2::zeros((n, self.input_width()));
        for (i, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            self.write_input(
                row.as_slice_mut().unwrap(),
                x_t.row(i).as_slice().unwrap(),
                t[i],
                x_end.row(i).as_slice().unwrap(),
                z.row(i).as_slice().unwrap(),
            );
        }
        self.mlp.predict_batch(input.view())
    }

    /// Forward pass with tape over pre-built input rows (training path).
    pub fn forward_inputs(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.mlp.forward_batch(input)
    }

    /// `x_hat_0` in metres (and m/s for the speed channel) from metric inputs.
    pub fn denoise(&self, x_t: &[f64], t: f64, x_end: &[f64], z: &Context) -> Result<Vec<f64>> {
        let d = self.state_dim();
        if x_t.len() != d || x_end.len() != d {
            return Err(Error::Shape(format!(
                "denoiser expects states of length {d}, got {} and {}",
                x_t.len(),
                x_end.len()
            )));
        }
        let xt = self.state_norm.normalize(x_t);
        let xe = self.state_norm.normalize(x_end);
        let zn = self.context_norm.normalize(&z.encode());
        let mut row = vec![0.0; self.input_width()];
        self.write_input(&mut row, &xt, t, &xe, &zn);
        let (out, _) = self.mlp.forward(&row)?;
        Ok(self.state_norm.denormalize(&out))
    }
}

/// Anchor classifier `h_phi(z, Y)`: an MLP trunk on the context and one learned
/// embedding per anchor index; logits are trunk-feature / embedding dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorClassifier {
    pub trunk: Mlp,
    /// `n_anchor x feature_dim`, row `i` belongs to anchor index `i`.
    pub embedding: Array2<f64>,
    pub context_norm: Normalizer,
}

impl AnchorClassifier {
    pub fn new<R: Rng + ?Sized>(
        n_anchor: usize,
        hidden: &[usize],
        feature_dim: usize,
        context_norm: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![CONTEXT_WIDTH];
        widths.extend_from_slice(hidden);
        widths.push(feature_dim);
        let trunk = Mlp::new(&widths, Activation::Gelu, false, rng)?;
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let embedding = Array2::from_shape_fn((n_anchor, feature_dim), |_| rng.random_range(-bound..bound));
        Ok(Self {
            trunk,
            embedding,
            context_norm,
        })
    }

    pub fn n_anchor(&self) -> usize {
        self.embedding.nrows()
    }

    /// Logits for a batch of normalised contexts.
    pub fn logits_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let feats = self.trunk.predict_batch(z)?;
        Ok(feats.dot(&self.embedding.t()))
    }

    /// Forward with tape; returns `(logits, features, tape)`.
    pub fn forward_batch(&self, z: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>, Tape)> {
        let (feats, tape) = self.trunk.forward_batch(z)?;
        Ok((feats.dot(&self.embedding.t()), feats, tape))
    }

    /// Gradients of a loss with `dL/dlogits = dlogits` (summed over the batch).
    pub fn backward(&self, tape: &Tape, features: &Array2<f64>, dlogits: ArrayView2<'_, f64>) -> Result<Gradients> {
        let dfeat = dlogits.dot(&self.embedding);
        let demb = dlogits.t().dot(features);
        let (mut g, _) = self.trunk.backward(tape, dfeat.view())?;
        g.0.push(demb.into_raw_vec_and_offset().0);
        Ok(g)
    }

    pub fn logits(&self, z: &Context) -> Result<Vec<f64>> {
        let zn = self.context_norm.normalize(&z.encode());
        let view = ArrayView2::from_shape((1, CONTEXT_WIDTH), &zn).unwrap();
        Ok(self.logits_batch(view)?.row(0).to_vec())
    }
}

impl Module for AnchorClassifier {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.trunk.param_specs();
        s.push(ParamSpec {
            name: "anchor_embedding".into(),
            shape: vec![self.embedding.nrows(), self.embedding.ncols()],
            decay: true,
        });
        s
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.trunk.params();
        p.push(self.embedding.as_slice().unwrap());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.trunk.params_mut();
        p.push(self.embedding.as_slice_mut().unwrap());
        p
    }
}

/// Softmax probabilities over anchors.
pub fn classify(phi: &AnchorClassifier, z: &Context, anchors: &AnchorSet) -> Result<Vec<f64>> {
    if phi.n_anchor() != anchors.len() {
        return Err(Error::Shape(format!(
            "classifier has {} anchor embeddings, anchor set has {}",
            phi.n_anchor(),
            anchors.len()
        )));
    }
    Ok(softmax(&phi.logits(z)?))
}

/// First index of the maximum; NaNs never win.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if !x.is_nan() && best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

/// The anchor with the highest classifier probability (lowest index on ties).
pub fn select_anchor<'a>(
    phi: &AnchorClassifier,
    z: &Context,
    anchors: &'a AnchorSet,
) -> Result<&'a crate::geom::Anchor> {
    let probs = classify(phi, z, anchors)?;
    Ok(&anchors.anchors[argmax_lowest(&probs)])
}
