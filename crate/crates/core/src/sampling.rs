//! Reverse-time generation for the bridge planner and both diffusion baselines.
//!
//! Samplers work on batches of normalised states. Each row carries its own anchor and
//! context; all rows share the time grid.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{AnchorSet, TrajKind, Trajectory};
use crate::model::{argmax_lowest, AnchorClassifier, Context, DenoiserNet, Variant, CONTEXT_WIDTH};
use crate::schedule::{
    alpha_sigma_unchecked, coeffs_impl, drift_diffusion_unchecked, h_gradient_into, BridgeCoeffs, ScheduleConfig,
    DENOM_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Exact update of the Gaussian kernel with the denoiser output held fixed over the step.
    Ddim,
    /// Explicit Euler on the probability-flow ODE.
    Euler,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Ddim => "ddim",
            Solver::Euler => "euler",
        })
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(Solver::Ddim),
            "euler" => Ok(Solver::Euler),
            other => Err(Error::Parse(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub solver: Solver,
    /// The bridge starts at `T (1 - start_margin)`.
    pub start_margin: f64,
}

impl SamplerConfig {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            solver: Solver::Ddim,
            start_margin: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.start_margin > 0.0 && self.start_margin < 1.0) {
            return Err(Error::Config("start_margin must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Uniform grid `t_start = t_N > ... > t_1 > t_0 = 0`.
    ///
    /// The denoiser is only evaluated at `t_N ... t_1`, so `t_1` must not fall below `t_eps`.
    pub fn grid(&self, t_start: f64, t_eps: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_steps;
        if !(t_start / n as f64 >= t_eps) {
            return Err(Error::Config(format!(
                "{n} steps from t = {t_start} would evaluate the denoiser below t_eps = {t_eps}"
            )));
        }
        let mut g: Vec<f64> = (0..=n).map(|i| t_start * (1.0 - i as f64 / n as f64)).collect();
        g[n] = 0.0;
        Ok(g)
    }
}

/// Step counts per variant plus the shared solver settings, as stored in the run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub bridge_steps: usize,
    pub full_steps: usize,
    pub truncated_steps: usize,
    pub solver: Solver,
    pub start_margin: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            bridge_steps: 20,
            full_steps: 100,
            truncated_steps: 2,
            solver: Solver::Ddim,
            start_margin: 1e-3,
        }
    }
}

impl SamplerSettings {
    pub fn for_variant(&self, v: Variant) -> SamplerConfig {
        SamplerConfig {
            n_steps: match v {
                Variant::Bridge => self.bridge_steps,
                Variant::Full => self.full_steps,
                Variant::Truncated => self.truncated_steps,
            },
            solver: self.solver,
            start_margin: self.start_margin,
        }
    }
}

/// Batched clean-trajectory prediction at a shared time `t`.
pub trait Denoiser {
    fn predict(
        &self,
        x_t: ArrayView2<'_, f64>,
        t: f64,
        x_end: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>>;
}

impl Denoiser for DenoiserNet {
    fn predict(
        &self,
        x_t: ArrayView2<'_, f64>,
        t: f64,
        x_end: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        let ts = vec![t; x_t.nrows()];
        self.predict_normalized(x_t, &ts, x_end, z)
    }
}

impl<F> Denoiser for F
where
    F: Fn(ArrayView2<'_, f64>, f64, ArrayView2<'_, f64>, ArrayView2<'_, f64>) -> Array2<f64>,
{
    fn predict(
        &self,
        x_t: ArrayView2<'_, f64>,
        t: f64,
        x_end: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        Ok(self(x_t, t, x_end, z))
    }
}

fn row_view(v: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, v.len()), v).unwrap()
}

/// Bridge score `(a_t x_T + b_t x_hat_0 - x_t) / c_t^2` for one state.
pub fn bridge_score<D: Denoiser + ?Sized>(
    den: &D,
    x_t: &[f64],
    t: f64,
    x_end: &[f64],
    z: &[f64],
    co: &BridgeCoeffs,
) -> Result<Vec<f64>> {
    let x0 = den.predict(row_view(x_t), t, row_view(x_end), row_view(z))?;
    Ok(score_from_mean(x_t, x_end, x0.row(0).as_slice().unwrap(), co))
}

/// The score assembled from a given denoising mean.
pub fn score_from_mean(x_t: &[f64], x_end: &[f64], x0_hat: &[f64], co: &BridgeCoeffs) -> Vec<f64> {
    let c_sq = co.c_sq().max(DENOM_FLOOR);
    x_t.iter()
        .zip(x_end)
        .zip(x0_hat)
        .map(|((x, e), m)| (co.a * e + co.b * m - x) / c_sq)
        .collect()
}

/// `dx/dt = f(t) x_t - g(t)^2 (s_hat / 2 - h(t, x_t, x_T))`.
pub fn bridge_ode_rhs<D: Denoiser + ?Sized>(
    den: &D,
    sched: &ScheduleConfig,
    x_t: &[f64],
    t: f64,
    x_end: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    if !(t >= sched.t_eps && t <= sched.t_max) {
        return Err(Error::TimeOutOfRange {
            t,
            lo: sched.t_eps,
            hi: sched.t_max,
        });
    }
    let co = coeffs_impl(sched, t, true);
    let s = bridge_score(den, x_t, t, x_end, z, &co)?;
    let mut h = vec![0.0; x_t.len()];
    h_gradient_into(sched, &co, x_t, x_end, &mut h);
    Ok(rhs_from_parts(co.f, co.g_sq, x_t, &s, &h))
}

pub fn rhs_from_parts(f: f64, g_sq: f64, x_t: &[f64], score: &[f64], h: &[f64]) -> Vec<f64> {
    x_t.iter()
        .zip(score)
        .zip(h)
        .map(|((x, s), hh)| f * x - g_sq * (0.5 * s - hh))
        .collect()
}

/// One recorded solver state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub t: f64,
    pub state: Vec<f64>,
}

fn check_finite(x: &Array2<f64>, what: &str, step: usize, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what}: non-finite state after step {step} (t = {t})"
        )))
    }
}

fn record(trace: &mut Option<&mut Vec<Array2<f64>>>, x: &Array2<f64>) {
    if let Some(tr) = trace.as_mut() {
        tr.push(x.clone());
    }
}

/// Integrates the bridge from `t_N` to `0`, starting from `x` (normally the anchors).
pub fn bridge_integrate<D: Denoiser + ?Sized>(
    den: &D,
    sched: &ScheduleConfig,
    cfg: &SamplerConfig,
    mut x: Array2<f64>,
    x_end: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    mut trace: Option<&mut Vec<Array2<f64>>>,
) -> Result<Array2<f64>> {
    let grid = cfg.grid(sched.t_max * (1.0 - cfg.start_margin), sched.t_eps)?;
    record(&mut trace, &x);
    let d = x.ncols();
    let mut h = vec![0.0; d];
    for (k, w) in grid.windows(2).enumerate() {
        let (t, s) = (w[0], w[1]);
        let x0 = den.predict(x.view(), t, x_end, z)?;
        let ct = coeffs_impl(sched, t, true);
        match cfg.solver {
            Solver::Ddim => {
                let cs = coeffs_impl(sched, s, true);
                let r = cs.c / ct.c.max(DENOM_FLOOR.sqrt());
                Zip::from(&mut x).and(&x_end).and(&x0).for_each(|xi, &e, &m| {
                    *xi = cs.a * e + cs.b * m + r * (*xi - ct.a * e - ct.b * m);
                });
            }
            Solver::Euler => {
                let dt = s - t;
                for i in 0..x.nrows() {
                    let xi = x.row(i).to_vec();
                    let e = x_end.row(i);
                    let e = e.as_slice().unwrap();
                    let sc = score_from_mean(&xi, e, x0.row(i).as_slice().unwrap(), &ct);
                    h_gradient_into(sched, &ct, &xi, e, &mut h);
                    let rhs = rhs_from_parts(ct.f, ct.g_sq, &xi, &sc, &h);
                    for (v, r) in x.row_mut(i).iter_mut().zip(rhs) {
                        *v += dt * r;
                    }
                }
            }
        }
        check_finite(&x, "bridge planner", k + 1, s)?;
        record(&mut trace, &x);
    }
    Ok(x)
}

/// Integrates the standard probability-flow ODE from `t_start` to `0`.
pub fn vp_integrate<D: Denoiser + ?Sized>(
    den: &D,
    sched: &ScheduleConfig,
    cfg: &SamplerConfig,
    t_start: f64,
    mut x: Array2<f64>,
    x_end: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    mut trace: Option<&mut Vec<Array2<f64>>>,
) -> Result<Array2<f64>> {
    let grid = cfg.grid(t_start, sched.t_eps)?;
    record(&mut trace, &x);
    for (k, w) in grid.windows(2).enumerate() {
        let (t, s) = (w[0], w[1]);
        let x0 = den.predict(x.view(), t, x_end, z)?;
        let (at, st) = alpha_sigma_unchecked(sched, t);
        match cfg.solver {
            Solver::Ddim => {
                let (as_, ss) = alpha_sigma_unchecked(sched, s);
                let r = ss / st.max(DENOM_FLOOR.sqrt());
                Zip::from(&mut x).and(&x0).for_each(|xi, &m| {
                    *xi = as_ * m + r * (*xi - at * m);
                });
            }
            Solver::Euler => {
                let (f, g_sq) = drift_diffusion_unchecked(sched, t);
                let s2 = (st * st).max(DENOM_FLOOR);
                let dt = s - t;
                Zip::from(&mut x).and(&x0).for_each(|xi, &m| {
                    let score = (at * m - *xi) / s2;
                    *xi += dt * (f * *xi - 0.5 * g_sq * score);
                });
            }
        }
        check_finite(&x, "diffusion sampler", k + 1, s)?;
        record(&mut trace, &x);
    }
    Ok(x)
}

/// A trained planner of one variant with everything needed to produce trajectories.
#[derive(Debug, Clone)]
pub struct Policy {
    pub variant: Variant,
    pub denoiser: DenoiserNet,
    pub classifier: Option<AnchorClassifier>,
    pub anchors: Option<AnchorSet>,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub t_trunc: f64,
}

pub const TRACE_VERSION: u32 = 1;

/// States of one traced plan, in metric units.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kind: TrajKind,
    pub variant: Variant,
    pub config_hash: String,
    pub seed: u64,
    /// The anchor the plan was conditioned on (zeros for the full-diffusion variant).
    pub anchor: Vec<f64>,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// CSV with a `# version=... kind=...` comment, a header, the anchor row, then one row
    /// per solver state.
    pub fn to_csv(&self) -> String {
        let d = self.anchor.len();
        let hash = if self.config_hash.is_empty() {
            "-"
        } else {
            &self.config_hash
        };
        let mut s = format!(
            "# version={TRACE_VERSION} kind={} variant={} config_hash={hash} seed={}\nstep,t",
            self.kind, self.variant, self.seed
        );
        for i in 0..d {
            s.push_str(&format!(",s{i}"));
        }
        s.push('\n');
        let row = |label: String, t: String, v: &[f64]| {
            let mut r = format!("{label},{t}");
            for x in v {
                r.push_str(&format!(",{}", crate::artifact::fmt_f64(*x)));
            }
            r.push('\n');
            r
        };
        s.push_str(&row("anchor".into(), String::new(), &self.anchor));
        for st in &self.steps {
            s.push_str(&row(st.step.to_string(), crate::artifact::fmt_f64(st.t), &st.state));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::Parse("trace lacks its metadata line".into()))?;
        let mut kind = None;
        let mut variant = None;
        let mut config_hash = String::new();
        let mut seed = 0;
        let mut version = None;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("version", v)) => version = v.parse::<u32>().ok(),
                Some(("kind", v)) => kind = Some(v.parse::<TrajKind>()?),
                Some(("variant", v)) => variant = Some(v.parse::<Variant>()?),
                Some(("config_hash", v)) => config_hash = if v == "-" { String::new() } else { v.to_string() },
                Some(("seed", v)) => seed = v.parse().map_err(|_| Error::Parse(format!("bad trace seed `{v}`")))?,
                _ => return Err(Error::Parse(format!("bad trace metadata `{kv}`"))),
            }
        }
        if version != Some(TRACE_VERSION) {
            return Err(Error::Parse(format!("unsupported trace version {version:?}")));
        }
        let (kind, variant) = kind
            .zip(variant)
            .ok_or_else(|| Error::Parse("trace metadata needs kind and variant".into()))?;
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("trace lacks a header".into()))?;
        let d = header.split(',').count().saturating_sub(2);
        let parse_vals = |cols: &[&str]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|c| c.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{c}`"))))
                .collect()
        };
        let mut anchor = None;
        let mut steps = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != d + 2 {
                return Err(Error::Parse(format!("trace row of width {}", cols.len())));
            }
            let vals = parse_vals(&cols[2..])?;
            if cols[0] == "anchor" {
                anchor = Some(vals);
            } else {
                steps.push(TraceStep {
                    step: cols[0]
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad step `{}`", cols[0])))?,
                    t: parse_vals(&cols[1..2])?[0],
                    state: vals,
                });
            }
        }
        Ok(Self {
            kind,
            variant,
            config_hash,
            seed,
            anchor: anchor.ok_or_else(|| Error::Parse("trace lacks the anchor row".into()))?,
            steps,
        })
    }
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sampler.validate()?;
        if self.variant.uses_anchors() != self.denoiser.anchor_input {
            return Err(Error::Config(format!(
                "denoiser anchor input does not match the {} variant",
                self.variant
            )));
        }
        if self.variant.uses_anchors() {
            let (phi, anchors) =
                self.classifier.as_ref().zip(self.anchors.as_ref()).ok_or_else(|| {
                    Error::Config(format!("the {} variant needs anchors and a classifier", self.variant))
                })?;
            if anchors.kind != self.denoiser.kind || anchors.n_point() != self.denoiser.n_point {
                return Err(Error::Mismatch(format!(
                    "anchors are {} but the checkpoint is {}",
                    anchors.kind, self.denoiser.kind
                )));
            }
            if phi.n_anchor() != anchors.len() {
                return Err(Error::Mismatch("classifier and anchor set sizes differ".into()));
            }
        }
        if self.variant == Variant::Truncated
            && !(self.t_trunc > self.schedule.t_eps && self.t_trunc < self.schedule.t_max)
        {
            return Err(Error::Config(format!("bad t_trunc {}", self.t_trunc)));
        }
        Ok(())
    }

    pub fn kind(&self) -> TrajKind {
        self.denoiser.kind
    }

    /// Selected anchor index per context (empty for the full-diffusion variant).
    pub fn select_anchors(&self, z_norm: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        match &self.classifier {
            Some(phi) if self.variant.uses_anchors() => {
                let logits = phi.logits_batch(z_norm)?;
                Ok(logits
                    .axis_iter(Axis(0))
                    .map(|r| argmax_lowest(r.as_slice().unwrap()))
                    .collect())
            }
            _ => Ok(Vec::new()),
        }
    }

    fn normalized_contexts(&self, contexts: &[Context]) -> Array2<f64> {
        let mut z = Array2::zeros((contexts.len(), CONTEXT_WIDTH));
        for (mut row, c) in z.axis_iter_mut(Axis(0)).zip(contexts) {
            row.assign(&ndarray::aview1(&self.denoiser.context_norm.normalize(&c.encode())));
        }
        z
    }

    fn run(
        &self,
        contexts: &[Context],
        noise_seeds: &[u64],
        trace: Option<&mut Vec<Array2<f64>>>,
    ) -> Result<(Array2<f64>, Array2<f64>, Vec<f64>)> {
        if contexts.len() != noise_seeds.len() {
            return Err(Error::Shape("one noise seed per context is required".into()));
        }
        let n = contexts.len();
        let d = self.denoiser.state_dim();
        let z = self.normalized_contexts(contexts);
        let mut x_end = Array2::zeros((n, d));
        if self.variant.uses_anchors() {
            let anchors = self.anchors.as_ref().unwrap();
            let picks = self.select_anchors(z.view())?;
            for (i, k) in picks.into_iter().enumerate() {
                let a = self
                    .denoiser
                    .state_norm
                    .normalize(&anchors.anchors[k].to_state(anchors.kind));
                x_end.row_mut(i).assign(&ndarray::aview1(&a));
            }
        }
        let noise = |scale: f64| {
            let mut e = Array2::zeros((n, d));
            for (mut row, &seed) in e.axis_iter_mut(Axis(0)).zip(noise_seeds) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                row.iter_mut()
                    .for_each(|v| *v = scale * rng.sample::<f64, _>(StandardNormal));
            }
            e
        };
        let sched = &self.schedule;
        let (out, grid) = match self.variant {
            Variant::Bridge => {
                let grid = self
                    .sampler
                    .grid(sched.t_max * (1.0 - self.sampler.start_margin), sched.t_eps)?;
                let x = bridge_integrate(
                    &self.denoiser,
                    sched,
                    &self.sampler,
                    x_end.clone(),
                    x_end.view(),
                    z.view(),
                    trace,
                )?;
                (x, grid)
            }
            Variant::Full => {
                let (_, s_n) = alpha_sigma_unchecked(sched, sched.t_max);
                let grid = self.sampler.grid(sched.t_max, sched.t_eps)?;
                let x = vp_integrate(
                    &self.denoiser,
                    sched,
                    &self.sampler,
                    sched.t_max,
                    noise(s_n),
                    x_end.view(),
                    z.view(),
                    trace,
                )?;
                (x, grid)
            }
            Variant::Truncated => {
                let (a, s) = alpha_sigma_unchecked(sched, self.t_trunc);
                let start = &x_end * a + noise(s);
                let grid = self.sampler.grid(self.t_trunc, sched.t_eps)?;
                let x = vp_integrate(
                    &self.denoiser,
                    sched,
                    &self.sampler,
                    self.t_trunc,
                    start,
                    x_end.view(),
                    z.view(),
                    trace,
                )?;
                (x, grid)
            }
        };
        Ok((out, x_end, grid))
    }

    fn to_trajectory(&self, row: &[f64]) -> Result<Trajectory> {
        Trajectory::from_state(self.kind(), &self.denoiser.state_norm.denormalize(row))
    }

    /// Plans for every context in one batched solver run.
    ///
    /// `noise_seeds` seed the initial noise of the stochastic-start variants; the bridge
    /// planner ignores them.
    pub fn plan_batch(&self, contexts: &[Context], noise_seeds: &[u64]) -> Result<Vec<Trajectory>> {
        if contexts.is_empty() {
            return Ok(Vec::new());
        }
        let (out, _, _) = self.run(contexts, noise_seeds, None)?;
        out.axis_iter(Axis(0))
            .map(|r| self.to_trajectory(r.as_slice().unwrap()))
            .collect()
    }

    pub fn plan_one(&self, z: &Context, noise_seed: u64) -> Result<Trajectory> {
        Ok(self.plan_batch(std::slice::from_ref(z), &[noise_seed])?.remove(0))
    }

    /// Plans once and records every intermediate solver state.
    pub fn plan_traced(&self, z: &Context, noise_seed: u64) -> Result<(Trajectory, Trace)> {
        let mut states = Vec::new();
        let (out, x_end, grid) = self.run(std::slice::from_ref(z), &[noise_seed], Some(&mut states))?;
        let norm = &self.denoiser.state_norm;
        let anchor = if self.variant.uses_anchors() {
            norm.denormalize(x_end.row(0).as_slice().unwrap())
        } else {
            vec![0.0; self.denoiser.state_dim()]
        };
        let steps = states
            .iter()
            .zip(&grid)
            .enumerate()
            .map(|(k, (s, &t))| TraceStep {
                step: k,
                t,
                state: norm.denormalize(s.row(0).as_slice().unwrap()),
            })
            .collect();
        let traj = self.to_trajectory(out.row(0).as_slice().unwrap())?;
        Ok((
            traj,
            Trace {
                kind: self.kind(),
                variant: self.variant,
                config_hash: String::new(),
                seed: noise_seed,
                anchor,
                steps,
            },
        ))
    }
}

fn standalone_policy(
    variant: Variant,
    theta: &DenoiserNet,
    phi: Option<&AnchorClassifier>,
    anchors: Option<&AnchorSet>,
    sched: &ScheduleConfig,
    cfg: &SamplerConfig,
    t_trunc: f64,
) -> Result<Policy> {
    let p = Policy {
        variant,
        denoiser: theta.clone(),
        classifier: phi.cloned(),
        anchors: anchors.cloned(),
        schedule: *sched,
        sampler: *cfg,
        t_trunc,
    };
    p.validate()?;
    Ok(p)
}

/// Bridge planning: select an anchor, start at it and integrate to `t = 0`.
pub fn plan(
    theta: &DenoiserNet,
    phi: &AnchorClassifier,
    z: &Context,
    anchors: &AnchorSet,
    sched: &ScheduleConfig,
    cfg: &SamplerConfig,
) -> Result<Trajectory> {
    standalone_policy(Variant::Bridge, theta, Some(phi), Some(anchors), sched, cfg, 0.5)?.plan_one(z, 0)
}

/// Full-diffusion sampling from `N(0, sigma_T^2 I)` noise.
pub fn full_diffusion_sample<R: Rng + ?Sized>(
    theta: &DenoiserNet,
    z: &Context,
    sched: &ScheduleConfig,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let seed = rng.random();
    standalone_policy(Variant::Full, theta, None, None, sched, cfg, 0.5)?.plan_one(z, seed)
}

/// Truncated sampling from the noised classifier-selected anchor at `t_trunc`.
#[allow(clippy::too_many_arguments)]
pub fn truncated_sample<R: Rng + ?Sized>(
    theta: &DenoiserNet,
    phi: &AnchorClassifier,
    z: &Context,
    anchors: &AnchorSet,
    sched: &ScheduleConfig,
    cfg: &SamplerConfig,
    t_trunc: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let seed = rng.random();
    standalone_policy(Variant::Truncated, theta, Some(phi), Some(anchors), sched, cfg, t_trunc)?.plan_one(z, seed)
}
