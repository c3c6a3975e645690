//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL line each.
//!
//! `ACCEPTANCE_ONLY=1,5,10 cargo test --test acceptance` runs a subset.

use std::io::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use anchorbridge::geom::{Anchor, AnchorSet, TrajKind, Trajectory};
use anchorbridge::model::{argmax_lowest, AnchorClassifier, Context, DenoiserNet, Normalizer, Variant, CONTEXT_WIDTH};
use anchorbridge::nn::{Gradients, Module};
use anchorbridge::pipeline::{fit_anchor_set, generate_dataset, run_pipeline, train_policy, ReportFile, RunConfig};
use anchorbridge::sampling::{bridge_integrate, Policy, SamplerConfig};
use anchorbridge::schedule::{bridge_coeffs, bridge_coeffs_unclamped, drift_diffusion, vp_alpha_sigma, ScheduleConfig};
use anchorbridge::training::{classifier_loss_batch, corrupt, diffusion_loss_batch, label, train, Sample, TrainConfig};
use anchorbridge::world::{evaluate, EvalReport, SuiteConfig};

type Outcome = anyhow::Result<(bool, String)>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn acceptance_config() -> RunConfig {
    RunConfig::from_toml(include_str!("../../../configs/acceptance.toml")).expect("acceptance config")
}

fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

fn check(ok: &mut bool, cond: bool, what: String, notes: &mut Vec<String>) {
    if !cond {
        *ok = false;
        notes.push(format!("violated: {what}"));
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn rel(x: f64, reference: f64) -> f64 {
    (x - reference).abs() / reference.abs().max(1e-300)
}

fn schedule_suite() -> Outcome {
    let start = Instant::now();
    let s = ScheduleConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();

    let c0 = bridge_coeffs_unclamped(&s, 0.0)?;
    check(
        &mut ok,
        c0.a.abs() < 1e-12 && c0.c.abs() < 1e-12 && (c0.b - 1.0).abs() < 1e-12,
        format!("t=0 coefficients {c0:?}"),
        &mut notes,
    );
    let ct = bridge_coeffs_unclamped(&s, s.t_max)?;
    check(
        &mut ok,
        (ct.a - 1.0).abs() < 1e-12 && ct.b.abs() < 1e-12 && ct.c.abs() < 1e-12,
        format!("t=T coefficients {ct:?}"),
        &mut notes,
    );
    let mut last_gap = f64::INFINITY;
    for k in 1..=6 {
        let c = bridge_coeffs(&s, s.t_max * (1.0 - 10f64.powi(-k)))?;
        let gap = (c.a - 1.0).abs().max(c.b.abs()).max(c.c);
        check(
            &mut ok,
            gap < last_gap,
            format!("coefficients approach (1, 0, 0) as t -> T (gap {gap:.3e})"),
            &mut notes,
        );
        last_gap = gap;
    }
    check(
        &mut ok,
        last_gap < 1e-2,
        format!("gap {last_gap:.3e} at T(1 - 1e-6)"),
        &mut notes,
    );

    let mut worst_vp = 0.0f64;
    for i in 0..=1000 {
        let (a, sg) = vp_alpha_sigma(&s, s.t_max * i as f64 / 1000.0)?;
        worst_vp = worst_vp.max((a * a + sg * sg - 1.0).abs());
    }
    check(
        &mut ok,
        worst_vp < 1e-12,
        format!("alpha^2 + sigma^2 = 1 (worst {worst_vp:.3e})"),
        &mut notes,
    );

    let alpha_q = |t: f64| simpson(|u| drift_diffusion(&s, u).unwrap().0, 0.0, t, 2000).exp();
    let var_integral = |t: f64| simpson(|u| drift_diffusion(&s, u).unwrap().1 / alpha_q(u).powi(2), 0.0, t, 2000);
    let alpha_t = alpha_q(s.t_max);
    let v_t = var_integral(s.t_max);
    let mut worst = 0.0f64;
    for i in 1..=40 {
        let t = s.t_max * i as f64 / 40.0 * 0.995;
        let c = bridge_coeffs_unclamped(&s, t)?;
        let al = alpha_q(t);
        let v = var_integral(t);
        let sigma_sq = al * al * v;
        let gamma_sq = v / v_t;
        let expect = [
            (c.alpha, al),
            (c.sigma * c.sigma, sigma_sq),
            (c.gamma_sq, gamma_sq),
            (c.a, al * gamma_sq / alpha_t),
            (c.b, al * (1.0 - gamma_sq)),
            (c.c_sq(), sigma_sq * (1.0 - gamma_sq)),
        ];
        for (x, q) in expect {
            worst = worst.max(rel(x, q));
        }
    }
    check(
        &mut ok,
        worst < 1e-6,
        format!("closed form vs quadrature (worst rel err {worst:.3e})"),
        &mut notes,
    );
    let secs = start.elapsed().as_secs_f64();
    check(&mut ok, secs < 10.0, format!("runtime {secs:.1} s < 10 s"), &mut notes);
    notes.insert(
        0,
        format!("quadrature rel err {worst:.2e}, VP identity err {worst_vp:.1e}"),
    );
    Ok((ok, notes.join("; ")))
}

fn randomize<M: Module>(m: &mut M, rng: &mut ChaCha8Rng) {
    for p in m.params_mut() {
        p.iter_mut()
            .for_each(|v| *v = 0.3 * rng.sample::<f64, _>(StandardNormal));
    }
}

fn random_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

/// Worst relative error between backprop and central differences over every parameter.
fn gradient_error<M: Module>(m: &mut M, grads: &Gradients, loss: impl Fn(&M) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let n_tensor = m.params().len();
    for ti in 0..n_tensor {
        for j in 0..m.params()[ti].len() {
            let orig = m.params()[ti][j];
            m.params_mut()[ti][j] = orig + h;
            let up = loss(m);
            m.params_mut()[ti][j] = orig - h;
            let down = loss(m);
            m.params_mut()[ti][j] = orig;
            let fd = (up - down) / (2.0 * h);
            let bp = grads.0[ti][j];
            worst = worst.max((bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let sched = ScheduleConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let kind = TrajKind::Geometric;
    let d = kind.state_dim(10);
    let mut ok = true;
    let mut notes = Vec::new();
    let (x0, y, z) = (
        random_rows(4, d, &mut rng),
        random_rows(4, d, &mut rng),
        random_rows(4, CONTEXT_WIDTH, &mut rng),
    );
    for variant in Variant::ALL {
        let mut net = DenoiserNet::new(
            kind,
            10,
            &[12, 12],
            variant.uses_anchors(),
            Normalizer::identity(d),
            Normalizer::identity(CONTEXT_WIDTH),
            sched.t_max,
            &mut rng,
        )?;
        randomize(&mut net.mlp, &mut rng);
        let loss = |mlp: &anchorbridge::nn::Mlp| {
            let n = DenoiserNet {
                mlp: mlp.clone(),
                ..net.clone()
            };
            let mut r = ChaCha8Rng::seed_from_u64(5);
            diffusion_loss_batch(&n, variant, &sched, 0.3, x0.view(), y.view(), z.view(), &mut r)
                .unwrap()
                .0
        };
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let (_, g) = diffusion_loss_batch(&net, variant, &sched, 0.3, x0.view(), y.view(), z.view(), &mut r)?;
        let mut mlp = net.mlp.clone();
        let e = gradient_error(&mut mlp, &g, loss);
        check(
            &mut ok,
            e < 1e-4,
            format!("{variant} denoiser gradient rel err {e:.3e}"),
            &mut notes,
        );
        notes.push(format!("{variant} denoiser {e:.1e}"));
    }
    let mut phi = AnchorClassifier::new(5, &[10, 10], 6, Normalizer::identity(CONTEXT_WIDTH), &mut rng)?;
    randomize(&mut phi, &mut rng);
    let labels = [0, 3, 4, 1];
    let (_, _, g) = classifier_loss_batch(&phi, z.view(), &labels)?;
    let e = gradient_error(&mut phi, &g, |p| classifier_loss_batch(p, z.view(), &labels).unwrap().0);
    check(
        &mut ok,
        e < 1e-4,
        format!("classifier gradient rel err {e:.3e}"),
        &mut notes,
    );
    notes.push(format!("classifier {e:.1e}"));
    let secs = start.elapsed().as_secs_f64();
    check(&mut ok, secs < 60.0, format!("runtime {secs:.1} s < 60 s"), &mut notes);
    Ok((ok, notes.join("; ")))
}

/// Orthonormal basis from two rotation angles.
fn rotation(a: f64, b: f64) -> Array2<f64> {
    let rz = ndarray::array![[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rx = ndarray::array![[1.0, 0.0, 0.0], [0.0, b.cos(), -b.sin()], [0.0, b.sin(), b.cos()]];
    rz.dot(&rx)
}

fn transport_oracle() -> Outcome {
    let start = Instant::now();
    let sched = ScheduleConfig::default();
    let cfg = SamplerConfig::new(200);
    let n = 10_000;
    let mu = ndarray::array![2.0, -1.0, 0.5];
    let lambda = ndarray::array![1.0, 0.25, 0.04];
    let r = rotation(0.6, -0.4);
    let sigma = r.dot(&Array2::from_diag(&lambda)).dot(&r.t());
    let y = ndarray::array![3.0, 1.0, -1.0];

    // Exact E[x0 | x_t, y] for a Gaussian x0 and a fixed end point y.
    let oracle = |x_t: ArrayView2<'_, f64>, t: f64, _e: ArrayView2<'_, f64>, _z: ArrayView2<'_, f64>| {
        let c = bridge_coeffs(&sched, t).unwrap();
        let gain: Array1<f64> = lambda.mapv(|l| c.b * l / (c.b * c.b * l + c.c_sq()));
        let offset = &y * c.a + &mu * c.b;
        let resid = &x_t - &offset;
        let m = resid.dot(&r).dot(&Array2::from_diag(&gain)).dot(&r.t());
        m + &mu
    };

    let t_n = sched.t_max * (1.0 - cfg.start_margin);
    let c = bridge_coeffs(&sched, t_n)?;
    let scale: Array1<f64> = lambda.mapv(|l| (c.b * c.b * l + c.c_sq()).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xi = random_rows(n, 3, &mut rng);
    let start_state = xi.dot(&Array2::from_diag(&scale)).dot(&r.t()) + &(&y * c.a + &mu * c.b);
    let ends = Array2::from_shape_fn((n, 3), |(_, j)| y[j]);
    let z = Array2::zeros((n, 1));
    let out = bridge_integrate(&oracle, &sched, &cfg, start_state, ends.view(), z.view(), None)?;

    let mean = out.mean_axis(ndarray::Axis(0)).unwrap();
    let centred = &out - &mean;
    let cov = centred.t().dot(&centred) / (n as f64 - 1.0);
    let mean_err = (&mean - &mu).mapv(|v| v * v).sum().sqrt() / mu.mapv(|v| v * v).sum().sqrt();
    let cov_err = (&cov - &sigma).mapv(|v| v * v).sum().sqrt() / sigma.mapv(|v| v * v).sum().sqrt();
    let secs = start.elapsed().as_secs_f64();
    let mut ok = true;
    let mut notes = vec![format!(
        "mean rel err {:.2}%, covariance Frobenius rel err {:.2}%",
        100.0 * mean_err,
        100.0 * cov_err
    )];
    check(&mut ok, mean_err < 0.02, "end-point mean within 2%".into(), &mut notes);
    check(
        &mut ok,
        cov_err < 0.05,
        "end-point covariance within 5%".into(),
        &mut notes,
    );
    check(
        &mut ok,
        secs < 300.0,
        format!("runtime {secs:.1} s < 300 s"),
        &mut notes,
    );
    Ok((ok, notes.join("; ")))
}

fn symmetry_demo() -> Outcome {
    let sched = ScheduleConfig::default();
    let d = TrajKind::Geometric.state_dim(10);
    let c_eps = bridge_coeffs(&sched, sched.t_eps)?.c;
    let radius = 10.0 * c_eps * (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut worst_bridge, mut worst_ratio) = (0.0f64, 0.0f64);
    let mut out = vec![0.0; d];
    let mut ok = true;
    let mut notes = Vec::new();
    for _ in 0..2000 {
        let x0: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = (0..d).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let gap: f64 = x0.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dist = |v: &[f64]| v.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        corrupt(Variant::Bridge, &sched, sched.t_eps, &x0, &y, &eps, &mut out);
        worst_bridge = worst_bridge.max(dist(&out));
        corrupt(Variant::Truncated, &sched, sched.t_eps, &x0, &y, &eps, &mut out);
        let trunc = dist(&out);
        worst_ratio = worst_ratio.max((trunc / gap - 1.0).abs());
        if trunc <= radius {
            ok = false;
        }
    }
    check(
        &mut ok,
        worst_bridge <= radius,
        format!("bridge states within {radius:.3e} of x0 (worst {worst_bridge:.3e})"),
        &mut notes,
    );
    check(
        &mut ok,
        worst_ratio < 0.05,
        format!("truncated distance / |y - x0| within 5% of 1 (worst {worst_ratio:.3e})"),
        &mut notes,
    );
    notes.insert(
        0,
        format!("bridge worst distance {worst_bridge:.3e} <= {radius:.3e}; truncated |dist/|y-x0| - 1| <= {worst_ratio:.1e}"),
    );
    Ok((ok, notes.join("; ")))
}

fn overfit_oracle() -> Outcome {
    let start = Instant::now();
    let sched = ScheduleConfig::default();
    let kind = TrajKind::Geometric;
    let points: Vec<[f64; 2]> = (1..=10).map(|i| [i as f64 * 0.95, 0.02 * (i * i) as f64]).collect();
    let x0 = Trajectory::geometric(points, 5.5);
    let anchors = AnchorSet {
        kind,
        anchors: (0..3)
            .map(|k| Anchor {
                index: k,
                points: (1..=10)
                    .map(|i| [i as f64, (k as f64 - 1.0) * 0.3 * i as f64])
                    .collect(),
                speed: 5.0,
            })
            .collect(),
        seed: 0,
        inertia: 0.0,
    };
    let z = Context {
        ego_speed: 5.0,
        target_point: [20.0, 1.5],
        lane_offset: 0.2,
        ..Context::default()
    };
    let sample = Sample::labelled(x0.clone(), z, &anchors)?;
    let cfg = TrainConfig {
        epochs: 8000,
        batch_size: 1,
        denoiser_hidden: vec![64, 64],
        classifier_hidden: vec![16],
        classifier_features: 8,
        normalize: false,
        weight_decay: 0.0,
        lr: anchorbridge::nn::LrSchedule {
            lr0: 3e-3,
            t0: 8000.0,
            t_mult: 1.0,
        },
        ..TrainConfig::default()
    };
    let out = train(std::slice::from_ref(&sample), &anchors, Variant::Bridge, &sched, &cfg)?;
    let d = kind.state_dim(10);
    let reps = 512;
    let row = |v: Vec<f64>| Array2::from_shape_fn((reps, v.len()), |(_, j)| v[j]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (loss, _) = diffusion_loss_batch(
        &out.denoiser,
        Variant::Bridge,
        &sched,
        cfg.t_trunc,
        row(x0.to_state()).view(),
        row(anchors.anchors[sample.anchor_index].to_state(kind)).view(),
        row(z.encode()).view(),
        &mut rng,
    )?;
    let policy = Policy {
        variant: Variant::Bridge,
        denoiser: out.denoiser,
        classifier: out.classifier,
        anchors: Some(anchors),
        schedule: sched,
        sampler: SamplerConfig::new(20),
        t_trunc: cfg.t_trunc,
    };
    let plan = policy.plan_one(&z, 0)?;
    let worst = plan
        .points
        .iter()
        .zip(&x0.points)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .fold(0.0f64, f64::max);
    let speed_err = (plan.speed.unwrap_or(f64::NAN) - 5.5).abs();
    let secs = start.elapsed().as_secs_f64();
    let mut ok = true;
    let mut notes = vec![format!(
        "loss {loss:.2e}, worst waypoint error {worst:.2e} m, speed error {speed_err:.1e}, d = {d}"
    )];
    check(&mut ok, loss < 1e-3, "training loss < 1e-3".into(), &mut notes);
    check(
        &mut ok,
        worst < 1e-2 && speed_err < 1e-2,
        "plan within 1e-2 of ground truth".into(),
        &mut notes,
    );
    check(
        &mut ok,
        secs < 300.0,
        format!("runtime {secs:.1} s < 300 s"),
        &mut notes,
    );
    Ok((ok, notes.join("; ")))
}

struct Ablation {
    geometric_bridge_sr: Vec<f64>,
    seed0_bridge: Option<Policy>,
}

fn run_variant(
    cfg: &RunConfig,
    variant: Variant,
    suite: &SuiteConfig,
    data: &anchorbridge::training::DatasetFile,
    anchors: &AnchorSet,
) -> anyhow::Result<(Policy, EvalReport)> {
    let (policy, _) = train_policy(cfg, data, anchors, variant)?;
    let report = evaluate(&suite.scenarios()?, &policy, &cfg.rollout)?;
    Ok((policy, report))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn closed_loop_ablation(cache: &mut Ablation) -> Outcome {
    let start = Instant::now();
    let base = acceptance_config();
    let suite = SuiteConfig::default();
    let mut sr = [Vec::new(), Vec::new(), Vec::new()];
    for &seed in &SEEDS {
        let cfg = RunConfig { seed, ..base.clone() };
        let data = generate_dataset(&cfg, &suite)?;
        let anchors = fit_anchor_set(&cfg, &data)?;
        let mut line = format!("  seed {seed}:");
        for (i, variant) in [Variant::Bridge, Variant::Full, Variant::Truncated]
            .into_iter()
            .enumerate()
        {
            let (policy, report) = run_variant(&cfg, variant, &suite, &data, &anchors)?;
            line += &format!(
                " {variant} SR {:.1} DS {:.1}",
                report.success_rate, report.driving_score
            );
            sr[i].push(report.success_rate);
            if variant == Variant::Bridge && seed == SEEDS[0] {
                cache.seed0_bridge = Some(policy);
            }
        }
        say(&line);
    }
    cache.geometric_bridge_sr = sr[0].clone();
    let (b, f, t) = (mean(&sr[0]), mean(&sr[1]), mean(&sr[2]));
    let secs = start.elapsed().as_secs_f64();
    let mut ok = true;
    let mut notes = vec![format!("mean SR bridge {b:.1}, full {f:.1}, truncated {t:.1}")];
    check(
        &mut ok,
        b >= f && f >= t,
        "bridge >= full >= truncated".into(),
        &mut notes,
    );
    check(&mut ok, b > f && b > t, "bridge strictly greatest".into(), &mut notes);
    check(&mut ok, b >= 70.0, "bridge SR >= 70%".into(), &mut notes);
    check(
        &mut ok,
        secs < 1800.0,
        format!("runtime {secs:.0} s < 1800 s"),
        &mut notes,
    );
    Ok((ok, notes.join("; ")))
}

fn representation_ablation(cache: &mut Ablation) -> Outcome {
    let base = acceptance_config();
    let suite = SuiteConfig::default();
    let mut geo = cache.geometric_bridge_sr.clone();
    let mut temporal = Vec::new();
    for &seed in &SEEDS {
        if geo.len() < SEEDS.len() {
            let cfg = RunConfig { seed, ..base.clone() };
            let data = generate_dataset(&cfg, &suite)?;
            let anchors = fit_anchor_set(&cfg, &data)?;
            geo.push(
                run_variant(&cfg, Variant::Bridge, &suite, &data, &anchors)?
                    .1
                    .success_rate,
            );
        }
        let cfg = RunConfig {
            seed,
            kind: TrajKind::Temporal,
            ..base.clone()
        };
        let data = generate_dataset(&cfg, &suite)?;
        let anchors = fit_anchor_set(&cfg, &data)?;
        let (_, report) = run_variant(&cfg, Variant::Bridge, &suite, &data, &anchors)?;
        say(&format!(
            "  seed {seed}: temporal bridge SR {:.1} DS {:.1}",
            report.success_rate, report.driving_score
        ));
        temporal.push(report.success_rate);
    }
    let (g, t) = (mean(&geo), mean(&temporal));
    Ok((
        g >= t,
        format!("mean SR geometric {g:.1} vs temporal {t:.1} over seeds {geo:?} / {temporal:?}"),
    ))
}

fn separable_samples(anchors: &AnchorSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let k = i % anchors.len();
            let z = Context {
                ego_speed: rng.random_range(0.0..8.0),
                target_point: [rng.random_range(5.0..30.0), rng.random_range(-3.0..3.0)],
                lane_offset: k as f64 - 1.5 + rng.random_range(-0.3..0.3),
                heading_error: rng.random_range(-0.1..0.1),
                ..Context::default()
            };
            Sample {
                x0: anchors.anchors[k].to_trajectory(anchors.kind),
                z,
                anchor_index: k,
            }
        })
        .collect()
}

fn classifier_accuracy() -> Outcome {
    let sched = ScheduleConfig::default();
    let anchors = AnchorSet {
        kind: TrajKind::Geometric,
        anchors: (0..4)
            .map(|k| Anchor {
                index: k,
                points: (1..=10)
                    .map(|i| [i as f64, (k as f64 - 1.5) * 0.35 * i as f64])
                    .collect(),
                speed: 3.0 + k as f64,
            })
            .collect(),
        seed: 0,
        inertia: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let samples = separable_samples(&anchors, 400, &mut rng);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        denoiser_hidden: vec![16],
        ..TrainConfig::default()
    };
    let out = train(&samples, &anchors, Variant::Bridge, &sched, &cfg)?;
    let phi = out.classifier.expect("bridge trains a classifier");
    let mut hits = 0;
    for s in &samples {
        hits += usize::from(argmax_lowest(&phi.logits(&s.z)?) == s.anchor_index);
    }
    let train_acc = hits as f64 / samples.len() as f64;

    let base = acceptance_config();
    let suite = SuiteConfig::default();
    let mut cfg = RunConfig {
        seed: 0,
        ..base.clone()
    };
    cfg.collect.episodes_per_kind = 150;
    cfg.train.denoiser_hidden = vec![16];
    let data = generate_dataset(&cfg, &suite)?;
    let anchors = fit_anchor_set(&cfg, &data)?;
    let (policy, _) = train_policy(&cfg, &data, &anchors, Variant::Bridge)?;
    let mut held_cfg = RunConfig {
        seed: 1000,
        ..cfg.clone()
    };
    held_cfg.collect.episodes_per_kind = 20;
    let held = label(&generate_dataset(&held_cfg, &suite)?.records, &anchors)?;
    let z = Array2::from_shape_fn((held.len(), CONTEXT_WIDTH), |(i, j)| {
        policy.denoiser.context_norm.normalize(&held[i].z.encode())[j]
    });
    let picks = policy.select_anchors(z.view())?;
    let held_hits = picks.iter().zip(&held).filter(|(p, s)| **p == s.anchor_index).count();
    let held_acc = held_hits as f64 / held.len() as f64;
    let mut ok = true;
    let mut notes = vec![format!(
        "separable train accuracy {:.1}%, held-out top-1 {:.1}% on {} expert frames",
        100.0 * train_acc,
        100.0 * held_acc,
        held.len()
    )];
    check(&mut ok, train_acc >= 0.99, "train accuracy >= 99%".into(), &mut notes);
    check(&mut ok, held_acc >= 0.90, "held-out accuracy >= 90%".into(), &mut notes);
    Ok((ok, notes.join("; ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir()?;
    let suite_path = dir.path().join("suite.toml");
    let suite = SuiteConfig {
        seed_count: 3,
        ..SuiteConfig::default()
    };
    std::fs::write(&suite_path, toml::to_string(&suite)?)?;
    let mut cfg = acceptance_config();
    cfg.seed = 42;
    cfg.suite = Some(suite_path);
    cfg.collect.episodes_per_kind = 6;
    cfg.train.epochs = 2;
    cfg.train.denoiser_hidden = vec![32, 32];
    let runs: Vec<String> = (0..2)
        .map(|_| Ok(ReportFile::new(&cfg, Variant::Bridge, run_pipeline(&cfg, Variant::Bridge)?).to_json()))
        .collect::<anyhow::Result<_>>()?;
    let same = runs[0] == runs[1];
    Ok((
        same,
        format!(
            "two pipeline runs give {} report bytes, identical: {same}",
            runs[0].len()
        ),
    ))
}

fn step_economy(cache: &mut Ablation) -> Outcome {
    let policy = match cache.seed0_bridge.take() {
        Some(p) => p,
        None => {
            let cfg = acceptance_config();
            let data = generate_dataset(&cfg, &SuiteConfig::default())?;
            let anchors = fit_anchor_set(&cfg, &data)?;
            train_policy(&cfg, &data, &anchors, Variant::Bridge)?.0
        }
    };
    let mut held_cfg = acceptance_config();
    held_cfg.seed = 2000;
    held_cfg.collect.episodes_per_kind = 5;
    let held = generate_dataset(&held_cfg, &SuiteConfig::default())?;
    let contexts: Vec<Context> = held.records.iter().map(|r| r.z).collect();
    let seeds = vec![0; contexts.len()];
    let fine = Policy {
        sampler: SamplerConfig {
            n_steps: 200,
            ..policy.sampler
        },
        ..policy.clone()
    };
    let coarse_plans = policy.plan_batch(&contexts, &seeds)?;
    let fine_plans = fine.plan_batch(&contexts, &seeds)?;
    let mut errs: Vec<f64> = coarse_plans
        .iter()
        .zip(&fine_plans)
        .flat_map(|(a, b)| {
            a.points
                .iter()
                .zip(&b.points)
                .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    let mean_err = mean(&errs);
    let msg = format!(
        "{} steps vs 200 on {} contexts: mean per-waypoint L2 {mean_err:.2e} m (p99 {:.2e}, worst {:.2e})",
        policy.sampler.n_steps,
        contexts.len(),
        errs[errs.len() * 99 / 100],
        errs[errs.len() - 1]
    );
    Ok((mean_err <= 5e-2, msg))
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut cache = Ablation {
        geometric_bridge_sr: Vec::new(),
        seed0_bridge: None,
    };
    let criteria: Vec<(usize, &str)> = vec![
        (1, "schedule suite"),
        (2, "gradient suite"),
        (3, "gaussian bridge transport"),
        (4, "bridge vs truncated corruption"),
        (5, "single-sample overfit"),
        (6, "closed-loop variant ablation"),
        (7, "geometric vs temporal"),
        (8, "anchor classifier"),
        (9, "determinism"),
        (10, "step-count economy"),
    ];
    let mut failed = Vec::new();
    for (id, name) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        say(&format!("criterion {id:2} {name}: running"));
        let start = Instant::now();
        let outcome = match id {
            1 => schedule_suite(),
            2 => gradient_suite(),
            3 => transport_oracle(),
            4 => symmetry_demo(),
            5 => overfit_oracle(),
            6 => closed_loop_ablation(&mut cache),
            7 => representation_ablation(&mut cache),
            8 => classifier_accuracy(),
            9 => determinism(),
            _ => step_economy(&mut cache),
        };
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        say(&format!(
            "{} criterion {id:2} {name} ({:.1} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        ));
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        say("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        say(&format!("acceptance: failed criteria {failed:?}"));
        ExitCode::FAILURE
    }
}
