use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anchorbridge::pipeline::ReportFile;
use anchorbridge::sampling::Trace;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anchorbridge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn anchorbridge")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A seconds-scale config and a two-seed suite under `dir`.
fn write_config(dir: &Path, kind: &str) -> PathBuf {
    let suite = dir.join("suite.toml");
    std::fs::write(
        &suite,
        "kinds = [\"lane-fork\", \"parked-overtake\", \"emergency-brake\", \"merge-lite\"]\n\
         seed_start = 1000\nseed_count = 2\nroute_length = 150.0\ncruise_speed = 8.0\nmax_time = 40.0\n",
    )
    .unwrap();
    let cfg = dir.join(format!("{kind}.toml"));
    std::fs::write(
        &cfg,
        format!(
            "kind = \"{kind}\"\nseed = 3\nsuite = \"{}\"\nout_dir = \"{}\"\n\n\
             [train]\nepochs = 1\nbatch_size = 64\ndenoiser_hidden = [16]\nclassifier_hidden = [16]\nclassifier_features = 8\n\n\
             [collect]\nepisodes_per_kind = 3\n",
            s(&suite),
            s(&dir.join("out"))
        ),
    )
    .unwrap();
    cfg
}

fn polyline(doc: &roxmltree::Document, id: &str) -> Option<Vec<f64>> {
    let node = doc.descendants().find(|n| n.attribute("id") == Some(id))?;
    Some(
        node.attribute("points")?
            .split([' ', ','])
            .map(|v| v.parse().unwrap())
            .collect(),
    )
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_config(dir, "geometric");
    let out = dir.join("out");

    ok(&["generate-data", "--config", s(&cfg)]);
    let dataset = out.join("dataset.txt");
    assert!(dataset.exists());

    let fit = ok(&["fit-anchors", "--config", s(&cfg), "--dataset", s(&dataset)]);
    assert!(String::from_utf8_lossy(&fit.stderr).contains("20 anchors"));
    let anchors = out.join("anchors.txt");

    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&dataset),
        "--anchors",
        s(&anchors),
    ]);
    let ckpt = out.join("bridge.ckpt");
    let log = std::fs::read_to_string(out.join("bridge_loss.csv")).unwrap();
    assert!(log.starts_with("# version=1 variant=bridge config_hash="));
    assert_eq!(log.lines().count(), 3);

    let trace_path = dir.join("trace.csv");
    let plan = ok(&[
        "plan",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--anchors",
        s(&anchors),
        "--scenario",
        "parked-overtake",
        "--tick",
        "10",
        "--trace",
        s(&trace_path),
    ]);
    let traj: serde_json::Value = serde_json::from_slice(&plan.stdout).unwrap();
    assert_eq!(traj["kind"], "geometric");
    assert_eq!(traj["points"].as_array().unwrap().len(), 10);
    assert!(traj["speed"].as_f64().unwrap().is_finite());

    let trace = Trace::from_csv(&std::fs::read_to_string(&trace_path).unwrap()).unwrap();
    assert_eq!(trace.steps.len(), 21);
    assert_eq!(trace.seed, 3);

    let frames = dir.join("frames");
    ok(&["render", "--trace", s(&trace_path), "--out", s(&frames)]);
    let mut names: Vec<_> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), trace.steps.len());
    assert_eq!(names[0], "frame_000.svg");
    for (k, name) in names.iter().enumerate() {
        let text = std::fs::read_to_string(frames.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let state = polyline(&doc, "state").unwrap();
        assert_eq!(&state[..2], &[0.0, 0.0]);
        assert_eq!(state[2..], trace.steps[k].state[..20]);
    }
    let first = std::fs::read_to_string(frames.join(&names[0])).unwrap();
    let doc = roxmltree::Document::parse(&first).unwrap();
    let anchor = polyline(&doc, "anchor").unwrap();
    assert_eq!(anchor[2..], trace.anchor[..20]);
    assert_eq!(trace.steps[0].state, trace.anchor);

    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--anchors",
        s(&anchors),
    ]);
    let report = ReportFile::from_json(&std::fs::read_to_string(out.join("bridge_report.json")).unwrap()).unwrap();
    assert_eq!(report.report.episodes, 8);
    assert_eq!(report.seed, 3);
}

#[test]
fn full_variant_trains_without_anchor_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "temporal");
    let dataset = tmp.path().join("data.txt");
    ok(&["generate-data", "--config", s(&cfg), "--out", s(&dataset)]);
    let ckpt = tmp.path().join("full.ckpt");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&dataset),
        "--variant",
        "full",
        "--out",
        s(&ckpt),
    ]);
    let trace_path = tmp.path().join("t.csv");
    ok(&[
        "plan",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&ckpt),
        "--trace",
        s(&trace_path),
    ]);
    let trace = Trace::from_csv(&std::fs::read_to_string(&trace_path).unwrap()).unwrap();
    assert_eq!(trace.steps.len(), 101);
    let frames = tmp.path().join("frames");
    ok(&["render", "--trace", s(&trace_path), "--out", s(&frames)]);
    let text = std::fs::read_to_string(frames.join("frame_000.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert!(polyline(&doc, "anchor").is_none());
}

#[test]
fn missing_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = run(&["generate-data", "--config", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let cfg = write_config(tmp.path(), "geometric");
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--dataset",
        s(&tmp.path().join("absent.txt")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&[
        "render",
        "--trace",
        s(&tmp.path().join("absent.csv")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bridge_training_requires_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "geometric");
    let dataset = tmp.path().join("data.txt");
    ok(&["generate-data", "--config", s(&cfg), "--out", s(&dataset)]);
    let out = run(&["train", "--config", s(&cfg), "--dataset", s(&dataset)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--anchors"));
}

#[test]
fn representation_mismatch_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let geo = write_config(tmp.path(), "geometric");
    let temporal = write_config(tmp.path(), "temporal");
    let dataset = tmp.path().join("data.txt");
    let anchors = tmp.path().join("anchors.txt");
    let ckpt = tmp.path().join("b.ckpt");
    ok(&["generate-data", "--config", s(&geo), "--out", s(&dataset)]);
    ok(&[
        "fit-anchors",
        "--config",
        s(&geo),
        "--dataset",
        s(&dataset),
        "--out",
        s(&anchors),
    ]);
    ok(&[
        "train",
        "--config",
        s(&geo),
        "--dataset",
        s(&dataset),
        "--anchors",
        s(&anchors),
        "--out",
        s(&ckpt),
    ]);

    let out = run(&[
        "plan",
        "--config",
        s(&temporal),
        "--checkpoint",
        s(&ckpt),
        "--anchors",
        s(&anchors),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("geometric"));

    let out = run(&["fit-anchors", "--config", s(&temporal), "--dataset", s(&dataset)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "geometric");
    let ckpt = tmp.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"ABRGCKPT garbage").unwrap();
    let out = run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(1));
}
