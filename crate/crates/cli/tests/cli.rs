use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segfactory::dataset::{import_coco, DatasetManifest};
use segfactory::imaging::{DepthImage, RasterImage};
use segfactory::labeler::{Decision, DecisionSource};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_segfactory"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_in(manifest: &Path, args: &[&str]) -> Output {
    bin().arg("--manifest").arg(manifest).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Synthetic dataset, labeled and banked.
fn prepared(dir: &Path, count: usize) -> PathBuf {
    let m = dir.join("ds").join("manifest.json");
    ok(&run_in(&m, &["synth", "--count", &count.to_string(), "--seed", "2"]));
    ok(&run_in(&m, &["label"]));
    ok(&run_in(&m, &["bank"]));
    m
}

#[test]
fn eval_of_identical_files_prints_one() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    ok(&run_in(&m, &["synth", "--count", "3"]));
    let gt = dir.path().join("ground_truth.json");
    let out = bin()
        .args(["eval", "--gt"])
        .arg(&gt)
        .arg("--pred")
        .arg(&gt)
        .output()
        .unwrap();
    let stdout = ok(&out);
    assert_eq!(stdout.lines().next(), Some("mAP 1.000"));
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(&dir.path().join("absent.json"), &["label"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--manifest"), "{err}");
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(
        bin()
            .args(["augment", "--kind", "sideways", "--count", "1"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn bad_config_and_jobs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    ok(&run_in(&m, &["synth", "--count", "1"]));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"labeller": {}}"#).unwrap();
    let out = bin()
        .arg("--manifest")
        .arg(&m)
        .arg("--config")
        .arg(&cfg)
        .arg("label")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(&cfg, r#"{"augment": {"count_min": 9, "count_max": 2}}"#).unwrap();
    let out = bin()
        .arg("--manifest")
        .arg(&m)
        .arg("--config")
        .arg(&cfg)
        .arg("label")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run_in(&m, &["--jobs", "0", "label"]).status.code(), Some(1));
}

#[test]
fn eval_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a").join("manifest.json");
    let b = dir.path().join("b").join("manifest.json");
    ok(&run_in(&a, &["synth", "--count", "2"]));
    ok(&run_in(&b, &["synth", "--count", "3"]));
    let out = bin()
        .args(["eval", "--gt"])
        .arg(a.with_file_name("ground_truth.json"))
        .arg("--pred")
        .arg(b.with_file_name("ground_truth.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{").unwrap();
    let out = bin()
        .args(["eval", "--gt"])
        .arg(&garbage)
        .arg("--pred")
        .arg(&garbage)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn set_files(root: &Path, set: &str) -> Vec<(String, Vec<u8>)> {
    let dir = root.join("generated").join(set);
    let mut files = vec![(
        "annotations.json".to_string(),
        std::fs::read(dir.join("annotations.json")).unwrap(),
    )];
    let mut images: Vec<_> = std::fs::read_dir(dir.join("images"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    images.sort();
    for p in images {
        files.push((
            p.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&p).unwrap(),
        ));
    }
    files
}

#[test]
fn augment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = prepared(dir.path(), 8);
    let root = m.parent().unwrap();
    ok(&run_in(
        &m,
        &[
            "augment", "--kind", "plain", "--count", "10", "--seed", "7", "--name", "a",
        ],
    ));
    ok(&run_in(
        &m,
        &[
            "--jobs", "1", "augment", "--kind", "plain", "--count", "10", "--seed", "7", "--name", "b",
        ],
    ));
    let a = set_files(root, "a");
    assert_eq!(a.len(), 11);
    assert_eq!(a, set_files(root, "b"));
    let summary = |n: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(root.join("generated").join(n).join("augment.summary.json")).unwrap())
            .unwrap()
    };
    assert_eq!(summary("a")["digests"], summary("b")["digests"]);
    ok(&run_in(
        &m,
        &[
            "augment", "--kind", "plain", "--count", "10", "--seed", "8", "--name", "c",
        ],
    ));
    assert_ne!(a, set_files(root, "c"));

    let manifest = DatasetManifest::load(&m).unwrap();
    let names: Vec<&str> = manifest.generated_sets.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, ["a", "b", "c"]);
    let coco = import_coco(root.join("generated/a/annotations.json")).unwrap();
    assert_eq!(coco.images.len(), 10);
    assert!(!coco.annotations.is_empty());
}

#[test]
fn every_kind_generates() {
    let dir = tempfile::tempdir().unwrap();
    let m = prepared(dir.path(), 9);
    let bgs = dir.path().join("bgs");
    std::fs::create_dir_all(&bgs).unwrap();
    for i in 0..3u8 {
        RasterImage::filled(200, 150, &[40 * i, 90, 200 - 30 * i])
            .unwrap()
            .save_png(bgs.join(format!("{i}.png")))
            .unwrap();
    }
    assert_eq!(
        run_in(&m, &["augment", "--kind", "random-background", "--count", "2"])
            .status
            .code(),
        Some(1)
    );
    let bg_arg = bgs.to_str().unwrap();
    ok(&run_in(
        &m,
        &[
            "augment",
            "--kind",
            "random-background",
            "--count",
            "4",
            "--backgrounds",
            bg_arg,
        ],
    ));
    ok(&run_in(&m, &["augment", "--kind", "neighboring", "--count", "4"]));
    ok(&run_in(&m, &["augment", "--kind", "relight", "--count", "4"]));
    let root = m.parent().unwrap();
    let img = RasterImage::load_png(root.join("generated/random-background/images/000000.png")).unwrap();
    assert_eq!(img.dims(), (200, 150));
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("generated/relight/sidecars/000001.json")).unwrap()).unwrap();
    assert!(sidecar["lighting"]["spot"].is_object());
}

#[test]
fn select_keeps_human_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let m = prepared(dir.path(), 4);
    let mut manifest = DatasetManifest::load(&m).unwrap();
    manifest
        .set_decision("scene-0002", Decision::Reject, DecisionSource::Human, None)
        .unwrap();
    manifest.save(&m).unwrap();
    ok(&run_in(&m, &["select"]));
    let after = DatasetManifest::load(&m).unwrap();
    assert_eq!(after.scenes[2].decision(), Decision::Reject);
    assert!(after
        .scenes
        .iter()
        .enumerate()
        .all(|(i, s)| i == 2 || s.decision() != Decision::Undecided));
    // relabeling does not discard it either
    ok(&run_in(&m, &["label"]));
    assert_eq!(
        DatasetManifest::load(&m).unwrap().scenes[2].decision(),
        Decision::Reject
    );
    assert!(m.with_file_name("select.summary.json").is_file());
}

#[test]
fn export_matches_selection() {
    let dir = tempfile::tempdir().unwrap();
    let m = prepared(dir.path(), 5);
    let out = dir.path().join("out").join("coco.json");
    ok(&run_in(&m, &["export", "--out", out.to_str().unwrap()]));
    let coco = import_coco(&out).unwrap();
    let manifest = DatasetManifest::load(&m).unwrap();
    assert_eq!(coco, manifest.selected());
    assert!(out.with_file_name("export.summary.json").is_file());
}

#[test]
fn unreadable_scene_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    ok(&run_in(&m, &["synth", "--count", "3"]));
    std::fs::write(dir.path().join("scenes/scene-0001/image.png"), b"not a png").unwrap();
    ok(&run_in(&m, &["label"]));
    let manifest = DatasetManifest::load(&m).unwrap();
    assert!(manifest.scenes[1].error.is_some());
    assert!(manifest.scenes[0].candidates.is_some() && manifest.scenes[2].candidates.is_some());
}

#[test]
fn downscale_writes_a_consistent_copy() {
    let dir = tempfile::tempdir().unwrap();
    let m = prepared(dir.path(), 3);
    ok(&run_in(&m, &["augment", "--kind", "plain", "--count", "2"]));
    let out = dir.path().join("small");
    ok(&run_in(
        &m,
        &["downscale", "--factor", "4", "--out", out.to_str().unwrap()],
    ));
    let small = DatasetManifest::load(out.join("manifest.json")).unwrap();
    let big = DatasetManifest::load(&m).unwrap();
    for (s, b) in small.scenes.iter().zip(&big.scenes) {
        let img = RasterImage::load_png(out.join(&s.record.image_path)).unwrap();
        assert_eq!(img.dims(), (80, 60));
        let d = DepthImage::load_png(out.join(s.record.depth_path.as_ref().unwrap())).unwrap();
        assert_eq!(d.dims(), (80, 60));
        assert_eq!(s.record.turntable.radius * 4.0, b.record.turntable.radius);
        let c = s.candidates.as_ref().unwrap();
        assert_eq!((c.image_width, c.image_height), (80, 60));
        assert_eq!(c.decision, b.candidates.as_ref().unwrap().decision);
        assert!(out
            .join(s.record.image_path.parent().unwrap())
            .join("overlays/hsv.png")
            .is_file());
    }
    let coco = import_coco(out.join("generated/plain/annotations.json")).unwrap();
    for a in &coco.annotations {
        assert_eq!(Some(a.bbox()), a.mask().bbox());
    }
    assert_eq!(
        run_in(&m, &["downscale", "--factor", "7", "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
