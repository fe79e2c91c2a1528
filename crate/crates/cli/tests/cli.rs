use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use autolabel::camera::Annotation;
use autolabel::distill::{Provenance, SoftLabelRecord};
use autolabel::eval::EvalReport;
use autolabel::pipeline::{read_jsonl, Paths, PipelineConfig};
use autolabel::teacher::features::write_feature_csv;
use autolabel::teacher::FeatureRecord;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(cfg: impl FnOnce(&mut PipelineConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut c = PipelineConfig {
            paths: Paths {
                scenes_dir: root.join("scenes"),
                work_dir: root.join("work"),
                camera: None,
            },
            train_scenes: 12,
            test_scenes: 4,
            ..Default::default()
        };
        c.hand_labels.per_class = 10;
        c.hand_labels.background = 10;
        cfg(&mut c);
        let config = root.join("config.json");
        std::fs::write(&config, serde_json::to_string_pretty(&c).unwrap()).unwrap();
        Self {
            _dir: dir,
            root,
            config,
        }
    }

    fn cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_autolabel"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.cli(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    fn work(&self, name: &str) -> PathBuf {
        self.root.join("work").join(name)
    }

    fn through_label(&self) {
        for args in [
            &["synth", "--split", "train"][..],
            &["autolabel", "--split", "train"],
            &["simulate-hand-labels"],
            &["train-teacher"],
            &["label"],
        ] {
            self.ok(args);
        }
    }
}

fn exit_code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|d| d.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn synth_zero_scenes_writes_nothing() {
    let run = Run::new(|_| {});
    run.ok(&["synth", "--count", "0"]);
    assert!(files_in(&run.root.join("scenes").join("train")).is_empty());
}

#[test]
fn synth_writes_one_file_set_per_scene() {
    let run = Run::new(|_| {});
    run.ok(&["synth", "--count", "20"]);
    let files = files_in(&run.root.join("scenes").join("train"));
    for ext in [".ply", ".ppm", ".gt.jsonl", ".camera.json"] {
        assert_eq!(
            files.iter().filter(|p| p.to_string_lossy().ends_with(ext)).count(),
            20,
            "{ext}"
        );
    }
}

#[test]
fn synth_and_autolabel_reruns_are_identical() {
    let run = Run::new(|_| {});
    run.ok(&["synth", "--count", "3"]);
    run.ok(&["autolabel"]);
    let snapshot = |run: &Run| {
        let mut all = files_in(&run.root.join("scenes").join("train"));
        all.push(run.work("annotations/train.jsonl"));
        all.into_iter()
            .map(|p| (p.clone(), std::fs::read(p).unwrap()))
            .collect::<Vec<_>>()
    };
    let first = snapshot(&run);
    run.ok(&["synth", "--count", "3"]);
    run.ok(&["autolabel"]);
    assert_eq!(first, snapshot(&run));
}

#[test]
fn autolabel_finds_every_synthetic_object() {
    let run = Run::new(|_| {});
    run.ok(&["synth", "--count", "5"]);
    run.ok(&["autolabel"]);
    let ann: Vec<Annotation> = read_jsonl(&run.work("annotations/train.jsonl")).unwrap();
    assert!(ann.iter().all(|a| a.label.is_none()));
    for i in 0..5 {
        let id = format!("train_{i:04}");
        let found = ann.iter().filter(|a| a.scene_id == id).count();
        assert!((5..=6).contains(&found), "{id}: {found} annotations");
    }
}

#[test]
fn usage_errors_exit_with_2() {
    let run = Run::new(|_| {});
    assert_eq!(
        exit_code(&run.cli(&["train-teacher", "--hand-labels", "/nonexistent/labels.jsonl"])),
        Some(2)
    );
    assert_eq!(exit_code(&run.cli(&["train-student", "--loss", "hinge"])), Some(2));
    assert_eq!(exit_code(&run.cli(&["no-such-command"])), Some(2));

    let missing_camera = Run::new(|c| c.paths.camera = Some("/nonexistent/camera.json".into()));
    missing_camera.ok(&["synth", "--count", "1"]);
    assert_eq!(exit_code(&missing_camera.cli(&["autolabel"])), Some(2));
}

#[test]
fn class_without_hand_labels_exits_with_3() {
    let run = Run::new(|_| {});
    run.ok(&["synth"]);
    run.ok(&["autolabel"]);
    run.ok(&["simulate-hand-labels"]);
    let labels: Vec<Annotation> = read_jsonl(&run.work("hand_labels.jsonl")).unwrap();
    let kept: Vec<String> = labels
        .iter()
        .filter(|a| a.label.as_deref() != Some("sphere_warm"))
        .map(|a| serde_json::to_string(a).unwrap())
        .collect();
    let path = run.root.join("partial.jsonl");
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    let out = run.cli(&["train-teacher", "--hand-labels", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn labeling_covers_every_annotation_and_keeps_hand_labels() {
    let run = Run::new(|_| {});
    run.through_label();
    let ann: Vec<Annotation> = read_jsonl(&run.work("annotations/train.jsonl")).unwrap();
    let hand: Vec<Annotation> = read_jsonl(&run.work("hand_labels.jsonl")).unwrap();
    let soft: Vec<SoftLabelRecord> = read_jsonl(&run.work("soft_labels.jsonl")).unwrap();
    let key = |s: &str, c: i64| (s.to_string(), c);
    let soft_keys: std::collections::HashMap<_, _> = soft.iter().map(|r| (key(&r.scene_id, r.cluster_id), r)).collect();
    for a in &ann {
        assert!(
            soft_keys.contains_key(&a.key()),
            "annotation {:?} lacks a soft label",
            a.key()
        );
    }
    for r in &soft {
        assert!((r.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(r.probs.iter().all(|p| *p >= 0.0));
    }
    let cfg = PipelineConfig::load(&run.config).unwrap();
    for h in &hand {
        let r = soft_keys[&h.key()];
        assert_eq!(r.provenance, Provenance::Hand);
        let class = cfg
            .class_names
            .iter()
            .position(|n| Some(n.as_str()) == h.label.as_deref())
            .unwrap();
        assert_eq!(r.probs[class], 1.0);
    }
    let teacher_labeled = soft.iter().filter(|r| r.provenance == Provenance::Teacher).count();
    assert_eq!(teacher_labeled, soft.len() - hand.len());
    assert!(teacher_labeled > 0);

    // A different extractor cannot reuse the checkpoint.
    let features = run.root.join("features.csv");
    let rows: Vec<FeatureRecord> = ann
        .iter()
        .map(|a| FeatureRecord {
            scene_id: a.scene_id.clone(),
            cluster_id: a.cluster_id,
            label: -1,
            values: vec![0.5; 4],
        })
        .collect();
    write_feature_csv(&features, &rows).unwrap();
    let mut other = cfg.clone();
    other.extractor.id = "precomputed".into();
    other.extractor.path = Some(features);
    let path = run.root.join("other.json");
    std::fs::write(&path, serde_json::to_string(&other).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_autolabel"))
        .arg("--config")
        .arg(&path)
        .arg("label")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn student_training_is_seeded_and_reports_cover_every_class() {
    let run = Run::new(|_| {});
    run.through_label();
    run.ok(&["synth", "--split", "test"]);
    run.ok(&["train-student"]);
    let first = std::fs::read(run.work("student.json")).unwrap();
    run.ok(&["train-student"]);
    assert_eq!(first, std::fs::read(run.work("student.json")).unwrap());

    let out = run.cli(&["eval", "--model", "student"]);
    assert!(out.status.success());
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(run.work("report_student.json")).unwrap()).unwrap();
    let cfg = PipelineConfig::load(&run.config).unwrap();
    for name in &cfg.class_names {
        assert!(report.per_class.contains_key(name), "missing {name}");
    }
    let table = String::from_utf8_lossy(&out.stdout);
    for name in &cfg.class_names[1..] {
        assert!(
            table.lines().any(|l| l.starts_with(name.as_str())),
            "table lacks {name}:\n{table}"
        );
    }
    assert!(run.work("pr_student.csv").exists());
}

#[test]
fn empty_soft_label_set_exits_with_3() {
    let run = Run::new(|_| {});
    std::fs::create_dir_all(run.root.join("work")).unwrap();
    std::fs::write(run.work("soft_labels.jsonl"), "").unwrap();
    assert_eq!(exit_code(&run.cli(&["train-student"])), Some(3));
}

#[test]
fn desk_scale_teacher_trains_within_budget() {
    let run = Run::new(|c| {
        let d = PipelineConfig::default();
        c.train_scenes = d.train_scenes;
        c.hand_labels = d.hand_labels.clone();
    });
    run.ok(&["synth"]);
    run.ok(&["autolabel"]);
    run.ok(&["simulate-hand-labels"]);
    let t0 = Instant::now();
    let out = run.cli(&["train-teacher"]);
    let elapsed = t0.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed < Duration::from_secs(120), "teacher took {elapsed:?}");
    let hand: Vec<Annotation> = read_jsonl(&run.work("hand_labels.jsonl")).unwrap();
    assert!(hand.len() >= 6 * 30);
    let trace = autolabel::teacher::TeacherModel::load(&run.work("teacher.json"))
        .unwrap()
        .trace
        .unwrap();
    assert!(trace.epoch_elbo.last().unwrap() > trace.epoch_elbo.first().unwrap());
}
