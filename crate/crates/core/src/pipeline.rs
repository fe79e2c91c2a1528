//! File-based pipeline stages: scene synthesis, 3D auto-labeling, simulated
//! hand labels, teacher training and labeling, student training and
//! evaluation. Every stage reads and writes plain files under the scene and
//! work directories so each can be rerun on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{cluster_to_bbox, crop_thumbnail, Annotation, BBox2D, CameraModel};
use crate::cloud::{load_cloud, CloudFormat};
use crate::distill::{
    student_predict_batch, train_student, DistillConfig, Provenance, SoftLabel, SoftLabelRecord, StudentArch,
    StudentCheckpoint, StudentModel, STUDENT_CHECKPOINT_VERSION,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, match_boxes, Detection, EvalReport, GroundTruthBox, MatchConfig};
use crate::image::RgbImage;
use crate::objectness::{detect_objects, ObjectnessConfig};
use crate::scale::Standardizer;
use crate::synth::{
    generate_scene, random_scene_spec, read_ground_truth, write_scene, SceneFiles, SynthConfig, BACKGROUND,
};
use crate::teacher::features::{write_feature_csv, FeatureExtractor, FeatureRecord};
use crate::teacher::{init_svgp, train_teacher, ExtractorSpec, SvgpInit, TeacherModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Teacher,
    Student,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Teacher => "teacher",
            ModelKind::Student => "student",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(ModelKind::Teacher),
            "student" => Ok(ModelKind::Student),
            other => Err(Error::config(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub scenes_dir: PathBuf,
    pub work_dir: PathBuf,
    /// Camera used for every scene instead of the per-scene camera files.
    pub camera: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            scenes_dir: PathBuf::from("scenes"),
            work_dir: PathBuf::from("work"),
            camera: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandLabelConfig {
    /// Labeled thumbnails drawn per object class.
    pub per_class: usize,
    /// Table crops labeled as background.
    pub background: usize,
    /// Side length range of background crops, pixels.
    pub background_size: [u32; 2],
    /// Minimum IoU between a proposal and an object for the object's label to apply.
    pub min_iou: f64,
}

impl Default for HandLabelConfig {
    fn default() -> Self {
        Self {
            per_class: 30,
            background: 30,
            background_size: [30, 90],
            min_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub init: SvgpInit,
    pub train: TrainConfig,
    /// Monte-Carlo samples for prediction.
    pub mc_samples: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            init: SvgpInit::default(),
            train: TrainConfig::default(),
            mc_samples: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub class_names: Vec<String>,
    pub synth: SynthConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub objectness: ObjectnessConfig,
    pub extractor: ExtractorSpec,
    pub hand_labels: HandLabelConfig,
    pub teacher: TeacherConfig,
    pub distill: DistillConfig,
    pub matching: MatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let mut objectness = ObjectnessConfig::default();
        // Tabletop scenes have one support surface.
        objectness.ransac.max_planes = 1;
        Self {
            seed: 0,
            paths: Paths::default(),
            class_names: synth.roster().map(|r| r.class_names()).unwrap_or_default(),
            synth,
            train_scenes: 60,
            test_scenes: 20,
            objectness,
            extractor: ExtractorSpec::default(),
            hand_labels: HandLabelConfig::default(),
            teacher: TeacherConfig::default(),
            distill: DistillConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.first().map(String::as_str) != Some(BACKGROUND) {
            return Err(Error::config(format!("class_names must start with '{BACKGROUND}'")));
        }
        if self.class_names.len() < 2 {
            return Err(Error::config("need at least one object class"));
        }
        let unique: BTreeSet<&String> = self.class_names.iter().collect();
        if unique.len() != self.class_names.len() {
            return Err(Error::config("duplicate class names"));
        }
        self.objectness.connectability.validate()?;
        self.teacher.train.validate()?;
        self.distill.validate()?;
        self.matching.validate()?;
        Ok(())
    }

    pub fn scene_dir(&self, split: Split) -> PathBuf {
        self.paths.scenes_dir.join(split.name())
    }

    pub fn annotations_path(&self, split: Split) -> PathBuf {
        self.paths
            .work_dir
            .join("annotations")
            .join(format!("{}.jsonl", split.name()))
    }

    pub fn thumbnail_dir(&self, split: Split) -> PathBuf {
        self.paths.work_dir.join("thumbnails").join(split.name())
    }

    pub fn hand_labels_path(&self) -> PathBuf {
        self.paths.work_dir.join("hand_labels.jsonl")
    }

    pub fn teacher_path(&self) -> PathBuf {
        self.paths.work_dir.join("teacher.json")
    }

    pub fn soft_labels_path(&self) -> PathBuf {
        self.paths.work_dir.join("soft_labels.jsonl")
    }

    pub fn student_path(&self) -> PathBuf {
        self.paths.work_dir.join("student.json")
    }

    pub fn report_path(&self, model: ModelKind) -> PathBuf {
        self.paths.work_dir.join(format!("report_{}.json", model.name()))
    }

    pub fn pr_path(&self, model: ModelKind) -> PathBuf {
        self.paths.work_dir.join(format!("pr_{}.csv", model.name()))
    }

    fn class_index(&self, name: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::data(format!("unknown class '{name}'")))
    }
}

/// Seed for a named stage derived from the root seed.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ root.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Scene ids in a directory, sorted.
pub fn list_scenes(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".ply"))
                .map(str::to_string)
        })
        .collect();
    ids.sort();
    Ok(ids)
}

/// Generates `n` scenes of a split. Returns the scene ids.
pub fn synth_scenes(cfg: &PipelineConfig, split: Split, n: usize) -> Result<Vec<String>> {
    let class_names = cfg.synth.roster()?.class_names();
    if class_names != cfg.class_names {
        return Err(Error::config("class_names do not match the synthetic class roster"));
    }
    let dir = cfg.scene_dir(split);
    if n == 0 {
        return Ok(Vec::new());
    }
    create_dir(&dir)?;
    (0..n)
        .map(|i| {
            let id = format!("{}_{i:04}", split.name());
            let spec = random_scene_spec(&cfg.synth, &id, stage_seed(cfg.seed, &format!("synth/{id}")))?;
            let scene = generate_scene(&spec)?;
            write_scene(&dir, &spec, &scene, &class_names)?;
            Ok(id)
        })
        .collect()
}

fn scene_camera(cfg: &PipelineConfig, files: &SceneFiles) -> Result<CameraModel> {
    CameraModel::load(cfg.paths.camera.as_deref().unwrap_or(&files.camera))
}

/// Object proposals of one scene as boxes with their cluster index.
pub fn propose_boxes(cfg: &PipelineConfig, dir: &Path, scene_id: &str) -> Result<(Vec<BBox2D>, RgbImage)> {
    let files = SceneFiles::new(dir, scene_id);
    let camera = scene_camera(cfg, &files)?;
    let cloud = load_cloud(&files.cloud, CloudFormat::from_path(&files.cloud)?)?;
    let frame = RgbImage::load(&files.frame)?;
    let det = detect_objects(&cloud, &cfg.objectness, &camera.center())?;
    let boxes = det
        .clusters
        .iter()
        .enumerate()
        .filter_map(|(i, c)| cluster_to_bbox(&camera, c, &det.grid, i as i64))
        .filter(|b| b.fits(frame.width, frame.height))
        .collect();
    Ok((boxes, frame))
}

/// Runs objectness on every scene of a split and writes unlabeled
/// annotations plus thumbnails. Returns the number of annotations.
pub fn autolabel(cfg: &PipelineConfig, split: Split) -> Result<usize> {
    let dir = cfg.scene_dir(split);
    let thumbs = cfg.thumbnail_dir(split);
    create_dir(&thumbs)?;
    let mut annotations = Vec::new();
    for id in list_scenes(&dir)? {
        let (boxes, frame) = propose_boxes(cfg, &dir, &id)?;
        for b in boxes {
            let thumb = crop_thumbnail(&frame, &b, &id)?;
            thumb
                .image
                .save(&thumbs.join(format!("{id}_{:03}.ppm", b.source_cluster)))?;
            annotations.push(Annotation::unlabeled(&id, &b));
        }
    }
    write_jsonl(&cfg.annotations_path(split), &annotations)?;
    Ok(annotations.len())
}

fn ground_truth_boxes(cfg: &PipelineConfig, dir: &Path, scene_id: &str) -> Result<Vec<GroundTruthBox>> {
    let files = SceneFiles::new(dir, scene_id);
    Ok(read_ground_truth(&files.ground_truth)?
        .into_iter()
        .filter_map(|o| o.bbox2d().map(|bbox| GroundTruthBox { bbox, class: o.class }))
        .filter(|g| g.class < cfg.class_names.len())
        .collect())
}

fn overlaps(a: &BBox2D, b: &BBox2D) -> bool {
    a.u_min <= b.u_max && b.u_min <= a.u_max && a.v_min <= b.v_max && b.v_min <= a.v_max
}

/// Stands in for a human annotator: labels a random subset of training
/// proposals per class from ground truth and adds background crops of bare
/// table. Returns the number of labeled thumbnails.
pub fn simulate_hand_labels(cfg: &PipelineConfig) -> Result<usize> {
    let dir = cfg.scene_dir(Split::Train);
    let annotations: Vec<Annotation> = read_jsonl(&cfg.annotations_path(Split::Train))?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.seed, "hand-labels"));
    let hl = &cfg.hand_labels;
    let match_cfg = MatchConfig {
        iou_threshold: hl.min_iou,
    };

    let mut by_scene: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for a in &annotations {
        by_scene.entry(a.scene_id.as_str()).or_default().push(a);
    }
    let mut candidates: Vec<Vec<Annotation>> = vec![Vec::new(); cfg.class_names.len()];
    let mut background_pool: Vec<(String, Vec<BBox2D>, u32, u32)> = Vec::new();
    for id in list_scenes(&dir)? {
        let gt = ground_truth_boxes(cfg, &dir, &id)?;
        let props = by_scene.get(id.as_str()).cloned().unwrap_or_default();
        let dets: Vec<Detection> = props
            .iter()
            .map(|a| Detection {
                bbox: a.bbox(),
                class: 0,
                confidence: 1.0,
            })
            .collect();
        let m = match_boxes(&dets, &gt, &match_cfg);
        for (p, g, _) in m.true_positives {
            let mut a = props[p].clone();
            a.label = Some(cfg.class_names[gt[g].class].clone());
            candidates[gt[g].class].push(a);
        }
        let camera = scene_camera(cfg, &SceneFiles::new(&dir, &id))?;
        let mut occupied: Vec<BBox2D> = gt.iter().map(|g| g.bbox).collect();
        occupied.extend(props.iter().map(|a| a.bbox()));
        background_pool.push((id, occupied, camera.width, camera.height));
    }

    let mut labeled = Vec::new();
    for (class, mut pool) in candidates.into_iter().enumerate().skip(1) {
        pool.shuffle(&mut rng);
        pool.truncate(hl.per_class);
        if pool.is_empty() {
            return Err(Error::data(format!(
                "no proposals match class '{}'",
                cfg.class_names[class]
            )));
        }
        labeled.extend(pool);
    }

    // Background crops from the lower half of the frame, where the table is.
    let mut made = 0;
    let mut tries = 0;
    while made < hl.background && !background_pool.is_empty() {
        tries += 1;
        if tries > 100 * hl.background.max(1) {
            return Err(Error::data("could not place background crops"));
        }
        let (id, occupied, w, h) = &background_pool[rng.random_range(0..background_pool.len())];
        let side = rng.random_range(hl.background_size[0]..=hl.background_size[1]);
        let aspect = rng.random_range(0.6..1.6);
        let bw = ((side as f64 * aspect).round() as u32).clamp(8, *w);
        let bh = side.clamp(8, *h / 2);
        let u0 = rng.random_range(0..=w - bw);
        let v0 = rng.random_range(h / 2..=h - bh);
        let b = BBox2D::new([u0, v0, u0 + bw - 1, v0 + bh - 1], -(made as i64 + 1));
        if occupied.iter().any(|o| overlaps(o, &b)) {
            continue;
        }
        let mut a = Annotation::unlabeled(id, &b);
        a.label = Some(BACKGROUND.to_string());
        labeled.push(a);
        made += 1;
    }
    labeled.sort_by_key(|a| a.key());
    write_jsonl(&cfg.hand_labels_path(), &labeled)?;
    Ok(labeled.len())
}

/// Feature rows for boxed regions, cropping each scene frame once.
fn features_for(cfg: &PipelineConfig, dir: &Path, items: &[(String, BBox2D)]) -> Result<(DMatrix<f64>, String)> {
    let extractor = FeatureExtractor::from_spec(&cfg.extractor)?;
    let mut frames: BTreeMap<&str, RgbImage> = BTreeMap::new();
    let mut rows = Vec::with_capacity(items.len());
    for (scene, bbox) in items {
        if !frames.contains_key(scene.as_str()) {
            frames.insert(scene, RgbImage::load(&SceneFiles::new(dir, scene).frame)?);
        }
        let thumb = crop_thumbnail(&frames[scene.as_str()], bbox, scene)?;
        rows.push(extractor.extract(&thumb)?.values);
    }
    let dim = extractor.dim();
    Ok((
        DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]),
        extractor.id().to_string(),
    ))
}

/// Summary returned by training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub examples: usize,
    pub first: f64,
    pub last: f64,
}

/// Trains the GP teacher on the hand-labeled thumbnails.
pub fn train_teacher_stage(cfg: &PipelineConfig, hand_labels: &Path) -> Result<TrainSummary> {
    let labeled: Vec<Annotation> = read_jsonl(hand_labels)?;
    let mut y = Vec::with_capacity(labeled.len());
    for a in &labeled {
        let name = a
            .label
            .as_deref()
            .ok_or_else(|| Error::data(format!("unlabeled entry {:?} in hand labels", a.key())))?;
        y.push(cfg.class_index(name)?);
    }
    let mut counts = vec![0usize; cfg.class_names.len()];
    y.iter().for_each(|&c| counts[c] += 1);
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::data(format!(
            "class '{}' has no hand labels",
            cfg.class_names[k]
        )));
    }

    let dir = cfg.scene_dir(Split::Train);
    let items: Vec<(String, BBox2D)> = labeled.iter().map(|a| (a.scene_id.clone(), a.bbox())).collect();
    let (x_raw, extractor_id) = features_for(cfg, &dir, &items)?;
    create_dir(&cfg.paths.work_dir.join("features"))?;
    let records: Vec<FeatureRecord> = labeled
        .iter()
        .zip(&y)
        .enumerate()
        .map(|(i, (a, &c))| FeatureRecord {
            scene_id: a.scene_id.clone(),
            cluster_id: a.cluster_id,
            label: c as i64,
            values: x_raw.row(i).iter().copied().collect(),
        })
        .collect();
    write_feature_csv(&cfg.paths.work_dir.join("features").join("hand.csv"), &records)?;

    let scaling = Standardizer::fit(&x_raw);
    let x = scaling.apply(&x_raw);
    let seed = stage_seed(cfg.seed, "train-teacher");
    let init = init_svgp(&x, cfg.class_names.len(), &cfg.teacher.init, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.teacher.train.clone()
    };
    let (svgp, trace) = train_teacher(&init, &x, &y, &train_cfg)?;
    let summary = TrainSummary {
        examples: y.len(),
        first: trace.epoch_elbo[0],
        last: *trace.epoch_elbo.last().expect("epochs >= 1"),
    };
    let model = TeacherModel {
        svgp,
        class_names: cfg.class_names.clone(),
        extractor_id,
        input_scaling: scaling,
        mc_samples: cfg.teacher.mc_samples,
        trace: Some(trace),
    };
    create_dir(&cfg.paths.work_dir)?;
    model.save(&cfg.teacher_path())?;
    Ok(summary)
}

fn load_teacher(cfg: &PipelineConfig, path: &Path) -> Result<TeacherModel> {
    let teacher = TeacherModel::load(path)?;
    let extractor = FeatureExtractor::from_spec(&cfg.extractor)?;
    if teacher.extractor_id != extractor.id() || teacher.input_scaling.dim() != extractor.dim() {
        return Err(Error::data(format!(
            "teacher was trained on '{}' features, configuration uses '{}'",
            teacher.extractor_id,
            extractor.id()
        )));
    }
    if teacher.class_names != cfg.class_names {
        return Err(Error::data("teacher class names differ from the configuration"));
    }
    Ok(teacher)
}

/// Labels every training proposal with the teacher; hand labels are kept
/// as one-hot records. Returns the number of records written.
pub fn label_stage(cfg: &PipelineConfig, checkpoint: &Path) -> Result<usize> {
    let teacher = load_teacher(cfg, checkpoint)?;
    let annotations: Vec<Annotation> = read_jsonl(&cfg.annotations_path(Split::Train))?;
    let hand: Vec<Annotation> = read_jsonl(&cfg.hand_labels_path())?;
    let hand_keys: BTreeSet<(String, i64)> = hand.iter().map(Annotation::key).collect();
    let c = cfg.class_names.len();

    let mut records: Vec<SoftLabelRecord> = Vec::new();
    for a in &hand {
        let class = cfg.class_index(a.label.as_deref().unwrap_or_default())?;
        records.push(SoftLabelRecord {
            scene_id: a.scene_id.clone(),
            cluster_id: a.cluster_id,
            bbox: a.bbox,
            probs: SoftLabel::one_hot(class, c, Provenance::Hand).probs,
            provenance: Provenance::Hand,
            temperature_applied: None,
        });
    }
    let pending: Vec<&Annotation> = annotations.iter().filter(|a| !hand_keys.contains(&a.key())).collect();
    if !pending.is_empty() {
        let items: Vec<(String, BBox2D)> = pending.iter().map(|a| (a.scene_id.clone(), a.bbox())).collect();
        let (x, _) = features_for(cfg, &cfg.scene_dir(Split::Train), &items)?;
        let labels = teacher.predict(&x, stage_seed(cfg.seed, "label"))?;
        for (a, l) in pending.iter().zip(labels) {
            records.push(SoftLabelRecord {
                scene_id: a.scene_id.clone(),
                cluster_id: a.cluster_id,
                bbox: a.bbox,
                probs: l.probs,
                provenance: Provenance::Teacher,
                temperature_applied: None,
            });
        }
    }
    records.sort_by(|a, b| (&a.scene_id, a.cluster_id).cmp(&(&b.scene_id, b.cluster_id)));
    write_jsonl(&cfg.soft_labels_path(), &records)?;
    Ok(records.len())
}

/// Distills the soft labels into the student network.
pub fn train_student_stage(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let records: Vec<SoftLabelRecord> = read_jsonl(&cfg.soft_labels_path())?;
    if records.is_empty() {
        return Err(Error::data("no soft labels to train on"));
    }
    let c = cfg.class_names.len();
    if let Some(r) = records.iter().find(|r| r.probs.len() != c) {
        return Err(Error::data(format!(
            "soft label for {}/{} has {} classes",
            r.scene_id,
            r.cluster_id,
            r.probs.len()
        )));
    }
    let items: Vec<(String, BBox2D)> = records
        .iter()
        .map(|r| (r.scene_id.clone(), BBox2D::new(r.bbox, r.cluster_id)))
        .collect();
    let (x, extractor_id) = features_for(cfg, &cfg.scene_dir(Split::Train), &items)?;
    let targets: Vec<Vec<f64>> = records.iter().map(|r| r.probs.clone()).collect();
    let seed = stage_seed(cfg.seed, "train-student");
    let arch = StudentArch {
        input_dim: x.ncols(),
        hidden: cfg.distill.hidden.clone(),
        num_classes: c,
    };
    let init = StudentModel::new(arch, seed)?;
    let dcfg = DistillConfig {
        seed,
        ..cfg.distill.clone()
    };
    let (model, trace) = train_student(&init, &x, &targets, &dcfg)?;
    let summary = TrainSummary {
        examples: records.len(),
        first: trace.first().map_or(f64::NAN, |e| e.loss),
        last: trace.last().map_or(f64::NAN, |e| e.loss),
    };
    create_dir(&cfg.paths.work_dir)?;
    StudentCheckpoint {
        format_version: STUDENT_CHECKPOINT_VERSION,
        class_names: cfg.class_names.clone(),
        extractor_id,
        config: dcfg,
        model,
        trace,
    }
    .save(&cfg.student_path())?;
    Ok(summary)
}

/// Detects and classifies objects in the held-out scenes and scores them
/// against ground truth. Proposals classified as background are dropped.
pub fn eval_stage(cfg: &PipelineConfig, model: ModelKind) -> Result<EvalReport> {
    let dir = cfg.scene_dir(Split::Test);
    let scenes = list_scenes(&dir)?;
    if scenes.is_empty() {
        return Err(Error::data(format!("no held-out scenes in {}", dir.display())));
    }
    enum Classifier {
        Teacher(TeacherModel),
        Student(StudentModel),
    }
    let classifier = match model {
        ModelKind::Teacher => Classifier::Teacher(load_teacher(cfg, &cfg.teacher_path())?),
        ModelKind::Student => {
            let ck = StudentCheckpoint::load(&cfg.student_path())?;
            if ck.class_names != cfg.class_names {
                return Err(Error::data("student class names differ from the configuration"));
            }
            Classifier::Student(ck.model)
        }
    };

    let mut per_scene = Vec::with_capacity(scenes.len());
    for id in &scenes {
        let (boxes, _) = propose_boxes(cfg, &dir, id)?;
        let gt = ground_truth_boxes(cfg, &dir, id)?;
        let mut preds = Vec::new();
        if !boxes.is_empty() {
            let items: Vec<(String, BBox2D)> = boxes.iter().map(|b| (id.clone(), *b)).collect();
            let (x, _) = features_for(cfg, &dir, &items)?;
            let labels = match &classifier {
                Classifier::Teacher(t) => t.predict(&x, stage_seed(cfg.seed, &format!("eval/{id}")))?,
                Classifier::Student(s) => student_predict_batch(s, &x)?,
            };
            preds = boxes
                .iter()
                .zip(&labels)
                .map(|(b, l)| Detection::from_soft_label(*b, l))
                .filter(|d| d.class != 0)
                .collect();
        }
        per_scene.push((preds, gt));
    }
    let report = evaluate(per_scene, &cfg.class_names, &cfg.matching)?;
    create_dir(&cfg.paths.work_dir)?;
    report.save(&cfg.report_path(model), Some(&cfg.pr_path(model)))?;
    Ok(report)
}
