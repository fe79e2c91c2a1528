//! Detection and classification scoring: IoU matching, per-class precision,
//! recall and F1, PR curves, a confusion matrix and calibration error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::BBox2D;
use crate::distill::SoftLabel;
use crate::error::{Error, Result};

/// Number of equal-width confidence bins for the calibration error.
pub const ECE_BINS: usize = 10;

/// Intersection over union with both box edges counted as pixels.
pub fn iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let u0 = a.u_min.max(b.u_min);
    let v0 = a.v_min.max(b.v_min);
    let u1 = a.u_max.min(b.u_max);
    let v1 = a.v_max.min(b.v_max);
    if u0 > u1 || v0 > v1 {
        return 0.0;
    }
    let inter = (u1 - u0 + 1) as f64 * (v1 - v0 + 1) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub iou_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::config(format!(
                "iou_threshold must be in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// A predicted box with its most likely class and that class's probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox2D,
    pub class: usize,
    pub confidence: f64,
}

impl Detection {
    pub fn from_soft_label(bbox: BBox2D, label: &SoftLabel) -> Self {
        Self {
            bbox,
            class: label.argmax(),
            confidence: label.confidence(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub bbox: BBox2D,
    pub class: usize,
}

/// Outcome of matching one scene. Indices refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// `(prediction, ground truth, iou)`.
    pub true_positives: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

fn confidence_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    order
}

fn greedy(preds: &[Detection], gt: &[GroundTruthBox], cfg: &MatchConfig, class_aware: bool) -> MatchResult {
    let mut taken = vec![false; gt.len()];
    let mut out = MatchResult::default();
    for p in confidence_order(preds) {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(g, b)| !taken[*g] && (!class_aware || b.class == preds[p].class))
            .map(|(g, b)| (g, iou(&preds[p].bbox, &b.bbox)))
            .filter(|(_, o)| *o >= cfg.iou_threshold)
            .fold(None::<(usize, f64)>, |acc, cand| match acc {
                Some(a) if a.1 >= cand.1 => Some(a),
                _ => Some(cand),
            });
        match best {
            Some((g, o)) => {
                taken[g] = true;
                out.true_positives.push((p, g, o));
            }
            None => out.false_positives.push(p),
        }
    }
    out.false_negatives = (0..gt.len()).filter(|g| !taken[*g]).collect();
    out
}

/// Greedy matching in descending confidence: a prediction is a true positive
/// when it overlaps an unmatched ground truth of the same class with IoU at
/// or above the threshold (the highest-IoU candidate wins).
pub fn match_detections(preds: &[Detection], gt: &[GroundTruthBox], cfg: &MatchConfig) -> MatchResult {
    greedy(preds, gt, cfg, true)
}

/// Matching that ignores class, used to pair boxes for the confusion matrix
/// and calibration.
pub fn match_boxes(preds: &[Detection], gt: &[GroundTruthBox], cfg: &MatchConfig) -> MatchResult {
    greedy(preds, gt, cfg, false)
}

/// Predictions and ground truth of one scene with both matchings.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMatches {
    pub preds: Vec<Detection>,
    pub gt: Vec<GroundTruthBox>,
    pub by_class: MatchResult,
    pub by_box: MatchResult,
}

pub fn match_scene(preds: Vec<Detection>, gt: Vec<GroundTruthBox>, cfg: &MatchConfig) -> SceneMatches {
    let by_class = match_detections(&preds, &gt, cfg);
    let by_box = match_boxes(&preds, &gt, cfg);
    SceneMatches {
        preds,
        gt,
        by_class,
        by_box,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            precision,
            recall,
            f_score: f1(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overall {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f_score: f64,
    pub micro: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// Confidence calibration over box-matched detections. Not part of the
/// classic detection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub ece: f64,
    pub mean_conf_correct: Option<f64>,
    pub mean_conf_incorrect: Option<f64>,
    pub matched: usize,
    pub bins: Vec<CalibrationBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extensions {
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub iou_threshold: f64,
    /// Every configured class; macro averages use only classes that occur
    /// in the ground truth or the predictions.
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub overall: Overall,
    /// Rows are ground-truth classes, columns predicted classes. Ground
    /// truth without an overlapping prediction is counted in column 0.
    pub confusion: Vec<Vec<u64>>,
    pub pr_curves: BTreeMap<String, Vec<PrPoint>>,
    pub extensions: Extensions,
}

/// Expected calibration error over `(confidence, correct)` pairs with
/// [`ECE_BINS`] equal-width bins; the last bin is closed at 1.
pub fn expected_calibration_error(items: &[(f64, bool)]) -> (f64, Vec<CalibrationBin>) {
    let mut count = [0usize; ECE_BINS];
    let mut hits = [0usize; ECE_BINS];
    let mut conf = [0.0f64; ECE_BINS];
    for &(c, ok) in items {
        let b = ((c * ECE_BINS as f64).floor() as usize).min(ECE_BINS - 1);
        count[b] += 1;
        hits[b] += ok as usize;
        conf[b] += c;
    }
    let n = items.len().max(1) as f64;
    let mut ece = 0.0;
    let bins = (0..ECE_BINS)
        .map(|b| {
            let (accuracy, mean_confidence) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (hits[b] as f64 / count[b] as f64, conf[b] / count[b] as f64)
            };
            ece += count[b] as f64 / n * (accuracy - mean_confidence).abs();
            CalibrationBin {
                lower: b as f64 / ECE_BINS as f64,
                upper: (b + 1) as f64 / ECE_BINS as f64,
                count: count[b],
                accuracy,
                mean_confidence,
            }
        })
        .collect();
    (ece, bins)
}

/// PR points for one class from `(confidence, is_tp)` pairs, one point per
/// distinct threshold, ordered by ascending recall.
pub fn pr_curve(scored: &[(f64, bool)], total_gt: u64) -> Vec<PrPoint> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &(c, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if sorted.get(i + 1).is_some_and(|next| next.0 == c) {
            continue;
        }
        points.push(PrPoint {
            recall: if total_gt == 0 {
                0.0
            } else {
                tp as f64 / total_gt as f64
            },
            precision: tp as f64 / (tp + fp) as f64,
            threshold: c,
        });
    }
    points.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    points
}

pub fn compute_report(scenes: &[SceneMatches], class_names: &[String], cfg: &MatchConfig) -> Result<EvalReport> {
    let c = class_names.len();
    let total_gt: usize = scenes.iter().map(|s| s.gt.len()).sum();
    if total_gt == 0 {
        return Err(Error::param("evaluation needs at least one ground-truth box"));
    }
    let check = |class: usize| {
        if class >= c {
            Err(Error::param(format!(
                "class index {class} outside the {c} known classes"
            )))
        } else {
            Ok(())
        }
    };

    let mut tp = vec![0u64; c];
    let mut fp = vec![0u64; c];
    let mut fn_ = vec![0u64; c];
    let mut scored: Vec<Vec<(f64, bool)>> = vec![Vec::new(); c];
    let mut support = vec![0u64; c];
    let mut confusion = vec![vec![0u64; c]; c];
    let mut calib: Vec<(f64, bool)> = Vec::new();

    for s in scenes {
        for p in &s.preds {
            check(p.class)?;
        }
        for g in &s.gt {
            check(g.class)?;
            support[g.class] += 1;
        }
        for &(p, _, _) in &s.by_class.true_positives {
            tp[s.preds[p].class] += 1;
            scored[s.preds[p].class].push((s.preds[p].confidence, true));
        }
        for &p in &s.by_class.false_positives {
            fp[s.preds[p].class] += 1;
            scored[s.preds[p].class].push((s.preds[p].confidence, false));
        }
        for &g in &s.by_class.false_negatives {
            fn_[s.gt[g].class] += 1;
        }
        for &(p, g, _) in &s.by_box.true_positives {
            let (pc, gc) = (s.preds[p].class, s.gt[g].class);
            confusion[gc][pc] += 1;
            calib.push((s.preds[p].confidence, pc == gc));
        }
        for &g in &s.by_box.false_negatives {
            confusion[s.gt[g].class][0] += 1;
        }
    }

    let mut per_class = BTreeMap::new();
    let mut pr_curves = BTreeMap::new();
    let mut active = Vec::new();
    for k in 0..c {
        let m = ClassMetrics::from_counts(tp[k], fp[k], fn_[k]);
        if support[k] > 0 || tp[k] + fp[k] > 0 {
            active.push(m.clone());
        }
        per_class.insert(class_names[k].clone(), m);
        pr_curves.insert(class_names[k].clone(), pr_curve(&scored[k], support[k]));
    }
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| active.iter().map(f).sum::<f64>() / active.len().max(1) as f64;
    let overall = Overall {
        macro_precision: mean(&|m| m.precision),
        macro_recall: mean(&|m| m.recall),
        macro_f_score: mean(&|m| m.f_score),
        micro: ClassMetrics::from_counts(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum()),
    };

    let (ece, bins) = expected_calibration_error(&calib);
    let conf_mean = |want: bool| {
        let v: Vec<f64> = calib.iter().filter(|(_, ok)| *ok == want).map(|(c, _)| *c).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let calibration = Calibration {
        ece,
        mean_conf_correct: conf_mean(true),
        mean_conf_incorrect: conf_mean(false),
        matched: calib.len(),
        bins,
    };

    Ok(EvalReport {
        class_names: class_names.to_vec(),
        iou_threshold: cfg.iou_threshold,
        per_class,
        overall,
        confusion,
        pr_curves,
        extensions: Extensions { calibration },
    })
}

/// Matches every scene and aggregates the report.
pub fn evaluate(
    scenes: Vec<(Vec<Detection>, Vec<GroundTruthBox>)>,
    class_names: &[String],
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let matched: Vec<SceneMatches> = scenes.into_iter().map(|(p, g)| match_scene(p, g, cfg)).collect();
    compute_report(&matched, class_names, cfg)
}

impl EvalReport {
    /// Per-class table with percentages to one decimal. Classes without
    /// ground truth or predictions are omitted.
    pub fn render_table(&self) -> String {
        let width = self.per_class.keys().map(String::len).max().unwrap_or(5).max(7);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>6}  {:>7}\n",
            "class", "Precision", "Recall", "F-Score"
        );
        let mut row = |name: &str, p: f64, r: f64, f: f64| {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>9.1}  {:>6.1}  {:>7.1}",
                p * 100.0,
                r * 100.0,
                f * 100.0
            );
        };
        for (name, m) in &self.per_class {
            if m.tp + m.fp + m.fn_ == 0 {
                continue;
            }
            row(name, m.precision, m.recall, m.f_score);
        }
        row(
            "overall",
            self.overall.macro_precision,
            self.overall.macro_recall,
            self.overall.macro_f_score,
        );
        out
    }

    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class,recall,precision,threshold\n");
        for (name, pts) in &self.pr_curves {
            for p in pts {
                let _ = writeln!(out, "{name},{},{},{}", p.recall, p.precision, p.threshold);
            }
        }
        out
    }

    pub fn save(&self, json_path: &Path, pr_csv_path: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, text + "\n").map_err(|e| Error::file(json_path, e))?;
        if let Some(p) = pr_csv_path {
            std::fs::write(p, self.pr_csv()).map_err(|e| Error::file(p, e))?;
        }
        Ok(())
    }
}
