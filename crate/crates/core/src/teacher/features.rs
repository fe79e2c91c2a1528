//! Thumbnail feature extraction and the precomputed-feature CSV format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::Thumbnail;
use crate::error::{Error, Result};

pub const BASELINE_ID: &str = "baseline-v1";
pub const PRECOMPUTED_ID: &str = "precomputed";

const COLOR_BINS: usize = 8;
const ORIENTATION_BINS: usize = 16;
/// Feature dimension of the baseline extractor.
pub const BASELINE_DIM: usize = 3 * COLOR_BINS + 2 + ORIENTATION_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub extractor_id: String,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorSpec {
    pub id: String,
    /// Frame size used to normalize the box area.
    pub reference_size: [u32; 2],
    /// Feature CSV, required by the precomputed extractor.
    pub path: Option<PathBuf>,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            id: BASELINE_ID.into(),
            reference_size: [640, 480],
            path: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    Baseline {
        reference_area: f64,
    },
    Precomputed {
        table: BTreeMap<(String, i64), Vec<f64>>,
        dim: usize,
    },
}

impl FeatureExtractor {
    pub fn from_spec(spec: &ExtractorSpec) -> Result<Self> {
        match spec.id.as_str() {
            BASELINE_ID => {
                let [w, h] = spec.reference_size;
                if w == 0 || h == 0 {
                    return Err(Error::config("extractor reference_size must be positive"));
                }
                Ok(Self::Baseline {
                    reference_area: w as f64 * h as f64,
                })
            }
            PRECOMPUTED_ID => {
                let path = spec
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("precomputed extractor needs a feature file path"))?;
                let records = read_feature_csv(path)?;
                let dim = records.first().map_or(0, |r| r.values.len());
                let table = records
                    .into_iter()
                    .map(|r| ((r.scene_id, r.cluster_id), r.values))
                    .collect();
                Ok(Self::Precomputed { table, dim })
            }
            other => Err(Error::config(format!("unknown feature extractor '{other}'"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Baseline { .. } => BASELINE_ID,
            Self::Precomputed { .. } => PRECOMPUTED_ID,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Baseline { .. } => BASELINE_DIM,
            Self::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn extract(&self, thumb: &Thumbnail) -> Result<FeatureVector> {
        if thumb.image.is_empty() {
            return Err(Error::param("cannot extract features from an empty thumbnail"));
        }
        let values = match self {
            Self::Baseline { reference_area } => baseline_features(thumb, *reference_area),
            Self::Precomputed { table, .. } => {
                let key = (thumb.scene_id.clone(), thumb.origin_bbox.source_cluster);
                table
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| Error::config(format!("no precomputed features for {key:?}")))?
            }
        };
        Ok(FeatureVector {
            values,
            extractor_id: self.id().to_string(),
        })
    }
}

pub fn extract_features(thumb: &Thumbnail, spec: &ExtractorSpec) -> Result<FeatureVector> {
    FeatureExtractor::from_spec(spec)?.extract(thumb)
}

fn baseline_features(thumb: &Thumbnail, reference_area: f64) -> Vec<f64> {
    let img = &thumb.image;
    let n = img.pixel_count() as f64;
    let mut out = vec![0.0; BASELINE_DIM];

    for px in img.data.chunks_exact(3) {
        for (ch, &val) in px.iter().enumerate() {
            out[ch * COLOR_BINS + (val as usize * COLOR_BINS) / 256] += 1.0;
        }
    }
    out[..3 * COLOR_BINS].iter_mut().for_each(|v| *v /= n);

    let (w, h) = (img.width as f64, img.height as f64);
    out[3 * COLOR_BINS] = w / (w + h);
    out[3 * COLOR_BINS + 1] = (w * h / reference_area).sqrt().min(1.0);

    let hist = orientation_histogram(img);
    out[3 * COLOR_BINS + 2..].copy_from_slice(&hist);
    out
}

/// Magnitude-weighted histogram of gradient directions over the luma channel,
/// L1-normalized (all zeros when the image is flat).
pub fn orientation_histogram(img: &crate::image::RgbImage) -> [f64; ORIENTATION_BINS] {
    let mut hist = [0.0; ORIENTATION_BINS];
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return hist;
    }
    let luma = |u: u32, v: u32| {
        let [r, g, b] = img.get(u, v);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    };
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let gx = 0.5 * (luma(u + 1, v) - luma(u - 1, v));
            let gy = 0.5 * (luma(u, v + 1) - luma(u, v - 1));
            let mag = gx.hypot(gy);
            if mag <= 1e-12 {
                continue;
            }
            let angle = gy.atan2(gx) + std::f64::consts::PI;
            let bin = ((angle / std::f64::consts::TAU) * ORIENTATION_BINS as f64) as usize % ORIENTATION_BINS;
            hist[bin] += mag;
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|x| *x /= total);
    }
    hist
}

/// Shannon entropy in nats of a nonnegative histogram (0 for an all-zero one).
pub fn histogram_entropy(hist: &[f64]) -> f64 {
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    hist.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -(x / total) * (x / total).ln())
        .sum()
}

/// One row of the feature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub scene_id: String,
    pub cluster_id: i64,
    /// Class index, or -1 when unlabeled.
    pub label: i64,
    pub values: Vec<f64>,
}

pub fn write_feature_csv(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.values.len());
    let mut out = String::from("scene_id,cluster_id,label");
    for d in 0..dim {
        let _ = write!(out, ",f{d}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{}", r.scene_id, r.cluster_id, r.label);
        for v in &r.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_feature_csv(&text)
}

pub fn parse_feature_csv(text: &str) -> Result<Vec<FeatureRecord>> {
    let mut out: Vec<FeatureRecord> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("scene_id")) {
            continue;
        }
        let bad = |msg: String| Error::Malformed { line: n + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(bad("expected scene_id, cluster_id, label and at least one value".into()));
        }
        let cluster_id = fields[1].parse().map_err(|e| bad(format!("cluster_id: {e}")))?;
        let label = fields[2].parse().map_err(|e| bad(format!("label: {e}")))?;
        let values = fields[3..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(format!("value '{f}': {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = out.first() {
            if first.values.len() != values.len() {
                return Err(bad(format!(
                    "expected {} values, found {}",
                    first.values.len(),
                    values.len()
                )));
            }
        }
        out.push(FeatureRecord {
            scene_id: fields[0].to_string(),
            cluster_id,
            label,
            values,
        });
    }
    Ok(out)
}
