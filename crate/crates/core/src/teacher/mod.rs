//! The weakly supervised teacher: thumbnail features and a sparse
//! variational GP classifier trained on a small hand-labeled set.

pub mod features;
pub mod kernel;
pub mod svgp;
pub mod train;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use features::{extract_features, ExtractorSpec, FeatureExtractor, FeatureRecord, FeatureVector};
pub use kernel::{rbf, RbfKernel};
pub use svgp::{elbo, kl_q_p, predict_proba, SvgpModel};
pub use train::{init_svgp, train_teacher, SvgpInit, TrainConfig, TrainTrace};

use crate::distill::SoftLabel;
use crate::error::{Error, Result};
use crate::scale::Standardizer;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized form of [`SvgpModel`]; matrices are stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpState {
    pub inducing: Vec<Vec<f64>>,
    pub q_mu: Vec<Vec<f64>>,
    pub q_sqrt: Vec<Vec<Vec<f64>>>,
    pub kernel: RbfKernel,
    pub jitter: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != d) {
        return Err(Error::config(format!("ragged {what} matrix in checkpoint")));
    }
    Ok(DMatrix::from_fn(r.len(), d, |i, j| r[i][j]))
}

impl From<&SvgpModel> for SvgpState {
    fn from(m: &SvgpModel) -> Self {
        Self {
            inducing: rows(&m.inducing),
            q_mu: m.q_mu.iter().map(|v| v.iter().copied().collect()).collect(),
            q_sqrt: m.q_sqrt.iter().map(rows).collect(),
            kernel: m.kernel.clone(),
            jitter: m.jitter,
        }
    }
}

impl TryFrom<&SvgpState> for SvgpModel {
    type Error = Error;

    fn try_from(s: &SvgpState) -> Result<Self> {
        let model = SvgpModel {
            inducing: from_rows(&s.inducing, "inducing")?,
            q_mu: s.q_mu.iter().map(|v| DVector::from_column_slice(v)).collect(),
            q_sqrt: s.q_sqrt.iter().map(|r| from_rows(r, "q_sqrt")).collect::<Result<_>>()?,
            kernel: s.kernel.clone(),
            jitter: s.jitter,
        };
        model
            .validate()
            .map_err(|e| Error::config(format!("invalid checkpoint: {e}")))?;
        Ok(model)
    }
}

/// A trained teacher ready to label features from a given extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModel {
    pub svgp: SvgpModel,
    pub class_names: Vec<String>,
    pub extractor_id: String,
    pub input_scaling: Standardizer,
    pub mc_samples: usize,
    pub trace: Option<TrainTrace>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    class_names: Vec<String>,
    extractor_id: String,
    input_scaling: Standardizer,
    mc_samples: usize,
    model: SvgpState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<TrainTrace>,
}

impl TeacherModel {
    /// Probabilities for raw (unscaled) feature rows. Row `i` uses seed `seed + i`.
    pub fn predict(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<SoftLabel>> {
        let xs = self.input_scaling.apply(x);
        (0..xs.nrows())
            .map(|i| {
                let row: Vec<f64> = xs.row(i).iter().copied().collect();
                self.svgp
                    .predict_proba(&row, self.mc_samples, seed.wrapping_add(i as u64))
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            class_names: self.class_names.clone(),
            extractor_id: self.extractor_id.clone(),
            input_scaling: self.input_scaling.clone(),
            mc_samples: self.mc_samples,
            model: SvgpState::from(&self.svgp),
            trace: self.trace.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported teacher checkpoint version {}",
                ck.format_version
            )));
        }
        let svgp = SvgpModel::try_from(&ck.model)?;
        if ck.class_names.len() != svgp.num_classes() || ck.input_scaling.dim() != svgp.input_dim() {
            return Err(Error::config("teacher checkpoint dimensions are inconsistent"));
        }
        Ok(Self {
            svgp,
            class_names: ck.class_names,
            extractor_id: ck.extractor_id,
            input_scaling: ck.input_scaling,
            mc_samples: ck.mc_samples,
            trace: ck.trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }
}
