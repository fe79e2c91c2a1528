//! Knowledge distillation from teacher probabilities into a small MLP
//! student: temperature softening, the squared-error distillation loss and
//! its ablation alternatives, and student training.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scale::Standardizer;

/// Floor applied to teacher probabilities before softening.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Hand,
    Teacher,
    Student,
}

/// Class probability vector plus where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub probs: Vec<f64>,
    pub temperature_applied: Option<f64>,
    pub provenance: Provenance,
    /// Nats.
    pub entropy: f64,
}

impl SoftLabel {
    pub fn new(probs: Vec<f64>, provenance: Provenance) -> Self {
        Self {
            entropy: entropy(&probs),
            probs,
            temperature_applied: None,
            provenance,
        }
    }

    pub fn one_hot(class: usize, num_classes: usize, provenance: Provenance) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Self::new(probs, provenance)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Probability of the most likely class.
    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

pub fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    crate::teacher::svgp::softmax(logits)
}

/// Temperature softening of a probability vector: clamp to
/// [`PROB_FLOOR`], renormalize, then `softmax(ln p / T)`, i.e. `p^(1/T)`
/// renormalized.
pub fn soften(probs: &[f64], temperature: f64) -> Vec<f64> {
    let clamped: Vec<f64> = probs.iter().map(|p| p.max(PROB_FLOOR)).collect();
    let total: f64 = clamped.iter().sum();
    let scaled: Vec<f64> = clamped.iter().map(|p| (p / total).ln() / temperature).collect();
    softmax(&scaled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Sse,
    Kl,
    Mse,
    Mae,
    Ce,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Sse, LossKind::Kl, LossKind::Mse, LossKind::Mae, LossKind::Ce];
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sse" => Ok(Self::Sse),
            "kl" => Ok(Self::Kl),
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            "ce" => Ok(Self::Ce),
            other => Err(Error::config(format!("unknown loss kind '{other}'"))),
        }
    }
}

fn check_dims(logits: &[f64], teacher: &[f64]) -> Result<()> {
    if logits.len() != teacher.len() || logits.is_empty() {
        return Err(Error::param(format!(
            "student has {} logits, teacher {} probabilities",
            logits.len(),
            teacher.len()
        )));
    }
    Ok(())
}

/// Loss between `softmax(logits / T)` and `soften(teacher, T)` together with
/// its gradient with respect to the logits.
pub fn loss_and_grad(kind: LossKind, logits: &[f64], teacher: &[f64], temperature: f64) -> Result<(f64, Vec<f64>)> {
    check_dims(logits, teacher)?;
    let c = logits.len() as f64;
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let q = softmax(&scaled);
    let p = soften(teacher, temperature);
    let (loss, d_q): (f64, Vec<f64>) = match kind {
        LossKind::Sse | LossKind::Mse => {
            let norm = if kind == LossKind::Mse { c } else { 1.0 };
            let loss = q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / norm;
            (loss, q.iter().zip(&p).map(|(a, b)| 2.0 * (a - b) / norm).collect())
        }
        LossKind::Mae => {
            let loss = q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / c;
            let sign = |d: f64| {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            };
            (loss, q.iter().zip(&p).map(|(a, b)| sign(a - b) / c).collect())
        }
        LossKind::Kl | LossKind::Ce => {
            let log_q: Vec<f64> = {
                let lse = crate::teacher::svgp::log_sum_exp(&scaled);
                scaled.iter().map(|s| s - lse).collect()
            };
            let ce = -p.iter().zip(&log_q).map(|(pi, lq)| pi * lq).sum::<f64>();
            let loss = if kind == LossKind::Kl { ce - entropy(&p) } else { ce };
            // Both reduce to (q − p)/T in logit space because Σp = 1.
            let grad = q.iter().zip(&p).map(|(qi, pi)| (qi - pi) / temperature).collect();
            return Ok((loss, grad));
        }
    };
    // Chain through q = softmax(z / T).
    let dot: f64 = q.iter().zip(&d_q).map(|(a, b)| a * b).sum();
    let grad = q
        .iter()
        .zip(&d_q)
        .map(|(qi, gi)| qi * (gi - dot) / temperature)
        .collect();
    Ok((loss, grad))
}

/// Squared-error distillation loss for one item.
pub fn distill_loss_sse(student_logits: &[f64], teacher_probs: &[f64], temperature: f64) -> Result<f64> {
    Ok(loss_and_grad(LossKind::Sse, student_logits, teacher_probs, temperature)?.0)
}

/// Ablation losses on the same softened pair.
pub fn distill_loss_alt(kind: &str, student_logits: &[f64], teacher_probs: &[f64], temperature: f64) -> Result<f64> {
    let kind: LossKind = kind.parse()?;
    if kind == LossKind::Sse {
        return Err(Error::config("use distill_loss_sse for the sse loss"));
    }
    Ok(loss_and_grad(kind, student_logits, teacher_probs, temperature)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub temperature: f64,
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Weight of an extra cross-entropy term against the argmax label.
    pub hard_weight: f64,
    /// Share of the data held out for the per-epoch accuracy trace.
    pub holdout_fraction: f64,
    /// Fit input standardization on the training data.
    pub standardize: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            loss_kind: LossKind::Sse,
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            hidden: vec![64],
            hard_weight: 0.0,
            holdout_fraction: 0.1,
            standardize: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 1.0) {
            return Err(Error::config(format!(
                "temperature must be >= 1, got {}",
                self.temperature
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::config("batch_size must be >= 1 and lr > 0"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || self.hard_weight < 0.0 {
            return Err(Error::config("holdout_fraction must be in [0, 1) and hard_weight >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// out × in, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn matrix(&self) -> DMatrix<f64> {
        crate::scale::rows_to_matrix(&self.weights)
    }
}

/// Fully connected tanh network ending in a linear layer of class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub arch: StudentArch,
    pub layers: Vec<DenseLayer>,
    pub input_scaling: Standardizer,
    pub seed: u64,
}

impl StudentModel {
    /// Glorot-uniform initialization.
    pub fn new(arch: StudentArch, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes < 2 || arch.hidden.contains(&0) {
            return Err(Error::config(format!("invalid student architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        widths.push(arch.num_classes);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                DenseLayer {
                    weights: (0..w[1])
                        .map(|_| (0..w[0]).map(|_| rng.random_range(-bound..bound)).collect())
                        .collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self {
            input_scaling: Standardizer::identity(arch.input_dim),
            arch,
            layers,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.bias.iter().chain(l.weights.iter().flatten()).all(|v| v.is_finite()))
    }

    fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().flatten().chain(&l.bias).copied())
            .collect()
    }

    fn set_flat(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().flatten().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    /// Logits for each row of `x` (raw, unscaled features).
    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(&self.prepare(x)?).pop().expect("at least one layer"))
    }

    fn prepare(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::param(format!(
                "student expects {} features, got {}",
                self.arch.input_dim,
                x.ncols()
            )));
        }
        Ok(self.input_scaling.apply(x))
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        for (li, layer) in self.layers.iter().enumerate() {
            let w = layer.matrix();
            let mut z = acts.last().unwrap() * w.transpose();
            for mut row in z.row_iter_mut() {
                row += DVector::from_column_slice(&layer.bias).transpose();
            }
            if li + 1 < self.layers.len() {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Gradient of `Σ_rows d_logits · logits` with respect to the flat parameters.
    fn backward(&self, acts: &[DMatrix<f64>], d_logits: DMatrix<f64>) -> Vec<f64> {
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = d_logits;
        for li in (0..self.layers.len()).rev() {
            let input = &acts[li];
            let d_w = delta.transpose() * input;
            let d_b = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if li > 0 {
                let mut d_in = &delta * self.layers[li].matrix();
                d_in.zip_apply(input, |d, a| *d *= 1.0 - a * a);
                delta = d_in;
            }
            grads.push((d_w, d_b));
        }
        grads.reverse();
        grads
            .into_iter()
            .flat_map(|(d_w, d_b)| {
                let mut v: Vec<f64> = d_w
                    .row_iter()
                    .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                    .collect();
                v.extend(d_b.iter());
                v
            })
            .collect()
    }
}

/// Class probabilities at unit temperature; the max entry is the confidence.
pub fn student_predict(student: &StudentModel, x: &[f64]) -> Result<SoftLabel> {
    let logits = student.logits(&DMatrix::from_row_slice(1, x.len(), x))?;
    let row: Vec<f64> = logits.row(0).iter().copied().collect();
    Ok(SoftLabel::new(softmax(&row), Provenance::Student))
}

pub fn student_predict_batch(student: &StudentModel, x: &DMatrix<f64>) -> Result<Vec<SoftLabel>> {
    let logits = student.logits(x)?;
    Ok(logits
        .row_iter()
        .map(|r| SoftLabel::new(softmax(&r.iter().copied().collect::<Vec<_>>()), Provenance::Student))
        .collect())
}

/// Checkpoint document for a trained student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentCheckpoint {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub extractor_id: String,
    pub config: DistillConfig,
    pub model: StudentModel,
    pub trace: Vec<StudentEpoch>,
}

pub const STUDENT_CHECKPOINT_VERSION: u32 = 1;

impl StudentCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.format_version != STUDENT_CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported student checkpoint version {}",
                ck.format_version
            )));
        }
        if ck.class_names.len() != ck.model.num_classes() {
            return Err(Error::data("student checkpoint class count does not match its model"));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Argmax agreement on the held-out share, when there is one.
    pub holdout_accuracy: Option<f64>,
}

/// Minibatch Adam on the configured distillation loss (mean over items).
pub fn train_student(
    student: &StudentModel,
    features: &DMatrix<f64>,
    targets: &[Vec<f64>],
    cfg: &DistillConfig,
) -> Result<(StudentModel, Vec<StudentEpoch>)> {
    cfg.validate()?;
    let n = features.nrows();
    if n == 0 || targets.len() != n {
        return Err(Error::config(format!(
            "{n} feature rows but {} soft labels",
            targets.len()
        )));
    }
    let c = student.num_classes();
    if let Some(bad) = targets.iter().find(|t| t.len() != c) {
        return Err(Error::config(format!(
            "soft label with {} classes, student has {c}",
            bad.len()
        )));
    }
    if features.ncols() != student.arch.input_dim {
        return Err(Error::config(format!(
            "features have {} dimensions, student expects {}",
            features.ncols(),
            student.arch.input_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_hold = ((n as f64) * cfg.holdout_fraction).floor() as usize;
    let n_hold = if n - n_hold == 0 { 0 } else { n_hold };
    let (held, train) = order.split_at(n_hold);
    let mut train = train.to_vec();

    let mut model = student.clone();
    if cfg.standardize {
        let rows = DMatrix::from_fn(train.len(), features.ncols(), |i, j| features[(train[i], j)]);
        model.input_scaling = Standardizer::fit(&rows);
    }
    let x = model.input_scaling.apply(features);
    let held_x = DMatrix::from_fn(held.len(), x.ncols(), |i, j| x[(held[i], j)]);

    let mut params = model.flat();
    let mut opt = crate::optim::Adam::new(params.len());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train.chunks(cfg.batch_size) {
            let xb = DMatrix::from_fn(batch.len(), x.ncols(), |i, j| x[(batch[i], j)]);
            let acts = model.forward(&xb);
            let logits = acts.last().unwrap();
            let mut d_logits = DMatrix::zeros(batch.len(), c);
            let inv = 1.0 / batch.len() as f64;
            for (r, &idx) in batch.iter().enumerate() {
                let z: Vec<f64> = logits.row(r).iter().copied().collect();
                let (mut loss, mut g) = loss_and_grad(cfg.loss_kind, &z, &targets[idx], cfg.temperature)?;
                if cfg.hard_weight > 0.0 {
                    let mut hard = vec![0.0; c];
                    hard[argmax(&targets[idx])] = 1.0;
                    let (l2, g2) = loss_and_grad(LossKind::Ce, &z, &hard, 1.0)?;
                    loss += cfg.hard_weight * l2;
                    g.iter_mut().zip(g2).for_each(|(a, b)| *a += cfg.hard_weight * b);
                }
                loss_sum += loss;
                for k in 0..c {
                    d_logits[(r, k)] = g[k] * inv;
                }
            }
            let grad = model.backward(&acts, d_logits);
            opt.descend(&mut params, &grad, cfg.lr);
            model.set_flat(&params);
        }
        let holdout_accuracy = (!held.is_empty()).then(|| {
            let logits = model.forward(&held_x).pop().unwrap();
            let hits = held
                .iter()
                .enumerate()
                .filter(|(r, &idx)| {
                    let z: Vec<f64> = logits.row(*r).iter().copied().collect();
                    argmax(&z) == argmax(&targets[idx])
                })
                .count();
            hits as f64 / held.len() as f64
        });
        trace.push(StudentEpoch {
            epoch,
            loss: loss_sum / train.len() as f64,
            holdout_accuracy,
        });
    }
    if !model.is_finite() {
        return Err(Error::Numerical("student weights diverged".into()));
    }
    Ok((model, trace))
}

/// One record of the soft-label JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelRecord {
    pub scene_id: String,
    pub cluster_id: i64,
    pub bbox: [u32; 4],
    pub probs: Vec<f64>,
    pub provenance: Provenance,
    pub temperature_applied: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn soften_fixtures() {
        let p = soften(&[0.8, 0.2], 2.0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-6 && (p[1] - 1.0 / 3.0).abs() < 1e-6);
        let raw = [0.5, 0.3, 0.2];
        let same = soften(&raw, 1.0);
        assert!(same.iter().zip(&raw).all(|(a, b)| (a - b).abs() < 1e-6));
        let flat = soften(&[0.97, 0.02, 0.01], 1e6);
        assert!(flat.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-4));
    }

    #[test]
    fn sse_fixtures() {
        let t = soften(&[0.7, 0.2, 0.1], 2.0);
        let logits: Vec<f64> = t.iter().map(|p| 2.0 * p.ln() + 5.0).collect();
        assert!(distill_loss_sse(&logits, &[0.7, 0.2, 0.1], 2.0).unwrap() < 1e-20);
        // Near one-hot disagreement approaches the maximum of 2.
        let l = distill_loss_sse(&[1e3, -1e3], &[0.0, 1.0], 1.0).unwrap();
        assert!((l - 2.0).abs() < 1e-6);
        assert!(distill_loss_sse(&[0.0; 3], &[0.5, 0.5], 2.0).is_err());
    }

    #[test]
    fn alternative_losses() {
        let t = [0.6, 0.3, 0.1];
        let soft = soften(&t, 2.0);
        let logits: Vec<f64> = soft.iter().map(|p| 2.0 * p.ln()).collect();
        assert!(distill_loss_alt("kl", &logits, &t, 2.0).unwrap().abs() < 1e-12);
        let ce = distill_loss_alt("ce", &logits, &t, 2.0).unwrap();
        assert!((ce - entropy(&soft)).abs() < 1e-9);
        let z = [0.3, -1.2, 2.0];
        let sse = distill_loss_sse(&z, &t, 2.0).unwrap();
        let mse = distill_loss_alt("mse", &z, &t, 2.0).unwrap();
        assert!((mse - sse / 3.0).abs() < 1e-15);
        assert!(matches!(distill_loss_alt("hinge", &z, &t, 2.0), Err(Error::Config(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in LossKind::ALL {
            for _ in 0..10 {
                let z: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
                let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let t: Vec<f64> = raw.iter().map(|v| v / s).collect();
                let (_, g) = loss_and_grad(kind, &z, &t, 2.0).unwrap();
                for i in 0..5 {
                    let h = 1e-6;
                    let mut zp = z.clone();
                    zp[i] += h;
                    let mut zm = z.clone();
                    zm[i] -= h;
                    let fd = (loss_and_grad(kind, &zp, &t, 2.0).unwrap().0
                        - loss_and_grad(kind, &zm, &t, 2.0).unwrap().0)
                        / (2.0 * h);
                    let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                    assert!(err < 1e-5, "{kind:?} {i}: fd {fd} analytic {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn zero_logits_uniform_prediction() {
        let mut s = StudentModel::new(
            StudentArch {
                input_dim: 2,
                hidden: vec![4],
                num_classes: 4,
            },
            1,
        )
        .unwrap();
        s.layers.iter_mut().for_each(|l| {
            l.weights.iter_mut().flatten().for_each(|w| *w = 0.0);
        });
        let p = student_predict(&s, &[0.3, 0.1]).unwrap();
        assert!(p.probs.iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn blobs(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let c = if y[i] == 0 { -2.0 } else { 2.0 };
            (if j == 0 { c } else { 0.0 }) + rng.random_range(-1.0..1.0)
        });
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(200, 1);
        let targets: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| SoftLabel::one_hot(c, 2, Provenance::Hand).probs)
            .collect();
        let arch = StudentArch {
            input_dim: 2,
            hidden: vec![16],
            num_classes: 2,
        };
        let cfg = DistillConfig {
            epochs: 30,
            lr: 1e-2,
            ..Default::default()
        };
        let (model, trace) = train_student(&StudentModel::new(arch, 3).unwrap(), &x, &targets, &cfg).unwrap();
        let (xt, yt) = blobs(400, 2);
        let preds = student_predict_batch(&model, &xt).unwrap();
        let acc = preds.iter().zip(&yt).filter(|(p, &t)| p.argmax() == t).count() as f64 / yt.len() as f64;
        assert!(acc >= 0.98, "held-out accuracy {acc}");
        assert!(trace.last().unwrap().loss < trace[0].loss);
        assert!(trace.iter().all(|e| e.holdout_accuracy.is_some()));
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let (x, y) = blobs(50, 4);
        let targets: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| SoftLabel::one_hot(c, 2, Provenance::Hand).probs)
            .collect();
        let init = StudentModel::new(
            StudentArch {
                input_dim: 2,
                hidden: vec![8],
                num_classes: 2,
            },
            5,
        )
        .unwrap();
        let cfg0 = DistillConfig {
            epochs: 0,
            ..Default::default()
        };
        let (same, trace) = train_student(&init, &x, &targets, &cfg0).unwrap();
        assert_eq!(same.layers, init.layers);
        assert!(trace.is_empty());
        let cfg = DistillConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = train_student(&init, &x, &targets, &cfg).unwrap();
        let b = train_student(&init, &x, &targets, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inconsistent_classes_rejected() {
        let (x, _) = blobs(4, 4);
        let init = StudentModel::new(
            StudentArch {
                input_dim: 2,
                hidden: vec![8],
                num_classes: 2,
            },
            5,
        )
        .unwrap();
        let targets = vec![vec![0.2, 0.3, 0.5]; 4];
        assert!(matches!(
            train_student(&init, &x, &targets, &Default::default()),
            Err(Error::Config(_))
        ));
        let bad_t = DistillConfig {
            temperature: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            train_student(&init, &x, &vec![vec![0.5, 0.5]; 4], &bad_t),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn student_backward_matches_finite_differences() {
        let (x, y) = blobs(6, 9);
        let targets: Vec<Vec<f64>> = y
            .iter()
            .map(|&c| if c == 0 { vec![0.8, 0.2] } else { vec![0.3, 0.7] })
            .collect();
        let model = StudentModel::new(
            StudentArch {
                input_dim: 2,
                hidden: vec![3, 4],
                num_classes: 2,
            },
            2,
        )
        .unwrap();
        let total = |m: &StudentModel| -> f64 {
            let z = m.forward(&x).pop().unwrap();
            (0..x.nrows())
                .map(|r| {
                    let row: Vec<f64> = z.row(r).iter().copied().collect();
                    loss_and_grad(LossKind::Sse, &row, &targets[r], 2.0).unwrap().0
                })
                .sum()
        };
        let acts = model.forward(&x);
        let mut d = DMatrix::zeros(x.nrows(), 2);
        for r in 0..x.nrows() {
            let row: Vec<f64> = acts.last().unwrap().row(r).iter().copied().collect();
            let g = loss_and_grad(LossKind::Sse, &row, &targets[r], 2.0).unwrap().1;
            d[(r, 0)] = g[0];
            d[(r, 1)] = g[1];
        }
        let grad = model.backward(&acts, d);
        let p0 = model.flat();
        for i in 0..p0.len() {
            let h = 1e-6;
            let mut m = model.clone();
            let mut p = p0.clone();
            p[i] += h;
            m.set_flat(&p);
            let up = total(&m);
            p[i] -= 2.0 * h;
            m.set_flat(&p);
            let fd = (up - total(&m)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    fn simplex(c: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, c).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn soften_keeps_argmax(p in simplex(5), t in 1.0f64..50.0) {
            prop_assert_eq!(argmax(&soften(&p, t)), argmax(&p));
        }

        #[test]
        fn sse_nonnegative_shift_invariant_symmetric(
            z in prop::collection::vec(-5.0f64..5.0, 4),
            p in simplex(4),
            shift in -10.0f64..10.0,
        ) {
            let l = distill_loss_sse(&z, &p, 2.0).unwrap();
            prop_assert!(l >= 0.0);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            prop_assert!((distill_loss_sse(&shifted, &p, 2.0).unwrap() - l).abs() < 1e-12);
            // Swap roles: student becomes the teacher distribution and vice versa.
            let q = softmax(&z.iter().map(|v| v / 2.0).collect::<Vec<_>>());
            let sp = soften(&p, 2.0);
            let q_as_logits: Vec<f64> = sp.iter().map(|v| 2.0 * v.ln()).collect();
            let q_as_teacher: Vec<f64> = {
                let sq: Vec<f64> = q.iter().map(|v| v * v).collect();
                let s: f64 = sq.iter().sum();
                sq.into_iter().map(|v| v / s).collect()
            };
            let swapped = distill_loss_sse(&q_as_logits, &q_as_teacher, 2.0).unwrap();
            if q.iter().all(|&v| v > 1e-3) {
                prop_assert!((swapped - l).abs() < 1e-9);
            }
        }
    }
}
