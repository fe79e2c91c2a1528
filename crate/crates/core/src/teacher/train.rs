use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::RbfKernel;
use super::svgp::{elbo_eval, SvgpModel};
use crate::error::{Error, Result};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub decay: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr0: 1e-3,
            decay: 0.95,
            mc_samples: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::config("epochs, batch_size and mc_samples must be >= 1"));
        }
        if !(self.lr0 > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(format!(
                "need lr0 > 0 and 0 < decay <= 1, got {} and {}",
                self.lr0, self.decay
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }
}

/// How a fresh model is built from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvgpInit {
    pub num_inducing: usize,
    pub kernel_variance: f64,
    /// `None` selects the median pairwise distance.
    pub lengthscale: Option<f64>,
    pub ard: bool,
    pub q_sqrt_scale: f64,
    pub jitter: f64,
}

impl Default for SvgpInit {
    fn default() -> Self {
        Self {
            num_inducing: 64,
            kernel_variance: 100.0,
            lengthscale: None,
            ard: false,
            q_sqrt_scale: 0.1,
            jitter: 1e-6,
        }
    }
}

/// Per-epoch record of the optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean minibatch ELBO (scaled to the full data set) per epoch.
    pub epoch_elbo: Vec<f64>,
    pub epoch_lr: Vec<f64>,
}

/// k-means++ seeding followed by a few Lloyd iterations; `k` is capped at
/// the number of rows.
pub fn kmeans_pp(x: &DMatrix<f64>, k: usize, seed: u64) -> DMatrix<f64> {
    const LLOYD_ITERS: usize = 10;
    let n = x.nrows();
    let k = k.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |i: usize, c: &[f64]| -> f64 { x.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum() };
    let row = |i: usize| -> Vec<f64> { x.row(i).iter().copied().collect() };

    let mut centers = vec![row(rng.random_range(0..n))];
    let mut best: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total <= 0.0 {
            // Duplicate rows only; take the first point not already a centre.
            (0..n)
                .find(|&i| !centers.iter().any(|c| dist2(i, c) == 0.0))
                .unwrap_or(0)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in best.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        let c = row(pick);
        best.iter_mut().enumerate().for_each(|(i, b)| *b = b.min(dist2(i, &c)));
        centers.push(c);
    }

    let d = x.ncols();
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = (0..k)
                .map(|j| (j, dist2(i, &centers[j])))
                .fold((0, f64::INFINITY), |acc, (j, v)| if v < acc.1 { (j, v) } else { acc })
                .0;
            counts[j] += 1;
            sums[j].iter_mut().zip(x.row(i).iter()).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    DMatrix::from_fn(k, d, |i, j| centers[i][j])
}

/// Median pairwise Euclidean distance over at most 400 evenly spaced rows.
pub fn median_heuristic(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let step = n.div_ceil(400).max(1);
    let idx: Vec<usize> = (0..n).step_by(step).collect();
    let mut d: Vec<f64> = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push((x.row(i) - x.row(j)).norm());
        }
    }
    d.retain(|v| *v > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Builds an untrained model with k-means++ inducing inputs.
pub fn init_svgp(x: &DMatrix<f64>, num_classes: usize, init: &SvgpInit, seed: u64) -> Result<SvgpModel> {
    if x.nrows() == 0 {
        return Err(Error::config("no training features"));
    }
    if init.num_inducing == 0 {
        return Err(Error::config("num_inducing must be >= 1"));
    }
    let z = kmeans_pp(x, init.num_inducing, seed);
    let ls = init.lengthscale.unwrap_or_else(|| median_heuristic(x));
    let kernel = if init.ard {
        RbfKernel::ard(init.kernel_variance, vec![ls; x.ncols()])?
    } else {
        RbfKernel::new(init.kernel_variance, ls)?
    };
    SvgpModel::new(z, num_classes, kernel, init.q_sqrt_scale, init.jitter)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Minibatch Adam ascent on the ELBO over every model parameter.
pub fn train_teacher(
    model: &SvgpModel,
    x: &DMatrix<f64>,
    y: &[usize],
    cfg: &TrainConfig,
) -> Result<(SvgpModel, TrainTrace)> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::config(format!("{n} feature rows but {} labels", y.len())));
    }
    let c = model.num_classes();
    if let Some(&bad) = y.iter().find(|&&l| l >= c) {
        return Err(Error::config(format!("label {bad} outside [0, {c})")));
    }
    let mut seen = vec![false; c];
    y.iter().for_each(|&l| seen[l] = true);
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::config(format!("class {missing} has no training examples")));
    }

    let mut model = model.clone();
    let mut params = model.params();
    let mut opt = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace {
        epoch_elbo: Vec::with_capacity(cfg.epochs),
        epoch_lr: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = DMatrix::from_fn(batch.len(), x.ncols(), |i, j| x[(batch[i], j)]);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let eval = elbo_eval(
                &model,
                &xb,
                &yb,
                n,
                cfg.mc_samples,
                mix(cfg.seed, epoch as u64, bi as u64),
                true,
            )?;
            if !eval.value.is_finite() {
                return Err(Error::Numerical(format!("non-finite ELBO at epoch {epoch}")));
            }
            sum += eval.value;
            batches += 1;
            opt.ascend(&mut params, eval.grad.as_deref().expect("gradient requested"), lr);
            model.set_params(&params);
        }
        trace.epoch_elbo.push(sum / batches as f64);
        trace.epoch_lr.push(lr);
    }
    Ok((model, trace))
}
