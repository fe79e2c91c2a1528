//! Sparse variational GP classifier with one whitened latent process per
//! class, a shared RBF kernel and a softmax likelihood.
//!
//! With `K_zz = L_k L_kᵀ` the inducing values are `u_c = L_k v_c` and
//! `q(v_c) = N(m_c, L_c L_cᵀ)`, so the prior over `v_c` is standard normal.
//! For an input `x` and `a = L_k⁻¹ k_zx` the marginal of class `c` is
//! `N(aᵀ m_c, k_xx − aᵀa + ‖L_cᵀ a‖²)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::RbfKernel;
use crate::distill::{entropy, Provenance, SoftLabel};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_backward, cholesky_jittered, lower_triangle, solve_lower, solve_lower_transpose};

/// Floor on predictive variance before taking square roots.
const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvgpModel {
    /// Inducing inputs, one per row (m × D).
    pub inducing: DMatrix<f64>,
    /// Whitened variational means, one m-vector per class.
    pub q_mu: Vec<DVector<f64>>,
    /// Lower-triangular covariance factors with positive diagonal.
    pub q_sqrt: Vec<DMatrix<f64>>,
    pub kernel: RbfKernel,
    pub jitter: f64,
}

impl SvgpModel {
    /// Variational distributions start at `N(0, scale²·I)`.
    pub fn new(
        inducing: DMatrix<f64>,
        num_classes: usize,
        kernel: RbfKernel,
        q_sqrt_scale: f64,
        jitter: f64,
    ) -> Result<Self> {
        let m = inducing.nrows();
        if m == 0 {
            return Err(Error::param("need at least one inducing point"));
        }
        if num_classes < 2 {
            return Err(Error::param("need at least two classes"));
        }
        if !(q_sqrt_scale > 0.0) {
            return Err(Error::param("q_sqrt scale must be > 0"));
        }
        kernel.check_dim(inducing.ncols())?;
        Ok(Self {
            q_mu: vec![DVector::zeros(m); num_classes],
            q_sqrt: vec![DMatrix::identity(m, m) * q_sqrt_scale; num_classes],
            inducing,
            kernel,
            jitter,
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.q_mu.len()
    }

    pub fn input_dim(&self) -> usize {
        self.inducing.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_inducing();
        if m == 0 || self.num_classes() < 2 || self.q_sqrt.len() != self.num_classes() {
            return Err(Error::State("malformed SVGP model".into()));
        }
        for (mu, l) in self.q_mu.iter().zip(&self.q_sqrt) {
            if mu.len() != m || l.shape() != (m, m) {
                return Err(Error::State("variational parameter shape mismatch".into()));
            }
            if (0..m).any(|i| !(l[(i, i)] > 0.0) || ((i + 1)..m).any(|j| l[(i, j)] != 0.0)) {
                return Err(Error::State(
                    "q_sqrt must be lower-triangular with positive diagonal".into(),
                ));
            }
        }
        self.kernel.check_dim(self.input_dim())
    }

    fn tri_len(&self) -> usize {
        let m = self.num_inducing();
        m * (m + 1) / 2
    }

    /// Length of the flat parameter vector used by the optimizer.
    pub fn n_params(&self) -> usize {
        let (m, c, d) = (self.num_inducing(), self.num_classes(), self.input_dim());
        c * m + c * self.tri_len() + m * d + self.kernel.n_params()
    }

    /// Flat unconstrained parameters: per-class means, per-class lower
    /// triangles (row-major, log diagonal), inducing inputs (row-major), log
    /// kernel variance, log lengthscales.
    pub fn params(&self) -> Vec<f64> {
        let m = self.num_inducing();
        let mut out = Vec::with_capacity(self.n_params());
        for mu in &self.q_mu {
            out.extend(mu.iter());
        }
        for l in &self.q_sqrt {
            for i in 0..m {
                for j in 0..=i {
                    out.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
                }
            }
        }
        for i in 0..m {
            out.extend(self.inducing.row(i).iter());
        }
        out.push(self.kernel.log_variance);
        out.extend(&self.kernel.log_lengthscales);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let (m, d) = (self.num_inducing(), self.input_dim());
        let mut it = p.iter().copied();
        for mu in &mut self.q_mu {
            mu.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        for l in &mut self.q_sqrt {
            for i in 0..m {
                for j in 0..=i {
                    let v = it.next().unwrap();
                    l[(i, j)] = if i == j { v.exp() } else { v };
                }
            }
        }
        for i in 0..m {
            for k in 0..d {
                self.inducing[(i, k)] = it.next().unwrap();
            }
        }
        self.kernel.log_variance = it.next().unwrap();
        self.kernel
            .log_lengthscales
            .iter_mut()
            .for_each(|v| *v = it.next().unwrap());
    }

    /// Sum over classes of `KL(q(v_c) ‖ N(0, I))`.
    pub fn kl(&self) -> f64 {
        self.q_mu
            .iter()
            .zip(&self.q_sqrt)
            .map(|(mu, l)| kl_whitened(mu, l))
            .sum()
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::param(format!(
                "inputs have {} dimensions, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Marginal means (classes × points) and variances of `q(f)` at the rows of `x`.
    pub fn predict_latent(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_inputs(x)?;
        let cond = Conditional::new(self, x)?;
        Ok((cond.mean, cond.var))
    }

    /// Monte-Carlo estimate of the predictive class probabilities for each
    /// row of `x`, using antithetic pairs of latent draws.
    pub fn predict_proba_batch(&self, x: &DMatrix<f64>, mc_samples: usize, seed: u64) -> Result<Vec<SoftLabel>> {
        let (mean, var) = self.predict_latent(x)?;
        let c = self.num_classes();
        let pairs = mc_samples.div_ceil(2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(x.nrows());
        let mut f = vec![0.0; c];
        for i in 0..x.nrows() {
            let sd: Vec<f64> = (0..c).map(|k| var[(k, i)].max(MIN_VARIANCE).sqrt()).collect();
            let mut acc = vec![0.0; c];
            for _ in 0..pairs {
                let eps: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
                for sign in [1.0, -1.0] {
                    for k in 0..c {
                        f[k] = mean[(k, i)] + sign * sd[k] * eps[k];
                    }
                    let p = softmax(&f);
                    acc.iter_mut().zip(&p).for_each(|(a, p)| *a += p);
                }
            }
            let total: f64 = acc.iter().sum();
            let probs: Vec<f64> = acc.iter().map(|a| a / total).collect();
            out.push(SoftLabel {
                entropy: entropy(&probs),
                probs,
                temperature_applied: None,
                provenance: Provenance::Teacher,
            });
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &[f64], mc_samples: usize, seed: u64) -> Result<SoftLabel> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.predict_proba_batch(&row, mc_samples, seed)?.remove(0))
    }
}

/// Predictive class probabilities for one feature vector.
pub fn predict_proba(model: &SvgpModel, x: &[f64], mc_samples: usize, seed: u64) -> Result<SoftLabel> {
    model.predict_proba(x, mc_samples, seed)
}

/// `KL(N(m, LLᵀ) ‖ N(0, I))`.
pub fn kl_whitened(mu: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let m = mu.len() as f64;
    let log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].abs().ln()).sum();
    0.5 * (lower_triangle(l).norm_squared() + mu.norm_squared() - m - 2.0 * log_det)
}

/// `KL(N(m_u, LLᵀ) ‖ N(0, K_zz))` in closed form, factoring `K_zz` with the
/// jitter ladder when needed.
pub fn kl_q_p(m_u: &DVector<f64>, l: &DMatrix<f64>, kzz: &DMatrix<f64>) -> Result<f64> {
    let m = m_u.len();
    if l.shape() != (m, m) || kzz.shape() != (m, m) {
        return Err(Error::param("kl_q_p shape mismatch"));
    }
    let (lk, _) = cholesky_jittered(kzz, 0.0)?;
    let a = solve_lower(&lk, &lower_triangle(l));
    let b = solve_lower(&lk, &DMatrix::from_column_slice(m, 1, m_u.as_slice()));
    let log_det_k: f64 = (0..m).map(|i| lk[(i, i)].ln()).sum();
    let log_det_s: f64 = (0..m).map(|i| l[(i, i)].abs().ln()).sum();
    Ok(0.5 * (a.norm_squared() + b.norm_squared() - m as f64 + 2.0 * log_det_k - 2.0 * log_det_s))
}

/// Quantities of the sparse conditional shared by the ELBO and prediction.
struct Conditional {
    lk: DMatrix<f64>,
    kzx: DMatrix<f64>,
    /// `L_k⁻¹ K_zx` (m × b).
    a: DMatrix<f64>,
    /// `L_cᵀ a` per class.
    w: Vec<DMatrix<f64>>,
    mean: DMatrix<f64>,
    var: DMatrix<f64>,
}

impl Conditional {
    fn new(model: &SvgpModel, x: &DMatrix<f64>) -> Result<Self> {
        let kzz = model.kernel.matrix(&model.inducing, &model.inducing);
        let (lk, _) = cholesky_jittered(&kzz, model.jitter)?;
        let kzx = model.kernel.matrix(&model.inducing, x);
        let a = solve_lower(&lk, &kzx);
        let kxx = model.kernel.variance();
        let a_sq: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
        let c = model.num_classes();
        let b = x.nrows();
        let mut mean = DMatrix::zeros(c, b);
        let mut var = DMatrix::zeros(c, b);
        let mut w = Vec::with_capacity(c);
        for k in 0..c {
            let mu = a.tr_mul(&model.q_mu[k]);
            let wk = model.q_sqrt[k].tr_mul(&a);
            for i in 0..b {
                mean[(k, i)] = mu[i];
                var[(k, i)] = kxx - a_sq[i] + wk.column(i).norm_squared();
            }
            w.push(wk);
        }
        Ok(Self {
            lk,
            kzx,
            a,
            w,
            mean,
            var,
        })
    }
}

/// ELBO value with its gradient in the layout of [`SvgpModel::params`].
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub value: f64,
    pub expected_log_lik: f64,
    pub kl: f64,
    pub grad: Option<Vec<f64>>,
}

/// Minibatch ELBO: `(total_n / b)·Σ_i E_q[log softmax(f_i)_{y_i}] − Σ_c KL_c`,
/// with the expectation estimated from `mc_samples` reparameterized draws.
pub fn elbo(
    model: &SvgpModel,
    x: &DMatrix<f64>,
    y: &[usize],
    total_n: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(elbo_eval(model, x, y, total_n, mc_samples, seed, false)?.value)
}

pub fn elbo_with_grad(
    model: &SvgpModel,
    x: &DMatrix<f64>,
    y: &[usize],
    total_n: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let e = elbo_eval(model, x, y, total_n, mc_samples, seed, true)?;
    Ok((e.value, e.grad.expect("gradient requested")))
}

pub fn elbo_eval(
    model: &SvgpModel,
    x: &DMatrix<f64>,
    y: &[usize],
    total_n: usize,
    mc_samples: usize,
    seed: u64,
    with_grad: bool,
) -> Result<ElboEval> {
    model.check_inputs(x)?;
    let b = x.nrows();
    let c = model.num_classes();
    let m = model.num_inducing();
    if y.len() != b || b == 0 {
        return Err(Error::param(format!("{} labels for {b} inputs", y.len())));
    }
    if let Some(bad) = y.iter().find(|&&l| l >= c) {
        return Err(Error::param(format!("label {bad} outside 0..{c}")));
    }
    if mc_samples == 0 {
        return Err(Error::param("mc_samples must be >= 1"));
    }
    let cond = Conditional::new(model, x)?;
    let scale = total_n as f64 / b as f64;
    let per_sample = scale / mc_samples as f64;

    let sd = cond.var.map(|v| v.max(MIN_VARIANCE).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d_mean = DMatrix::zeros(c, b);
    let mut d_sd = DMatrix::<f64>::zeros(c, b);
    let mut ell = 0.0;
    let mut f = vec![0.0; c];
    let mut eps = vec![0.0; c];
    for i in 0..b {
        for _ in 0..mc_samples {
            for k in 0..c {
                eps[k] = StandardNormal.sample(&mut rng);
                f[k] = cond.mean[(k, i)] + sd[(k, i)] * eps[k];
            }
            let lse = log_sum_exp(&f);
            ell += per_sample * (f[y[i]] - lse);
            if with_grad {
                for k in 0..c {
                    let g = per_sample * ((k == y[i]) as u8 as f64 - (f[k] - lse).exp());
                    d_mean[(k, i)] += g;
                    d_sd[(k, i)] += g * eps[k];
                }
            }
        }
    }
    let kl = model.kl();
    let value = ell - kl;
    if !with_grad {
        return Ok(ElboEval {
            value,
            expected_log_lik: ell,
            kl,
            grad: None,
        });
    }

    let d_var = DMatrix::from_fn(c, b, |k, i| {
        if cond.var[(k, i)] > MIN_VARIANCE {
            d_sd[(k, i)] / (2.0 * sd[(k, i)])
        } else {
            0.0
        }
    });

    let mut grad = Vec::with_capacity(model.n_params());
    let mut d_a = DMatrix::zeros(m, b);
    let mut d_q_sqrt = Vec::with_capacity(c);
    for k in 0..c {
        let dm_row = d_mean.row(k).transpose();
        let dv_row = d_var.row(k).transpose();
        let d_mu = &cond.a * &dm_row - &model.q_mu[k];
        grad.extend(d_mu.iter());

        let l = &model.q_sqrt[k];
        // ∂/∂L of Σ_i dv_i ‖Lᵀ a_i‖² = 2·A·diag(dv)·(LᵀA)ᵀ.
        let a_dv = scale_columns(&cond.a, &dv_row);
        let mut d_l = lower_triangle(&(&a_dv * cond.w[k].transpose() * 2.0)) - lower_triangle(l);
        for j in 0..m {
            d_l[(j, j)] += 1.0 / l[(j, j)];
        }
        d_q_sqrt.push(d_l);

        // Mean term a·dμ and variance term 2·(S_c − I)·a·diag(dv).
        d_a += &model.q_mu[k] * dm_row.transpose();
        let s_a = l * &cond.w[k] - &cond.a;
        d_a += scale_columns(&s_a, &dv_row) * 2.0;
    }
    for (k, d_l) in d_q_sqrt.iter().enumerate() {
        let l = &model.q_sqrt[k];
        for i in 0..m {
            for j in 0..=i {
                grad.push(if i == j { d_l[(i, i)] * l[(i, i)] } else { d_l[(i, j)] });
            }
        }
    }

    let variance = model.kernel.variance();
    let mut d_log_var = variance * d_var.sum();
    let mut d_log_ls = vec![0.0; model.kernel.log_lengthscales.len()];

    // A = L_k⁻¹ K_zx.
    let d_kzx = solve_lower_transpose(&cond.lk, &d_a);
    let d_lk = -lower_triangle(&(&d_kzx * cond.a.transpose()));
    let d_kzz = cholesky_backward(&cond.lk, &d_lk);

    let mut d_z = DMatrix::zeros(m, model.input_dim());
    let kzz = model.kernel.matrix(&model.inducing, &model.inducing);
    kernel_backward(
        &model.kernel,
        &model.inducing,
        &model.inducing,
        &kzz,
        &d_kzz,
        &mut d_z,
        None,
        &mut d_log_var,
        &mut d_log_ls,
    );
    kernel_backward(
        &model.kernel,
        &model.inducing,
        x,
        &cond.kzx,
        &d_kzx,
        &mut d_z,
        None,
        &mut d_log_var,
        &mut d_log_ls,
    );

    for i in 0..m {
        grad.extend(d_z.row(i).iter());
    }
    grad.push(d_log_var);
    grad.extend(d_log_ls);
    debug_assert_eq!(grad.len(), model.n_params());
    Ok(ElboEval {
        value,
        expected_log_lik: ell,
        kl,
        grad: Some(grad),
    })
}

fn scale_columns(a: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// Accumulates the adjoints of `K(A, B)` into the rows of `A` (and of `B`
/// when `d_b` is given; for `B = A` pass `None`, the symmetric adjoint then
/// contributes through both arguments) and the log hyperparameters.
#[allow(clippy::too_many_arguments)]
fn kernel_backward(
    kernel: &RbfKernel,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    g: &DMatrix<f64>,
    d_a: &mut DMatrix<f64>,
    mut d_b: Option<&mut DMatrix<f64>>,
    d_log_var: &mut f64,
    d_log_ls: &mut [f64],
) {
    let dim = a.ncols();
    let inv_sq = kernel.inv_sq(dim);
    let ard = kernel.is_ard();
    let same = std::ptr::eq(a, b);
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let gk = g[(i, j)] * k[(i, j)];
            if gk == 0.0 {
                continue;
            }
            *d_log_var += gk;
            for d in 0..dim {
                let diff = a[(i, d)] - b[(j, d)];
                let t = gk * diff * inv_sq[d];
                d_log_ls[if ard { d } else { 0 }] += t * diff;
                d_a[(i, d)] -= t;
                if same {
                    d_a[(j, d)] += t;
                } else if let Some(db) = d_b.as_deref_mut() {
                    db[(j, d)] += t;
                }
            }
        }
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}
