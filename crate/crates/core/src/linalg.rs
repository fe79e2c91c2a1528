//! Dense helpers on top of nalgebra: jittered Cholesky, triangular solves and
//! the reverse-mode rule for the Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest diagonal jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Lower Cholesky factor of `k + jitter·I`, multiplying the jitter by 10 on
/// each failure up to [`MAX_JITTER`]. Returns the factor and the jitter used.
pub fn cholesky_jittered(k: &DMatrix<f64>, jitter: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut j = jitter.max(0.0);
    loop {
        let mut shifted = k.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += j;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok((ch.l(), j));
        }
        j = if j == 0.0 { 1e-8 } else { j * 10.0 };
        if j > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "Cholesky failed on {}x{} matrix even with jitter {MAX_JITTER:e}",
                k.nrows(),
                k.ncols()
            )));
        }
    }
}

/// `L⁻¹·b` for lower-triangular `l`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a nonzero diagonal")
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor has a nonzero diagonal")
}

/// `L⁻ᵀ·b` for lower-triangular `l`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("triangular factor has a nonzero diagonal")
}

/// Lower triangle of `x`, diagonal halved.
fn phi(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => x[(i, j)],
        std::cmp::Ordering::Equal => 0.5 * x[(i, j)],
        std::cmp::Ordering::Less => 0.0,
    })
}

pub fn lower_triangle(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, x.ncols(), |i, j| if i >= j { x[(i, j)] } else { 0.0 })
}

/// Given `Σ = L·Lᵀ` and the adjoint of `L` (only its lower triangle is
/// read), returns the symmetric adjoint of `Σ`.
pub fn cholesky_backward(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let p = phi(&(l.transpose() * lower_triangle(l_bar)));
    // S = L⁻ᵀ P L⁻¹
    let left = solve_lower_transpose(l, &p);
    let s = solve_lower_transpose(l, &left.transpose()).transpose();
    (&s + s.transpose()) * 0.5
}
