//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest singular value.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Orthonormal basis of the column span, rejecting rank-deficient input.
pub fn orthonormalize(basis: &Matrix) -> Result<Matrix> {
    let (d, k) = basis.shape();
    if k == 0 {
        return Ok(Matrix::zeros(d, 0));
    }
    let svd = basis.clone().svd(true, false);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return Err(Error::Invalid(format!(
            "rank-deficient basis (singular values {smin:.3e}..{smax:.3e})"
        )));
    }
    let qr = basis.clone().qr();
    Ok(qr.q().columns(0, k).into_owned())
}

/// Orthogonal projector onto the column span of an orthonormal `q`.
pub fn projector(q: &Matrix) -> Matrix {
    q * q.transpose()
}

/// Rows/columns picked by index lists.
pub fn submatrix(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

pub fn subvector(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_fn(idx.len(), |r, _| v[idx[r]])
}

/// Writes `src` into the entries `idx` of `dst`.
pub fn scatter(dst: &mut Vector, idx: &[usize], src: &Vector) {
    for (r, &i) in idx.iter().enumerate() {
        dst[i] = src[r];
    }
}

pub fn embed(d: usize, idx: &[usize], src: &Vector) -> Vector {
    let mut out = Vector::zeros(d);
    scatter(&mut out, idx, src);
    out
}

/// Inclusion matrix of the coordinates `idx` into R^d.
pub fn inclusion(d: usize, idx: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(d, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        m[(i, c)] = 1.0;
    }
    m
}

pub fn inverse(m: &Matrix) -> Result<Matrix> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("singular matrix".into()))
}

pub fn solve(m: &Matrix, b: &Vector) -> Result<Vector> {
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::IllConditioned("singular linear system".into()))
}

/// 2-norm condition number.
pub fn condition(m: &Matrix) -> f64 {
    let s = m.singular_values();
    let lo = s.min();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        s.max() / lo
    }
}

pub fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}
