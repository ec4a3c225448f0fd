//! Vectorization, Kronecker products and the element-wise signum.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which already stores entries in
//! column-major order, so `vec` is a copy of the backing slice.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Column-major stacking: `vec(A)[j*n + i] = A[(i, j)]`.
pub fn vec(a: &Mat) -> Vector {
    Vector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(Error::Dimension {
            what: "unvec",
            expected: rows * cols,
            got: v.len(),
        });
    }
    Ok(Mat::from_column_slice(rows, cols, v.as_slice()))
}

/// Kronecker product `A ⊗ B`, block `(i, j)` equal to `a_ij * B`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (p, q) = b.shape();
    let mut out = Mat::zeros(a.nrows() * p, a.ncols() * q);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for bj in 0..q {
                for bi in 0..p {
                    out[(i * p + bi, j * q + bj)] = aij * b[(bi, bj)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors, `a ⊗ b`.
pub fn kron_vec(a: &Vector, b: &Vector) -> Vector {
    let mut out = Vector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (k, &bk) in b.iter().enumerate() {
            out[i * b.len() + k] = ai * bk;
        }
    }
    out
}

/// Scalar signum with `sgn(0) = 0` (and `sgn(-0.0) = 0`).
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sgn_vec(v: &Vector) -> Vector {
    v.map(sgn)
}
