//! RMS and function approximation metrics.

use crate::error::{Error, Result};
use crate::tensor_ops::{unvec, Mat, Vector};

/// `sqrt(mean ‖x_k‖²)` over a series of vectors (or scalars as 1-vectors).
pub fn rms<I, T>(series: I) -> Result<f64>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[f64]>,
{
    let mut count = 0usize;
    let mut acc = 0.0;
    for sample in series {
        acc += sample.as_ref().iter().map(|x| x * x).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySeries);
    }
    Ok((acc / count as f64).sqrt())
}

pub fn rms_scalar<I: IntoIterator<Item = f64>>(series: I) -> Result<f64> {
    rms(series.into_iter().map(|x| [x]))
}

/// Frobenius norm of `true − unvec(estimate)`.
pub fn matrix_error(truth: &Mat, estimate: &Vector) -> Result<f64> {
    let est = unvec(estimate, truth.nrows(), truth.ncols())?;
    Ok((truth - est).norm())
}

pub fn vector_error(truth: &Vector, estimate: &Vector) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::Dimension {
            what: "vector estimate",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    Ok((truth - estimate).norm())
}

/// `(M − Φ̂_M) q̈ + (C − Φ̂_C) q̇ + (F − Φ̂_F)`.
#[allow(clippy::too_many_arguments)]
pub fn f_tilde(
    m: &Mat,
    c: &Mat,
    f: &Vector,
    phi_m: &Vector,
    phi_c: &Vector,
    phi_f: &Vector,
    q_ddot: &Vector,
    q_dot: &Vector,
) -> Result<Vector> {
    let n = m.nrows();
    let m_err = m - unvec(phi_m, n, n)?;
    let c_err = c - unvec(phi_c, n, n)?;
    Ok(m_err * q_ddot + c_err * q_dot + (f - phi_f))
}

/// Percent improvement of `developed` over `baseline`; `None` if baseline is 0.
pub fn improvement_percent(baseline: f64, developed: f64) -> Option<f64> {
    if baseline > 0.0 {
        Some(100.0 * (baseline - developed) / baseline)
    } else {
        None
    }
}
