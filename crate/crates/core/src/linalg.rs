//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `nalgebra` dynamic matrices. Symmetric
//! positive-definite systems go through Cholesky with a diagonal ridge
//! fallback when the factorization fails or the matrix is badly conditioned.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CcfError, Result};

/// Condition number above which a ridge is added before factorizing.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative ridge, scaled by `trace / n`.
pub const RIDGE_SCALE: f64 = 1e-10;

/// Eigenvalue gap under which two leading eigenvalues count as tied.
pub const EIGEN_TIE_GAP: f64 = 1e-10;

/// Cholesky factor of a symmetric positive semi-definite matrix, with a
/// ridge of `RIDGE_SCALE * trace / n` added on the diagonal when the plain
/// factorization fails or its condition estimate exceeds `MAX_CONDITION`.
pub fn robust_cholesky(a: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(CcfError::Dimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CcfError::Numeric("non-finite entry in matrix".into()));
    }
    if let Some(chol) = a.clone().cholesky() {
        if cholesky_condition(&chol) <= MAX_CONDITION {
            return Ok(chol);
        }
    }
    let trace = a.trace();
    if trace <= 0.0 || !trace.is_finite() {
        return Err(CcfError::SingularDesign(
            "matrix has non-positive trace".into(),
        ));
    }
    let mut ridged = a.clone();
    let ridge = RIDGE_SCALE * trace / n as f64;
    for i in 0..n {
        ridged[(i, i)] += ridge;
    }
    ridged
        .cholesky()
        .ok_or_else(|| CcfError::SingularDesign("matrix is singular even after ridge".into()))
}

/// Squared ratio of the extreme diagonal entries of the Cholesky factor; a
/// cheap lower bound on the spectral condition number.
fn cholesky_condition(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

/// Solves `a x = b` for symmetric positive (semi-)definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = robust_cholesky(a)?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = robust_cholesky(a)?;
    Ok(chol.solve(b))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(robust_cholesky(a)?.inverse())
}

/// Determinant of a square matrix. Non-finite results are an error.
pub fn determinant(a: &DMatrix<f64>) -> Result<f64> {
    let det = if a.nrows() == 1 {
        a[(0, 0)]
    } else {
        a.clone().lu().determinant()
    };
    if det.is_finite() {
        Ok(det)
    } else {
        Err(CcfError::Numeric("non-finite determinant".into()))
    }
}

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
/// Ties in magnitude resolve to the lowest index.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Unit-norm copy of `v`; `None` when `v` is zero or non-finite.
pub fn normalized(v: &DVector<f64>) -> Option<DVector<f64>> {
    let norm = v.norm();
    if norm > 0.0 && norm.is_finite() {
        Some(v / norm)
    } else {
        None
    }
}

/// Angle between the lines spanned by `a` and `b`, in `[0, pi/2]`.
pub fn angle_between(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let cos = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    cos.acos()
}

/// Leading eigenpair of the generalized symmetric problem `b v = mu s v`
/// with `b` symmetric PSD and `s` symmetric positive definite (ridged if
/// needed). This is the leading eigenvector of `s^{-1} b`. The returned
/// vector has unit Euclidean norm and the sign convention of [`fix_sign`].
pub fn leading_generalized_eigen(
    b: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>)> {
    let n = s.nrows();
    if b.nrows() != n || b.ncols() != n {
        return Err(CcfError::Dimension(format!(
            "eigen problem: b is {}x{}, s is {}x{}",
            b.nrows(),
            b.ncols(),
            n,
            s.ncols()
        )));
    }
    let chol = robust_cholesky(s)?;
    let l = chol.l();
    // c = l^{-1} b l^{-T}
    let left = l
        .solve_lower_triangular(b)
        .ok_or_else(|| CcfError::Numeric("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| CcfError::Numeric("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 10_000)
        .ok_or_else(|| CcfError::Numeric("symmetric eigen solver did not converge".into()))?;
    let top = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(CcfError::Numeric("non-finite eigenvalue".into()));
    }
    let lt = l.transpose();
    let mut best: Option<DVector<f64>> = None;
    for (i, &mu) in eig.eigenvalues.iter().enumerate() {
        if top - mu > EIGEN_TIE_GAP * top.abs().max(1.0) {
            continue;
        }
        let u = eig.eigenvectors.column(i).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| CcfError::Numeric("triangular solve failed".into()))?;
        let mut v = normalized(&v)
            .ok_or_else(|| CcfError::Numeric("degenerate eigenvector".into()))?;
        fix_sign(&mut v);
        best = match best {
            None => Some(v),
            Some(cur) => {
                if abs_lex_greater(&v, &cur) {
                    Some(v)
                } else {
                    Some(cur)
                }
            }
        };
    }
    let v = best.ok_or_else(|| CcfError::Numeric("no eigenvector found".into()))?;
    Ok((top, v))
}

fn abs_lex_greater(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (x.abs(), y.abs());
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    false
}

/// `a' b / n` for two matrices with the same number of rows.
pub fn cross_moment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows().max(1) as f64;
    a.tr_mul(b) / n
}
