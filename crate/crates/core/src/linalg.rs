//! Dense helpers shared by the structured routines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result, Stage};

/// Relative size of the diagonal shift used by the single jitter retry.
pub const JITTER: f64 = 1e-10;

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factorization without retry.
pub fn cholesky(m: DMatrix<f64>, stage: Stage) -> Result<Chol> {
    Cholesky::new(m).ok_or(Error::CholeskyFailure(stage))
}

/// Cholesky factorization that retries once after adding
/// `JITTER * trace/n` to the diagonal. Returns the factor and the matrix
/// actually factored.
pub fn cholesky_jitter(m: DMatrix<f64>, stage: Stage) -> Result<(Chol, DMatrix<f64>)> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok((ch, m));
    }
    let n = m.nrows().max(1);
    let shift = JITTER * m.trace().abs() / n as f64;
    let mut shifted = m;
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += shift;
    }
    match Cholesky::new(shifted.clone()) {
        Some(ch) => Ok((ch, shifted)),
        None => Err(Error::CholeskyFailure(stage)),
    }
}

/// Lower Cholesky factor, tolerating empty matrices. With `jitter` the
/// single retry of [`cholesky_jitter`] applies and the factored matrix is
/// returned alongside.
pub fn chol_lower(m: DMatrix<f64>, stage: Stage, jitter: bool) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m.nrows() == 0 {
        return Ok((DMatrix::zeros(0, 0), m));
    }
    if jitter {
        let (ch, used) = cholesky_jitter(m, stage)?;
        Ok((ch.l(), used))
    } else {
        let ch = cholesky(m.clone(), stage)?;
        Ok((ch.l(), m))
    }
}

/// `log det(L Lᵀ)` for lower-triangular `L`.
pub fn lower_logdet(l: &DMatrix<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// `b ← (L Lᵀ)⁻¹ b`.
pub fn chol_solve_in_place<S>(l: &DMatrix<f64>, b: &mut nalgebra::Matrix<f64, Dyn, Dyn, S>)
where
    S: nalgebra::StorageMut<f64, Dyn, Dyn>,
{
    lower_solve_in_place(l, b);
    lower_tr_solve_in_place(l, b);
}

/// `(L Lᵀ)⁻¹ b` for a vector.
pub fn chol_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    chol_solve_in_place(l, &mut m);
    DVector::from_column_slice(m.as_slice())
}

/// `b ← L⁻¹ b` for lower-triangular `L`.
pub fn lower_solve_in_place<S>(l: &DMatrix<f64>, b: &mut nalgebra::Matrix<f64, Dyn, Dyn, S>)
where
    S: nalgebra::StorageMut<f64, Dyn, Dyn>,
{
    if l.nrows() == 0 || b.ncols() == 0 {
        return;
    }
    let ok = l.solve_lower_triangular_mut(b);
    debug_assert!(ok);
}

/// `b ← L⁻ᵀ b` for lower-triangular `L`.
pub fn lower_tr_solve_in_place<S>(l: &DMatrix<f64>, b: &mut nalgebra::Matrix<f64, Dyn, Dyn, S>)
where
    S: nalgebra::StorageMut<f64, Dyn, Dyn>,
{
    if l.nrows() == 0 || b.ncols() == 0 {
        return;
    }
    let ok = l.tr_solve_lower_triangular_mut(b);
    debug_assert!(ok);
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hcat(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for p in parts {
        debug_assert_eq!(p.nrows(), rows);
        out.columns_mut(c0, p.ncols()).copy_from(p);
        c0 += p.ncols();
    }
    out
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

/// Relative vector error `‖a − b‖ / ‖b‖`.
pub fn rel_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}
