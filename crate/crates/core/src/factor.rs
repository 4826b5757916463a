use nalgebra::DMatrix;

use crate::error::{Result, Stage};
use crate::linalg::{chol_lower, chol_solve_in_place, lower_solve_in_place, lower_tr_solve_in_place, symmetrize};

/// Square factor `F = B + X Yᵀ` of `blkdiag(B_l B_lᵀ) + A C⁻¹ Aᵀ`, with the
/// equivalent form `F = B (I + E (M − I) Eᵀ)` kept for solves. `E` has
/// orthonormal columns spanning `B⁻¹A`.
#[derive(Clone, Debug)]
pub struct UpdateFactor {
    pub(crate) offsets: Vec<usize>,
    pub(crate) b: Vec<DMatrix<f64>>,
    pub(crate) x: DMatrix<f64>,
    pub(crate) y: DMatrix<f64>,
    pub(crate) e: DMatrix<f64>,
    pub(crate) m: DMatrix<f64>,
}

/// Intermediates the symmetric factor needs beyond `F` itself.
pub(crate) struct UpdateParts {
    pub a_tilde: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

impl UpdateFactor {
    /// `b` holds lower Cholesky factors of the diagonal blocks, `l_c` the
    /// lower Cholesky factor of `C`.
    pub(crate) fn new(
        offsets: Vec<usize>,
        b: Vec<DMatrix<f64>>,
        a: &DMatrix<f64>,
        l_c: &DMatrix<f64>,
    ) -> Result<(Self, UpdateParts)> {
        let p = a.ncols();
        let mut a_tilde = a.clone();
        for (l, bl) in b.iter().enumerate() {
            let (r0, nr) = (offsets[l], offsets[l + 1] - offsets[l]);
            lower_solve_in_place(bl, &mut a_tilde.rows_mut(r0, nr));
        }
        let mut h = a_tilde.tr_mul(&a_tilde);
        symmetrize(&mut h);
        let (lh, _) = chol_lower(h, Stage::FactorL, false)?;
        let mut et = a_tilde.transpose();
        lower_solve_in_place(&lh, &mut et);
        let e = et.transpose();
        let mut cl = lh.clone();
        chol_solve_in_place(l_c, &mut cl);
        let mut core = lh.tr_mul(&cl) + DMatrix::identity(p, p);
        symmetrize(&mut core);
        let (m, _) = chol_lower(core, Stage::FactorM, false)?;
        let mut t = &m - DMatrix::identity(p, p);
        lower_tr_solve_in_place(&lh, &mut t);
        let y = &e * t.transpose();
        let f = UpdateFactor { offsets, b, x: a.clone(), y, e, m };
        Ok((f, UpdateParts { a_tilde, l: lh }))
    }

    fn block_apply(&self, v: &mut DMatrix<f64>, op: impl Fn(&DMatrix<f64>, &mut nalgebra::DMatrixViewMut<f64>)) {
        for (l, bl) in self.b.iter().enumerate() {
            let (r0, nr) = (self.offsets[l], self.offsets[l + 1] - self.offsets[l]);
            op(bl, &mut v.rows_mut(r0, nr));
        }
    }

    /// `F v`.
    pub fn mul(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.x * self.y.tr_mul(v);
        for (l, bl) in self.b.iter().enumerate() {
            let (r0, nr) = (self.offsets[l], self.offsets[l + 1] - self.offsets[l]);
            let mut seg = out.rows_mut(r0, nr);
            seg.gemm(1.0, bl, &v.rows(r0, nr), 1.0);
        }
        out
    }

    /// `Fᵀ v`.
    pub fn tr_mul(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.y * self.x.tr_mul(v);
        for (l, bl) in self.b.iter().enumerate() {
            let (r0, nr) = (self.offsets[l], self.offsets[l + 1] - self.offsets[l]);
            let mut seg = out.rows_mut(r0, nr);
            seg.gemm_tr(1.0, bl, &v.rows(r0, nr), 1.0);
        }
        out
    }

    /// `F⁻¹ v = (I − E (I − M⁻¹) Eᵀ) B⁻¹ v`.
    pub fn solve(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = v.clone();
        self.block_apply(&mut w, |bl, seg| lower_solve_in_place(bl, seg));
        let s = self.e.tr_mul(&w);
        let mut ms = s.clone();
        lower_solve_in_place(&self.m, &mut ms);
        w -= &self.e * (s - ms);
        w
    }

    /// `F⁻ᵀ v = B⁻ᵀ (I − E (I − M⁻ᵀ) Eᵀ) v`.
    pub fn solve_tr(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.e.tr_mul(v);
        let mut ms = s.clone();
        lower_tr_solve_in_place(&self.m, &mut ms);
        let mut w = v - &self.e * (s - ms);
        self.block_apply(&mut w, |bl, seg| lower_tr_solve_in_place(bl, seg));
        w
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = &self.x * self.y.transpose();
        for (l, bl) in self.b.iter().enumerate() {
            let (r0, nr) = (self.offsets[l], self.offsets[l + 1] - self.offsets[l]);
            let mut view = out.view_mut((r0, r0), (nr, nr));
            view += bl;
        }
        out
    }
}
