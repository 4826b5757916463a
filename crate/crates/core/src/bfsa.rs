//! The two-level covariance `K̃` in landmark-last permuted form:
//!
//! ```text
//! Π K̃ Πᵀ = [ Σ_QP Σ_PP⁻¹ Σ_PQ + D   Σ_QP ]
//!          [ Σ_PQ                  Σ_PP ]
//! ```
//!
//! with `D = blkdiag(D_1, …, D_m)` the Schur-complement corrections on the
//! reduced blocks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Result, Stage};
use crate::factor::UpdateFactor;
use crate::geometry::PartitionPlan;
use crate::kernels::KernelSpec;
use crate::linalg::{chol_lower, chol_solve_in_place, lower_logdet, lower_solve_in_place, lower_tr_solve_in_place, symmetrize};
use crate::structure::{BlockLowRank, Structured};
use crate::Point;

/// Raw kernel-function submatrices gathered over a plan.
pub(crate) struct Parts {
    pub qp: DMatrix<f64>,
    pub pp: DMatrix<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

/// Evaluates `f` (symmetric in its original-index arguments) on the
/// landmark block, the reduced diagonal blocks, and the `Q × P` cross block.
pub(crate) fn gather<F>(plan: &PartitionPlan, f: F) -> Result<Parts>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let p = plan.p();
    let lm = &plan.landmarks;
    let mut pp = DMatrix::zeros(p, p);
    for b in 0..p {
        for a in 0..=b {
            let v = f(lm[a], lm[b])?;
            pp[(a, b)] = v;
            pp[(b, a)] = v;
        }
    }
    let per_block = plan
        .blocks_prime
        .par_iter()
        .map(|idx| {
            let nb = idx.len();
            let mut d = DMatrix::zeros(nb, nb);
            for b in 0..nb {
                for a in 0..=b {
                    let v = f(idx[a], idx[b])?;
                    d[(a, b)] = v;
                    d[(b, a)] = v;
                }
            }
            let mut s = DMatrix::zeros(nb, p);
            for c in 0..p {
                for a in 0..nb {
                    s[(a, c)] = f(idx[a], lm[c])?;
                }
            }
            Ok((d, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut qp = DMatrix::zeros(plan.nq(), p);
    let mut blocks = Vec::with_capacity(per_block.len());
    for (l, (d, s)) in per_block.into_iter().enumerate() {
        qp.rows_mut(plan.offsets[l], s.nrows()).copy_from(&s);
        blocks.push(d);
    }
    Ok(Parts { qp, pp, blocks })
}

/// Assembled `K̃` with cached Cholesky factors.
#[derive(Clone, Debug)]
pub struct BfsaMatrix {
    pub plan: PartitionPlan,
    /// `Σ_QP`, rows in permuted order.
    pub s_qp: DMatrix<f64>,
    /// `Σ_PP` including the nugget.
    pub s_pp: DMatrix<f64>,
    pub d_blocks: Vec<DMatrix<f64>>,
    pub nugget: f64,
    l_pp: DMatrix<f64>,
    l_blocks: Vec<DMatrix<f64>>,
    v0: DMatrix<f64>,
}

/// Builds `K̃` for `spec` over `points` partitioned by `plan`.
pub fn assemble(spec: &KernelSpec, points: &[Point], plan: &PartitionPlan) -> Result<BfsaMatrix> {
    spec.validate()?;
    if points.len() != plan.n() {
        return Err(invalid(format!("plan covers {} points, got {}", plan.n(), points.len())));
    }
    let prep = spec.prepare(points);
    let ev = spec.evaluator();
    let parts = gather(plan, |i, j| ev.entry(&prep, i, &prep, j, i == j))?;
    BfsaMatrix::from_parts(plan.clone(), parts, spec.nugget)
}

impl BfsaMatrix {
    pub(crate) fn from_parts(plan: PartitionPlan, parts: Parts, nugget: f64) -> Result<Self> {
        let (l_pp, s_pp) = chol_lower(parts.pp, Stage::LandmarkBlock, true)?;
        let p = plan.p();
        let s_qp = parts.qp;
        let per_block = parts
            .blocks
            .into_par_iter()
            .enumerate()
            .map(|(l, sigma)| {
                let r = plan.block_range(l);
                let mut g = s_qp.rows(r.start, r.len()).transpose();
                lower_solve_in_place(&l_pp, &mut g);
                let mut d = sigma - g.tr_mul(&g);
                symmetrize(&mut d);
                let (ld, d) = chol_lower(d, Stage::CorrectionBlock(l), true)?;
                lower_tr_solve_in_place(&l_pp, &mut g);
                Ok((d, ld, g.transpose()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut v0 = DMatrix::zeros(plan.nq(), p);
        let mut d_blocks = Vec::with_capacity(per_block.len());
        let mut l_blocks = Vec::with_capacity(per_block.len());
        for (l, (d, ld, vl)) in per_block.into_iter().enumerate() {
            v0.rows_mut(plan.offsets[l], vl.nrows()).copy_from(&vl);
            d_blocks.push(d);
            l_blocks.push(ld);
        }
        Ok(BfsaMatrix { plan, s_qp, s_pp, d_blocks, nugget, l_pp, l_blocks, v0 })
    }

    pub fn n(&self) -> usize {
        self.plan.n()
    }

    pub fn p(&self) -> usize {
        self.plan.p()
    }

    pub fn nq(&self) -> usize {
        self.plan.nq()
    }

    /// Lower Cholesky factor of `Σ_PP`.
    pub fn landmark_factor(&self) -> &DMatrix<f64> {
        &self.l_pp
    }

    /// Lower Cholesky factors of the correction blocks.
    pub fn block_factors(&self) -> &[DMatrix<f64>] {
        &self.l_blocks
    }

    /// `Σ_QP Σ_PP⁻¹`.
    pub fn nystrom_basis(&self) -> &DMatrix<f64> {
        &self.v0
    }

    pub fn logdet(&self) -> f64 {
        self.l_blocks.iter().map(lower_logdet).sum::<f64>() + lower_logdet(&self.l_pp)
    }

    /// `m ← D⁻¹ m` for an `nq × k` matrix.
    pub(crate) fn dinv_in_place(&self, m: &mut DMatrix<f64>) {
        for (l, ld) in self.l_blocks.iter().enumerate() {
            let r = self.plan.block_range(l);
            chol_solve_in_place(ld, &mut m.rows_mut(r.start, r.len()));
        }
    }

    /// `m ← Σ_PP⁻¹ m` for a `p × k` matrix.
    pub(crate) fn cinv_in_place(&self, m: &mut DMatrix<f64>) {
        chol_solve_in_place(&self.l_pp, m);
    }

    /// `D m` for an `nq × k` matrix.
    pub(crate) fn d_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (l, d) in self.d_blocks.iter().enumerate() {
            let r = self.plan.block_range(l);
            out.rows_mut(r.start, r.len()).gemm(1.0, d, &m.rows(r.start, r.len()), 0.0);
        }
        out
    }

    /// `K̃⁻¹ Z` for an `n × k` matrix in permuted coordinates.
    pub fn solve_perm_mat(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let nq = self.nq();
        let z1 = z.rows(0, nq);
        let z2 = z.rows(nq, self.p());
        let mut w1 = z1 - &self.v0 * z2;
        self.dinv_in_place(&mut w1);
        let mut w2 = z2 - self.s_qp.tr_mul(&w1);
        self.cinv_in_place(&mut w2);
        stack(&w1, &w2)
    }

    /// `K̃ Z` for an `n × k` matrix in permuted coordinates.
    pub fn matvec_perm_mat(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let nq = self.nq();
        let z1 = z.rows(0, nq).into_owned();
        let z2 = z.rows(nq, self.p());
        let az1 = self.s_qp.tr_mul(&z1);
        let top = self.d_mul(&z1) + &self.v0 * &az1 + &self.s_qp * z2;
        let bottom = az1 + &self.s_pp * z2;
        stack(&top, &bottom)
    }

    pub fn solve_perm(&self, z: &DVector<f64>) -> DVector<f64> {
        col(self.solve_perm_mat(&as_mat(z)))
    }

    pub fn matvec_perm(&self, z: &DVector<f64>) -> DVector<f64> {
        col(self.matvec_perm_mat(&as_mat(z)))
    }

    /// `K̃⁻¹ y` in original coordinates.
    pub fn solve_vec(&self, y: &[f64]) -> Vec<f64> {
        let z = DVector::from_vec(self.plan.permute(y));
        self.plan.unpermute(self.solve_perm(&z).as_slice())
    }

    /// `K̃ y` in original coordinates.
    pub fn matvec(&self, y: &[f64]) -> Vec<f64> {
        let z = DVector::from_vec(self.plan.permute(y));
        self.plan.unpermute(self.matvec_perm(&z).as_slice())
    }

    /// `K̃` itself in the structured layout.
    pub fn as_structured(&self) -> Structured {
        let offsets = self.plan.offsets.clone();
        Structured {
            tl: BlockLowRank {
                row_offsets: offsets.clone(),
                col_offsets: offsets,
                blocks: self.d_blocks.clone(),
                u: self.s_qp.clone(),
                v: self.v0.clone(),
            },
            tr: self.s_qp.clone(),
            bl: self.s_qp.transpose(),
            br: self.s_pp.clone(),
        }
    }

    /// Dense `Π K̃ Πᵀ`.
    pub fn to_dense_perm(&self) -> DMatrix<f64> {
        self.as_structured().to_dense()
    }

    /// Dense `K̃` in original coordinates.
    pub fn to_dense(&self) -> DMatrix<f64> {
        unpermute_matrix(&self.plan, &self.to_dense_perm())
    }

    /// `S_QPᵀ W` for a structure whose rows follow the reduced blocks.
    pub(crate) fn a_tr_mul(&self, w: &BlockLowRank) -> DMatrix<f64> {
        let mut out = self.s_qp.tr_mul(&w.u) * w.v.transpose();
        for (l, blk) in w.blocks.iter().enumerate() {
            let (r0, nr) = w.rows_of(l);
            let (c0, nc) = w.cols_of(l);
            out.columns_mut(c0, nc).gemm_tr(1.0, &self.s_qp.rows(r0, nr), blk, 1.0);
        }
        out
    }

    /// `K̃⁻¹ R` kept in the block-diagonal plus low-rank layout. The low-rank
    /// part of the upper-left block grows by `p` columns.
    pub fn solve_structured(&self, r: &Structured) -> Structured {
        let mut blocks = Vec::with_capacity(r.tl.blocks.len());
        for (l, (ld, rb)) in self.l_blocks.iter().zip(&r.tl.blocks).enumerate() {
            debug_assert_eq!(r.tl.rows_of(l).1, ld.nrows());
            let mut w = rb.clone();
            chol_solve_in_place(ld, &mut w);
            blocks.push(w);
        }
        let mut du = r.tl.u.clone();
        self.dinv_in_place(&mut du);
        let mut dv0 = self.v0.clone();
        self.dinv_in_place(&mut dv0);
        let w1 = BlockLowRank {
            row_offsets: r.tl.row_offsets.clone(),
            col_offsets: r.tl.col_offsets.clone(),
            blocks,
            u: crate::linalg::hcat(&[&du, &(-dv0)]),
            v: crate::linalg::hcat(&[&r.tl.v, &r.bl.transpose()]),
        };
        let mut w3 = &r.tr - &self.v0 * &r.br;
        self.dinv_in_place(&mut w3);
        let mut w2 = &r.bl - self.a_tr_mul(&w1);
        self.cinv_in_place(&mut w2);
        let mut w4 = &r.br - self.s_qp.tr_mul(&w3);
        self.cinv_in_place(&mut w4);
        Structured { tl: w1, tr: w3, bl: w2, br: w4 }
    }

    /// Symmetric factor `W` with `W Wᵀ = K̃`.
    pub fn sym_factorize(&self) -> Result<SymmetricFactor> {
        let p = self.p();
        let nq = self.nq();
        if nq == 0 {
            return Ok(SymmetricFactor { plan: self.plan.clone(), f: None, z: DMatrix::zeros(0, p), g: self.l_pp.clone() });
        }
        let (f, parts) = UpdateFactor::new(self.plan.offsets.clone(), self.l_blocks.clone(), &self.s_qp, &self.l_pp)?;
        if p == 0 {
            return Ok(SymmetricFactor { plan: self.plan.clone(), f: Some(f), z: DMatrix::zeros(nq, 0), g: DMatrix::zeros(0, 0) });
        }
        let lt = parts.l.transpose();
        let mut mlt = lt.clone();
        lower_solve_in_place(&f.m, &mut mlt);
        let z = &parts.a_tilde - &f.e * (lt - mlt);
        let h = parts.a_tilde.tr_mul(&parts.a_tilde);
        let mut ch = &self.s_pp + h;
        symmetrize(&mut ch);
        let (r2, _) = chol_lower(ch, Stage::FactorG, false)?;
        let mut y2 = self.s_pp.clone();
        lower_solve_in_place(&r2, &mut y2);
        let mut gg = y2.tr_mul(&y2);
        symmetrize(&mut gg);
        let (g, _) = chol_lower(gg, Stage::FactorG, false)?;
        Ok(SymmetricFactor { plan: self.plan.clone(), f: Some(f), z, g })
    }
}

/// `W = Πᵀ [[F, 0], [Zᵀ, G]] Π` with `F = B + X Yᵀ`.
#[derive(Clone, Debug)]
pub struct SymmetricFactor {
    pub plan: PartitionPlan,
    f: Option<UpdateFactor>,
    z: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl SymmetricFactor {
    pub fn n(&self) -> usize {
        self.plan.n()
    }

    /// Blockwise Cholesky factors `B_l`.
    pub fn b_blocks(&self) -> &[DMatrix<f64>] {
        self.f.as_ref().map_or(&[], |f| &f.b)
    }

    pub fn x(&self) -> Option<&DMatrix<f64>> {
        self.f.as_ref().map(|f| &f.x)
    }

    pub fn y(&self) -> Option<&DMatrix<f64>> {
        self.f.as_ref().map(|f| &f.y)
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    fn split<'a>(&self, v: &'a DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let nq = self.plan.nq();
        (v.rows(0, nq).into_owned(), v.rows(nq, self.plan.p()).into_owned())
    }

    /// `W v` in permuted coordinates.
    pub fn mul_perm(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (v1, v2) = self.split(v);
        let top = self.f.as_ref().map_or_else(|| v1.clone(), |f| f.mul(&v1));
        let bottom = self.z.tr_mul(&v1) + &self.g * v2;
        stack(&top, &bottom)
    }

    /// `Wᵀ v` in permuted coordinates.
    pub fn tr_mul_perm(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (v1, v2) = self.split(v);
        let mut top = self.f.as_ref().map_or_else(|| v1.clone(), |f| f.tr_mul(&v1));
        top += &self.z * &v2;
        let bottom = self.g.tr_mul(&v2);
        stack(&top, &bottom)
    }

    /// `W⁻¹ v` in permuted coordinates.
    pub fn solve_perm(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (v1, v2) = self.split(v);
        let x1 = self.f.as_ref().map_or_else(|| v1.clone(), |f| f.solve(&v1));
        let mut x2 = v2 - self.z.tr_mul(&x1);
        lower_solve_in_place(&self.g, &mut x2);
        stack(&x1, &x2)
    }

    /// `W⁻ᵀ v` in permuted coordinates.
    pub fn solve_tr_perm(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (v1, mut x2) = self.split(v);
        lower_tr_solve_in_place(&self.g, &mut x2);
        let r = v1 - &self.z * &x2;
        let x1 = self.f.as_ref().map_or_else(|| r.clone(), |f| f.solve_tr(&r));
        stack(&x1, &x2)
    }

    /// `W v` in original coordinates.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let z = DMatrix::from_vec(v.len(), 1, self.plan.permute(v));
        self.plan.unpermute(self.mul_perm(&z).as_slice())
    }

    /// `W⁻¹ v` in original coordinates.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let z = DMatrix::from_vec(v.len(), 1, self.plan.permute(v));
        self.plan.unpermute(self.solve_perm(&z).as_slice())
    }

    /// Dense `Π W Πᵀ`.
    pub fn to_dense_perm(&self) -> DMatrix<f64> {
        let nq = self.plan.nq();
        let p = self.plan.p();
        let mut out = DMatrix::zeros(nq + p, nq + p);
        if let Some(f) = &self.f {
            out.view_mut((0, 0), (nq, nq)).copy_from(&f.to_dense());
        }
        out.view_mut((nq, 0), (p, nq)).copy_from(&self.z.transpose());
        out.view_mut((nq, nq), (p, p)).copy_from(&self.g);
        out
    }

    /// Dense `W` in original coordinates.
    pub fn to_dense(&self) -> DMatrix<f64> {
        unpermute_matrix(&self.plan, &self.to_dense_perm())
    }
}

/// `Πᵀ M Π`: entry `(i, j)` of the result is `M[position[i], position[j]]`.
pub fn unpermute_matrix(plan: &PartitionPlan, m: &DMatrix<f64>) -> DMatrix<f64> {
    let pos = &plan.position;
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(pos[i], pos[j])])
}

/// `Π M Πᵀ`.
pub fn permute_matrix(plan: &PartitionPlan, m: &DMatrix<f64>) -> DMatrix<f64> {
    let perm = &plan.perm;
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], perm[j])])
}

pub(crate) fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols().max(bottom.ncols()));
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub(crate) fn as_mat(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub(crate) fn col(m: DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_plan;
    use crate::kernels::{kernel_eval, AnisotropyField};
    use crate::linalg::{rel_error, rel_frobenius};
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    fn ps_spec() -> KernelSpec {
        let field = AnisotropyField::new(
            vec![[0.2, 0.2], [0.8, 0.3], [0.5, 0.9]],
            vec![[-1.6, 0.3, -1.2], [-1.1, -0.2, -1.8], [-1.4, 0.0, -1.4]],
        )
        .unwrap();
        KernelSpec::paciorek_schervish(1.7, 1.0, field, 1e-4)
    }

    /// Two-level case rule evaluated entry by entry with a dense inverse.
    fn oracle(spec: &KernelSpec, pts: &[Point], plan: &PartitionPlan) -> DMatrix<f64> {
        let n = pts.len();
        let sigma = DMatrix::from_fn(n, n, |i, j| kernel_eval(spec, pts[i], pts[j], i == j).unwrap());
        let lm = &plan.landmarks;
        let p = lm.len();
        let spp = DMatrix::from_fn(p, p, |a, b| sigma[(lm[a], lm[b])]);
        let inv = spp.try_inverse().unwrap_or_else(|| DMatrix::zeros(0, 0));
        let snp = DMatrix::from_fn(n, p, |i, a| sigma[(i, lm[a])]);
        let nys = if p > 0 { &snp * inv * snp.transpose() } else { DMatrix::zeros(n, n) };
        let blk = plan.block_of();
        DMatrix::from_fn(n, n, |i, j| match (blk[i], blk[j]) {
            (Some(a), Some(b)) if a != b => nys[(i, j)],
            _ => sigma[(i, j)],
        })
    }

    #[test]
    fn entrywise_case_rule() {
        let pts = cloud(200, 1);
        let spec = ps_spec();
        let plan = build_plan(&pts, 8, 16).unwrap();
        let k = assemble(&spec, &pts, &plan).unwrap();
        let diff = (k.to_dense() - oracle(&spec, &pts, &plan)).amax();
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn logdet_solve_matvec_against_dense() {
        let pts = cloud(200, 2);
        let spec = ps_spec();
        let plan = build_plan(&pts, 8, 16).unwrap();
        let k = assemble(&spec, &pts, &plan).unwrap();
        let dense = k.to_dense();
        let ch = dense.clone().cholesky().unwrap();
        let ld: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((k.logdet() - ld).abs() / ld.abs() < 1e-8);
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        let yv = DVector::from_vec(y.clone());
        let x = DVector::from_vec(k.solve_vec(&y));
        assert!(rel_error(&x, &ch.solve(&yv)) < 1e-9);
        let mv = DVector::from_vec(k.matvec(&y));
        assert!(rel_error(&mv, &(&dense * &yv)) < 1e-12);
        let back = DVector::from_vec(k.solve_vec(mv.as_slice()));
        assert!(rel_error(&back, &yv) < 1e-10);
    }

    #[test]
    fn structured_solve_of_self_is_identity() {
        let pts = cloud(150, 3);
        let plan = build_plan(&pts, 4, 12).unwrap();
        let k = assemble(&ps_spec(), &pts, &plan).unwrap();
        let id = k.solve_structured(&k.as_structured()).to_dense();
        assert!((id - DMatrix::identity(150, 150)).amax() < 1e-9);
    }

    #[test]
    fn symmetric_factor_reconstructs() {
        for (blocks, p) in [(8, 16), (4, 0), (1, 0), (8, 1)] {
            let pts = cloud(200, 4);
            let plan = build_plan(&pts, blocks, p).unwrap();
            let k = assemble(&ps_spec(), &pts, &plan).unwrap();
            let w = k.sym_factorize().unwrap();
            let wd = w.to_dense();
            let kd = k.to_dense();
            assert!(rel_frobenius(&(&wd * wd.transpose()), &kd) < 1e-10, "blocks {blocks} p {p}");
            let v: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
            let back = w.solve(&w.matvec(&v));
            assert!(rel_error(&DVector::from_vec(back), &DVector::from_vec(v)) < 1e-10);
        }
    }

    #[test]
    fn exhaustive_landmarks_are_exact() {
        let pts = cloud(64, 5);
        let spec = ps_spec();
        let plan = PartitionPlan::exhaustive(&pts, 4).unwrap();
        let k = assemble(&spec, &pts, &plan).unwrap();
        let sigma = DMatrix::from_fn(64, 64, |i, j| kernel_eval(&spec, pts[i], pts[j], i == j).unwrap());
        assert!((k.to_dense() - &sigma).amax() < 1e-12);
        let w = k.sym_factorize().unwrap().to_dense();
        assert!(rel_frobenius(&(&w * w.transpose()), &sigma) < 1e-10);
    }
}
