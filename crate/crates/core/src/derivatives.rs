//! First and second parameter derivatives of `K̃` in its own structured
//! layout. The Nyström term contributes a factored low-rank part of width
//! `2p` (first order) or `4p` (second order).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bfsa::{gather, BfsaMatrix, Parts};
use crate::error::{invalid, Result};
use crate::geometry::PartitionPlan;
use crate::kernels::{KernelSpec, Prepared};
use crate::linalg::{hcat, symmetrize};
use crate::structure::{BlockLowRank, Structured};
use crate::Point;

/// `∂K̃/∂θ_j` or `∂²K̃/∂θ_j∂θ_k`, permuted like its parent `BfsaMatrix`.
pub type BfsaDerivative = Structured;

/// Derivative builder bound to one assembled matrix.
pub struct Derivatives<'a> {
    spec: &'a KernelSpec,
    prep: Prepared,
    k: &'a BfsaMatrix,
}

impl<'a> Derivatives<'a> {
    pub fn new(spec: &'a KernelSpec, points: &[Point], k: &'a BfsaMatrix) -> Result<Self> {
        if points.len() != k.n() {
            return Err(invalid("points do not match the assembled matrix"));
        }
        Ok(Derivatives { spec, prep: spec.prepare(points), k })
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    pub fn matrix(&self) -> &BfsaMatrix {
        self.k
    }

    fn check(&self, j: usize) -> Result<()> {
        if j >= self.n_params() {
            return Err(invalid(format!("parameter index {j} out of range for {} parameters", self.n_params())));
        }
        Ok(())
    }

    fn finish(&self, parts: Parts, u: DMatrix<f64>, v: DMatrix<f64>) -> BfsaDerivative {
        let plan = &self.k.plan;
        let blocks: Vec<DMatrix<f64>> = parts
            .blocks
            .into_iter()
            .enumerate()
            .map(|(l, mut blk)| {
                let r = plan.block_range(l);
                blk.gemm(-1.0, &u.rows(r.start, r.len()), &v.rows(r.start, r.len()).transpose(), 1.0);
                symmetrize(&mut blk);
                blk
            })
            .collect();
        Structured {
            tl: BlockLowRank {
                row_offsets: plan.offsets.clone(),
                col_offsets: plan.offsets.clone(),
                blocks,
                u,
                v,
            },
            bl: parts.qp.transpose(),
            tr: parts.qp,
            br: parts.pp,
        }
    }

    /// `∂K̃/∂θ_j`.
    pub fn first(&self, j: usize) -> Result<BfsaDerivative> {
        self.check(j)?;
        let ev = self.spec.evaluator();
        let prep = &self.prep;
        let parts = gather(&self.k.plan, |a, b| ev.grad(prep, a, prep, b, j))?;
        let v0 = self.k.nystrom_basis();
        let aj = &parts.qp;
        let cj = &parts.pp;
        let u = hcat(&[aj, v0]);
        let v = hcat(&[v0, &(aj - v0 * cj)]);
        Ok(self.finish(parts, u, v))
    }

    /// Every first derivative, built in parallel over parameters.
    pub fn all_first(&self) -> Result<Vec<BfsaDerivative>> {
        (0..self.n_params()).into_par_iter().map(|j| self.first(j)).collect()
    }

    /// `∂²K̃/∂θ_j∂θ_k` given the first derivatives `dj`, `dk`.
    pub fn second(&self, j: usize, k: usize, dj: &BfsaDerivative, dk: &BfsaDerivative) -> Result<BfsaDerivative> {
        self.check(j)?;
        self.check(k)?;
        let ev = self.spec.evaluator();
        let prep = &self.prep;
        let parts = gather(&self.k.plan, |a, b| ev.hess(prep, a, prep, b, j, k))?;
        let v0 = self.k.nystrom_basis();
        let (aj, cj) = (&dj.tr, &dj.br);
        let (ak, ck) = (&dk.tr, &dk.br);
        let right_cinv = |m: DMatrix<f64>| {
            let mut t = m.transpose();
            self.k.cinv_in_place(&mut t);
            t.transpose()
        };
        let x2 = right_cinv(ak - v0 * ck);
        let x3 = right_cinv(aj - v0 * cj);
        let x4 = &parts.qp - &x2 * cj - &x3 * ck - v0 * &parts.pp;
        let u = hcat(&[&parts.qp, aj, ak, v0]);
        let v = hcat(&[v0, &x2, &x3, &x4]);
        Ok(self.finish(parts, u, v))
    }
}

/// `∂K̃/∂θ_j` for `spec` at `points`.
pub fn d_assemble(
    spec: &KernelSpec,
    points: &[Point],
    plan: &PartitionPlan,
    k: &BfsaMatrix,
    j: usize,
) -> Result<BfsaDerivative> {
    if plan != &k.plan {
        return Err(invalid("plan differs from the assembled matrix"));
    }
    Derivatives::new(spec, points, k)?.first(j)
}

/// `∂²K̃/∂θ_j∂θ_k` for `spec` at `points`.
pub fn d2_assemble(
    spec: &KernelSpec,
    points: &[Point],
    plan: &PartitionPlan,
    k: &BfsaMatrix,
    j: usize,
    l: usize,
) -> Result<BfsaDerivative> {
    if plan != &k.plan {
        return Err(invalid("plan differs from the assembled matrix"));
    }
    let d = Derivatives::new(spec, points, k)?;
    let dj = d.first(j)?;
    let dl = if l == j { dj.clone() } else { d.first(l)? };
    d.second(j, l, &dj, &dl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfsa::assemble;
    use crate::geometry::build_plan;
    use crate::kernels::AnisotropyField;
    use rand::{Rng, SeedableRng};

    fn setup(n: usize, seed: u64) -> (Vec<Point>, KernelSpec, PartitionPlan) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let field = AnisotropyField::new(
            vec![[0.25, 0.3], [0.8, 0.7]],
            vec![[-1.5, 0.2, -1.2], [-1.0, -0.3, -1.6]],
        )
        .unwrap();
        let spec = KernelSpec::paciorek_schervish(1.3, 1.0, field, 1e-3);
        let plan = build_plan(&pts, 4, 8).unwrap();
        (pts, spec, plan)
    }

    fn dense_at(spec: &KernelSpec, pts: &[Point], plan: &PartitionPlan, theta: &[f64]) -> DMatrix<f64> {
        assemble(&spec.with_theta(theta).unwrap(), pts, plan).unwrap().to_dense_perm()
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let (pts, spec, plan) = setup(60, 3);
        let k = assemble(&spec, &pts, &plan).unwrap();
        let d = Derivatives::new(&spec, &pts, &k).unwrap();
        let theta = spec.theta();
        let h = 1e-5;
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += h;
            tm[j] -= h;
            let fd = (dense_at(&spec, &pts, &plan, &tp) - dense_at(&spec, &pts, &plan, &tm)) / (2.0 * h);
            let an = d.first(j).unwrap().to_dense();
            assert!((&an - &fd).norm() / fd.norm() < 1e-6, "param {j}");
        }
    }

    #[test]
    fn second_derivative_is_symmetric_in_parameters() {
        let (pts, spec, plan) = setup(40, 5);
        let k = assemble(&spec, &pts, &plan).unwrap();
        let a = d2_assemble(&spec, &pts, &plan, &k, 1, 4).unwrap().to_dense();
        let b = d2_assemble(&spec, &pts, &plan, &k, 4, 1).unwrap().to_dense();
        assert!((a - b).amax() < 1e-12);
    }
}
