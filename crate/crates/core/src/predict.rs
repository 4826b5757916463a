//! Kriging under the two-level kernel. Each target joins the observed
//! block with the nearest centroid; its covariance with that block's
//! reduced points and with the landmarks is exact, everything else goes
//! through the Nyström term.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::bfsa::BfsaMatrix;
use crate::error::{invalid, Error, Result, Stage};
use crate::factor::UpdateFactor;
use crate::geometry::centroids;
use crate::kernels::KernelSpec;
use crate::linalg::{chol_lower, hcat, symmetrize};
use crate::structure::{BlockLowRank, Structured};
use crate::Point;

/// Targets grouped by observed block, with the cross-covariance `K̃_N*`
/// and the prior target covariance blocks.
#[derive(Clone, Debug)]
pub struct PredictionPlan {
    pub targets: Vec<Point>,
    /// Observed block of every target.
    pub block_assignment: Vec<usize>,
    /// `perm[k]` is the target stored at grouped position `k`.
    pub perm: Vec<usize>,
    /// Start of each block's targets in grouped order.
    pub offsets: Vec<usize>,
    /// `Σ_*P`, rows in grouped order.
    pub a_star: DMatrix<f64>,
    /// `K̃_N*` with observation rows permuted like `K̃` and target columns grouped.
    pub cross: Structured,
    /// `Σ_{B*_l B*_l} − (Σ_*P Σ_PP⁻¹ Σ_P*)_ll`.
    pub prior_blocks: Vec<DMatrix<f64>>,
}

/// Nearest full-block centroid for each target, ties to the lowest index.
pub fn assign_targets(centers: &[Point], targets: &[Point]) -> Vec<usize> {
    targets
        .iter()
        .map(|t| {
            let mut best = (f64::INFINITY, 0);
            for (l, c) in centers.iter().enumerate() {
                let d = (t[0] - c[0]).powi(2) + (t[1] - c[1]).powi(2);
                if d < best.0 {
                    best = (d, l);
                }
            }
            best.1
        })
        .collect()
}

impl PredictionPlan {
    pub fn new(spec: &KernelSpec, points: &[Point], k: &BfsaMatrix, targets: &[Point]) -> Result<Self> {
        let plan = &k.plan;
        if points.len() != plan.n() {
            return Err(invalid("points do not match the assembled matrix"));
        }
        let centers = centroids(points, &plan.blocks);
        let assignment = assign_targets(&centers, targets);
        let m = plan.num_blocks();
        let mut groups = vec![Vec::new(); m];
        for (t, &l) in assignment.iter().enumerate() {
            groups[l].push(t);
        }
        let mut perm = Vec::with_capacity(targets.len());
        let mut offsets = Vec::with_capacity(m + 1);
        for g in &groups {
            offsets.push(perm.len());
            perm.extend_from_slice(g);
        }
        offsets.push(perm.len());

        let po = spec.prepare(points);
        let pt = spec.prepare(targets);
        let ev = spec.evaluator();
        let p = plan.p();
        let ns = targets.len();
        let mut a_star = DMatrix::zeros(ns, p);
        for (r, &t) in perm.iter().enumerate() {
            for (c, &j) in plan.landmarks.iter().enumerate() {
                a_star[(r, c)] = ev.entry(&pt, t, &po, j, false)?;
            }
        }
        // Σ_PP⁻¹ Σ_P* for the Nyström parts.
        let mut cinv_at = a_star.transpose();
        k.cinv_in_place(&mut cinv_at);
        let v0 = k.nystrom_basis();
        let mut dx = Vec::with_capacity(m);
        let mut prior = Vec::with_capacity(m);
        for l in 0..m {
            let rows = &plan.blocks_prime[l];
            let cols = &groups[l];
            let (c0, nc) = (offsets[l], cols.len());
            let mut d = DMatrix::zeros(rows.len(), nc);
            for (b, &t) in cols.iter().enumerate() {
                for (a, &i) in rows.iter().enumerate() {
                    d[(a, b)] = ev.entry(&po, i, &pt, t, false)?;
                }
            }
            let r = plan.block_range(l);
            d.gemm(-1.0, &v0.rows(r.start, r.len()), &a_star.rows(c0, nc).transpose(), 1.0);
            dx.push(d);
            let mut s = DMatrix::zeros(nc, nc);
            for b in 0..nc {
                for a in 0..=b {
                    let v = ev.entry(&pt, cols[a], &pt, cols[b], false)?;
                    s[(a, b)] = v;
                    s[(b, a)] = v;
                }
            }
            s.gemm(-1.0, &a_star.rows(c0, nc), &cinv_at.columns(c0, nc), 1.0);
            symmetrize(&mut s);
            prior.push(s);
        }
        let cross = Structured {
            tl: BlockLowRank {
                row_offsets: plan.offsets.clone(),
                col_offsets: offsets.clone(),
                blocks: dx,
                u: v0.clone(),
                v: a_star.clone(),
            },
            tr: DMatrix::zeros(plan.nq(), 0),
            bl: a_star.transpose(),
            br: DMatrix::zeros(p, 0),
        };
        Ok(PredictionPlan {
            targets: targets.to_vec(),
            block_assignment: assignment,
            perm,
            offsets,
            a_star,
            cross,
            prior_blocks: prior,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn ungroup(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &t) in self.perm.iter().enumerate() {
            out[t] = v[k];
        }
        out
    }

    fn ungroup_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pos = vec![0; self.perm.len()];
        for (k, &t) in self.perm.iter().enumerate() {
            pos[t] = k;
        }
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(pos[i], pos[j])])
    }

    /// Dense `K̃_N*` in original observation and target order.
    pub fn cross_dense(&self, k: &BfsaMatrix) -> DMatrix<f64> {
        let grouped = self.cross.to_dense();
        let mut tpos = vec![0; self.perm.len()];
        for (c, &t) in self.perm.iter().enumerate() {
            tpos[t] = c;
        }
        let opos = &k.plan.position;
        DMatrix::from_fn(k.n(), self.len(), |i, t| grouped[(opos[i], tpos[t])])
    }

    /// Dense prior `K̃**` in original target order.
    pub fn prior_dense(&self, k: &BfsaMatrix) -> DMatrix<f64> {
        let mut cinv_at = self.a_star.transpose();
        k.cinv_in_place(&mut cinv_at);
        let lr = BlockLowRank {
            row_offsets: self.offsets.clone(),
            col_offsets: self.offsets.clone(),
            blocks: self.prior_blocks.clone(),
            u: self.a_star.clone(),
            v: cinv_at.transpose(),
        };
        self.ungroup_matrix(&lr.to_dense())
    }
}

/// Kriging mean `K̃*ᵀ K̃⁻¹ y` in original target order.
pub fn cond_mean(k: &BfsaMatrix, y: &[f64], pplan: &PredictionPlan) -> Result<Vec<f64>> {
    if y.len() != k.n() {
        return Err(invalid(format!("expected {} observations, got {}", k.n(), y.len())));
    }
    let alpha = k.solve_perm(&DVector::from_vec(k.plan.permute(y)));
    let grouped = pplan.cross.tr_mul_vec(&alpha);
    Ok(pplan.ungroup(grouped.as_slice()))
}

/// `K̃** − K̃*ᵀ K̃⁻¹ K̃*` as target blocks plus a low-rank term, grouped
/// like the prediction plan.
#[derive(Clone, Debug)]
pub struct ConditionalCovariance {
    pub cov: BlockLowRank,
    perm: Vec<usize>,
}

impl ConditionalCovariance {
    /// Prediction variances in original target order.
    pub fn variances(&self) -> Vec<f64> {
        let d = self.cov.diagonal();
        let mut out = vec![0.0; d.len()];
        for (k, &t) in self.perm.iter().enumerate() {
            out[t] = d[k];
        }
        out
    }

    /// Dense covariance in original target order.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let g = self.cov.to_dense();
        let mut pos = vec![0; self.perm.len()];
        for (k, &t) in self.perm.iter().enumerate() {
            pos[t] = k;
        }
        DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(pos[i], pos[j])])
    }

    pub fn rank(&self) -> usize {
        self.cov.rank()
    }
}

/// Conditional covariance via the structured solve `K̃⁻¹ K̃*` followed by
/// the structured product with `K̃*ᵀ`.
pub fn cond_cov(k: &BfsaMatrix, pplan: &PredictionPlan) -> ConditionalCovariance {
    let w = k.solve_structured(&pplan.cross);
    let x = &pplan.cross.tl;
    let w1 = &w.tl;
    let v0 = &x.u;
    let a_star = &pplan.a_star;
    let m = x.blocks.len();
    let ns = pplan.len();
    let rw = w1.rank();
    let mut blocks = Vec::with_capacity(m);
    let mut dx_uw = DMatrix::zeros(ns, rw);
    let mut v0_dw = DMatrix::zeros(v0.ncols(), ns);
    for l in 0..m {
        let (r0, nr) = x.rows_of(l);
        let (c0, nc) = x.cols_of(l);
        let (dx, dw) = (&x.blocks[l], &w1.blocks[l]);
        let mut b = &pplan.prior_blocks[l] - dx.tr_mul(dw);
        symmetrize(&mut b);
        blocks.push(b);
        dx_uw.rows_mut(c0, nc).copy_from(&dx.tr_mul(&w1.u.rows(r0, nr)));
        v0_dw.columns_mut(c0, nc).copy_from(&v0.rows(r0, nr).tr_mul(dw));
    }
    let mut phi = a_star.transpose();
    k.cinv_in_place(&mut phi);
    phi -= &v0_dw;
    phi -= v0.tr_mul(&w1.u) * w1.v.transpose();
    phi -= &w.bl;
    let cov = BlockLowRank {
        row_offsets: pplan.offsets.clone(),
        col_offsets: pplan.offsets.clone(),
        blocks,
        u: hcat(&[a_star, &(-dx_uw)]),
        v: hcat(&[&phi.transpose(), &w1.v]),
    };
    ConditionalCovariance { cov, perm: pplan.perm.clone() }
}

/// Low-rank part `Q S Qᵀ` with orthonormal `Q` and symmetric `S`.
fn recompress(u: &DMatrix<f64>, v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = u.ncols();
    if r == 0 || u.nrows() == 0 {
        return (DMatrix::zeros(u.nrows(), 0), DMatrix::zeros(0, 0));
    }
    let qr = hcat(&[u, v]).qr();
    let q = qr.q();
    let rr = qr.r();
    let ru = rr.columns(0, r);
    let rv = rr.columns(r, r);
    let mut s = ru * rv.transpose();
    symmetrize(&mut s);
    (q, s)
}

/// Square-root factor of a conditional covariance.
pub enum ConditionalFactor {
    /// Blockwise symmetric square roots, when the low-rank part is negligible.
    Blocks { offsets: Vec<usize>, roots: Vec<DMatrix<f64>> },
    /// Block Cholesky factors updated by the positive low-rank part.
    Update(UpdateFactor),
}

impl ConditionalFactor {
    /// Factors `cov`; eigenvalues of the low-rank part below `tol` in
    /// magnitude are dropped.
    pub fn new(cov: &BlockLowRank, tol: f64) -> Result<Self> {
        let (q, s) = recompress(&cov.u, &cov.v);
        let eig = if s.is_empty() {
            SymmetricEigen { eigenvectors: DMatrix::zeros(0, 0), eigenvalues: DVector::zeros(0) }
        } else {
            SymmetricEigen::new(s)
        };
        if let Some(i) = (0..eig.eigenvalues.len()).find(|&i| eig.eigenvalues[i] < -tol) {
            return Err(Error::NonPositiveEigenvalue { index: i, value: eig.eigenvalues[i] });
        }
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > tol).collect();
        let offsets = cov.row_offsets.clone();
        if keep.is_empty() {
            let roots = cov
                .blocks
                .iter()
                .map(|b| {
                    if b.is_empty() {
                        return DMatrix::zeros(0, 0);
                    }
                    let e = SymmetricEigen::new(b.clone());
                    let sq = e.eigenvalues.map(|l| l.max(0.0).sqrt());
                    &e.eigenvectors * DMatrix::from_diagonal(&sq)
                })
                .collect();
            return Ok(ConditionalFactor::Blocks { offsets, roots });
        }
        let mut a = DMatrix::zeros(cov.nrows(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            a.set_column(c, &(&q * eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
        }
        let mut lb = Vec::with_capacity(cov.blocks.len());
        for (l, b) in cov.blocks.iter().enumerate() {
            lb.push(chol_lower(b.clone(), Stage::Conditional(l), true)?.0);
        }
        let (f, _) = UpdateFactor::new(offsets, lb, &a, &DMatrix::identity(keep.len(), keep.len()))?;
        Ok(ConditionalFactor::Update(f))
    }

    pub fn mul(&self, xi: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ConditionalFactor::Blocks { offsets, roots } => {
                let mut out = DMatrix::zeros(xi.nrows(), xi.ncols());
                for (l, f) in roots.iter().enumerate() {
                    let (r0, nr) = (offsets[l], offsets[l + 1] - offsets[l]);
                    out.rows_mut(r0, nr).copy_from(&(f * xi.rows(r0, nr)));
                }
                out
            }
            ConditionalFactor::Update(f) => f.mul(xi),
        }
    }
}

/// Largest prior target variance under the two-level kernel.
fn prior_scale(k: &BfsaMatrix, pplan: &PredictionPlan) -> f64 {
    let mut cinv_at = pplan.a_star.transpose();
    k.cinv_in_place(&mut cinv_at);
    let mut scale = f64::MIN_POSITIVE;
    for l in 0..pplan.prior_blocks.len() {
        for (i, r) in (pplan.offsets[l]..pplan.offsets[l + 1]).enumerate() {
            let v = pplan.prior_blocks[l][(i, i)] + pplan.a_star.row(r).dot(&cinv_at.column(r).transpose());
            scale = scale.max(v);
        }
    }
    scale
}

/// `count` conditional draws at the targets, each in original target order.
/// Normals are drawn sample by sample from a generator seeded with `seed`.
pub fn cond_simulate(
    k: &BfsaMatrix,
    y: &[f64],
    pplan: &PredictionPlan,
    seed: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let mean = cond_mean(k, y, pplan)?;
    let cc = cond_cov(k, pplan);
    let ns = pplan.len();
    let factor = ConditionalFactor::new(&cc.cov, 1e-10 * prior_scale(k, pplan))?;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let xi = DMatrix::from_fn(ns, count, |_, _| StandardNormal.sample(&mut rng));
    let draws = factor.mul(&xi);
    let grouped_mean: Vec<f64> = pplan.perm.iter().map(|&t| mean[t]).collect();
    Ok((0..count)
        .map(|c| {
            let g: Vec<f64> = (0..ns).map(|r| grouped_mean[r] + draws[(r, c)]).collect();
            pplan.ungroup(&g)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfsa::assemble;
    use crate::geometry::build_plan;
    use crate::kernels::AnisotropyField;
    use crate::linalg::rel_frobenius;
    use rand::Rng;

    fn setup(seed: u64, nugget: f64) -> (Vec<Point>, KernelSpec, BfsaMatrix, Vec<f64>) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..200).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let field =
            AnisotropyField::new(vec![[0.3, 0.4], [0.7, 0.6]], vec![[-1.5, 0.2, -1.3], [-1.2, -0.1, -1.7]]).unwrap();
        let spec = KernelSpec::paciorek_schervish(1.2, 1.0, field, nugget);
        let plan = build_plan(&pts, 8, 16).unwrap();
        let k = assemble(&spec, &pts, &plan).unwrap();
        let y: Vec<f64> = (0..200).map(|_| rng.random::<f64>() - 0.5).collect();
        (pts, spec, k, y)
    }

    #[test]
    fn matches_dense_conditioning() {
        let (pts, spec, k, y) = setup(1, 1e-3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let targets: Vec<Point> = (0..40).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let pp = PredictionPlan::new(&spec, &pts, &k, &targets).unwrap();
        let kd = k.to_dense();
        let kx = pp.cross_dense(&k);
        let kss = pp.prior_dense(&k);
        let ch = kd.cholesky().unwrap();
        let mean_d = kx.transpose() * ch.solve(&DVector::from_vec(y.clone()));
        let mean = DVector::from_vec(cond_mean(&k, &y, &pp).unwrap());
        assert!((&mean - &mean_d).norm() / mean_d.norm() < 1e-9);
        let cov_d = &kss - kx.transpose() * ch.solve(&kx);
        let cc = cond_cov(&k, &pp);
        assert!(cc.rank() <= 4 * k.p());
        assert!(rel_frobenius(&cc.to_dense(), &cov_d) < 1e-9);
    }

    #[test]
    fn interpolates_observed_points() {
        let (pts, spec, k, y) = setup(3, 0.0);
        let centers = centroids(&pts, &k.plan.blocks);
        let owner = k.plan.block_of();
        let mut idx: Vec<usize> = (0..pts.len())
            .filter(|&i| owner[i].is_some_and(|l| assign_targets(&centers, &[pts[i]])[0] == l))
            .take(2)
            .collect();
        idx.push(k.plan.landmarks[2]);
        let targets: Vec<Point> = idx.iter().map(|&i| pts[i]).collect();
        let pp = PredictionPlan::new(&spec, &pts, &k, &targets).unwrap();
        let mean = cond_mean(&k, &y, &pp).unwrap();
        let var = cond_cov(&k, &pp).variances();
        for (t, &i) in idx.iter().enumerate() {
            assert!((mean[t] - y[i]).abs() < 1e-8, "{t}");
            assert!(var[t].abs() < 1e-8, "{t}: {}", var[t]);
        }
        let draws = cond_simulate(&k, &y, &pp, 4, 5).unwrap();
        for d in &draws {
            assert!((d[0] - y[idx[0]]).abs() < 1e-6);
        }
    }

    #[test]
    fn conditional_factor_reproduces_covariance() {
        let (pts, spec, k, _) = setup(5, 1e-2);
        let mut rng = rand::rngs::StdRng::seed_from_u64(6);
        let targets: Vec<Point> = (0..30).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let pp = PredictionPlan::new(&spec, &pts, &k, &targets).unwrap();
        let cc = cond_cov(&k, &pp);
        let dense = cc.cov.to_dense();
        let f = ConditionalFactor::new(&cc.cov, 1e-10).unwrap();
        let fd = f.mul(&DMatrix::identity(30, 30));
        assert!(rel_frobenius(&(&fd * fd.transpose()), &dense) < 1e-8);

        // Force the low-rank path with an explicit positive term.
        let extra = DMatrix::from_fn(30, 2, |i, j| ((i + 3 * j) as f64).sin());
        let mut lr = cc.cov.clone();
        lr.u = hcat(&[&lr.u, &extra]);
        lr.v = hcat(&[&lr.v, &extra]);
        let f = ConditionalFactor::new(&lr, 1e-10).unwrap();
        assert!(matches!(f, ConditionalFactor::Update(_)));
        let fd = f.mul(&DMatrix::identity(30, 30));
        assert!(rel_frobenius(&(&fd * fd.transpose()), &lr.to_dense()) < 1e-8);
    }
}
