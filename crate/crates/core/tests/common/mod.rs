//! Dense reference computations shared by the integration tests. Nothing
//! here goes through the structured algebra: the two-level matrix and its
//! derivatives are rebuilt entry by entry from the kernel and a dense
//! landmark inverse.
#![allow(dead_code)]

use bfsa::kernels::{kernel_eval, AnisotropyField, KernelSpec};
use bfsa::{PartitionPlan, Point};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn cloud(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
}

pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

pub fn stationary() -> KernelSpec {
    KernelSpec::stationary(1.3, 0.15, 1.0, 1e-3)
}

pub fn ps_two_centers() -> KernelSpec {
    let field =
        AnisotropyField::new(vec![[0.3, 0.4], [0.7, 0.6]], vec![[-1.6, 0.2, -1.9], [-2.1, -0.1, -1.5]]).unwrap();
    KernelSpec::paciorek_schervish(1.1, 1.0, field, 1e-3)
}

/// Random parameters for either kernel family.
pub fn random_spec(rng: &mut StdRng, nonstationary: bool) -> KernelSpec {
    let nugget = 10f64.powf(rng.random_range(-4.0..-2.0));
    if !nonstationary {
        return KernelSpec::stationary(rng.random_range(0.5..2.0), rng.random_range(0.05..0.3), 1.0, nugget);
    }
    let centers = vec![
        [rng.random_range(0.1..0.4), rng.random_range(0.1..0.9)],
        [rng.random_range(0.6..0.9), rng.random_range(0.1..0.9)],
    ];
    let coeffs = centers
        .iter()
        .map(|_| [rng.random_range(-2.5..-1.3), rng.random_range(-0.3..0.3), rng.random_range(-2.5..-1.3)])
        .collect();
    let nu = [0.5, 1.0, 1.5][rng.random_range(0..3)];
    KernelSpec::paciorek_schervish(rng.random_range(0.5..2.0), nu, AnisotropyField::new(centers, coeffs).unwrap(), nugget)
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let nb = b.norm();
    let d = (a - b).norm();
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}

pub fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    rel(&DMatrix::from_column_slice(a.len(), 1, a), &DMatrix::from_column_slice(b.len(), 1, b))
}

pub fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Whether entry `(i, j)` of the two-level matrix is an exact kernel value.
fn exact_mask(plan: &PartitionPlan) -> impl Fn(usize, usize) -> bool + '_ {
    let owner = plan.block_of();
    move |i, j| match (owner[i], owner[j]) {
        (Some(a), Some(b)) => a == b,
        _ => true,
    }
}

/// Dense two-level matrix with first and, on request, second parameter
/// derivatives.
pub struct Oracle {
    pub k: DMatrix<f64>,
    pub d1: Vec<DMatrix<f64>>,
    /// `d2[j][k]` for `k ≥ j`, indexed `d2[j][k - j]`.
    pub d2: Vec<Vec<DMatrix<f64>>>,
}

impl Oracle {
    pub fn second(&self, j: usize, k: usize) -> &DMatrix<f64> {
        let (a, b) = (j.min(k), j.max(k));
        &self.d2[a][b - a]
    }
}

pub fn oracle(spec: &KernelSpec, pts: &[Point], plan: &PartitionPlan, order: usize) -> Oracle {
    let n = pts.len();
    let d = spec.n_params();
    let prep = spec.prepare(pts);
    let ev = spec.evaluator();
    let sigma = DMatrix::from_fn(n, n, |i, j| ev.entry(&prep, i, &prep, j, i == j).unwrap());
    let grad: Vec<DMatrix<f64>> = if order >= 1 {
        (0..d).map(|c| DMatrix::from_fn(n, n, |i, j| ev.grad(&prep, i, &prep, j, c).unwrap())).collect()
    } else {
        Vec::new()
    };
    let lm = &plan.landmarks;
    let p = lm.len();
    let mask = exact_mask(plan);
    let sub_np = |m: &DMatrix<f64>| DMatrix::from_fn(n, p, |i, a| m[(i, lm[a])]);
    let sub_pp = |m: &DMatrix<f64>| DMatrix::from_fn(p, p, |a, b| m[(lm[a], lm[b])]);
    let combine = |exact: &DMatrix<f64>, nys: &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |i, j| if mask(i, j) { exact[(i, j)] } else { nys[(i, j)] })
    };
    let s = sub_np(&sigma);
    let c = sub_pp(&sigma);
    let cinv = if p > 0 { c.clone().cholesky().unwrap().inverse() } else { DMatrix::zeros(0, 0) };
    let g = &cinv * s.transpose();
    let k = combine(&sigma, &(&s * &g));
    let nj = |j: usize| -> DMatrix<f64> {
        let sj = sub_np(&grad[j]);
        let cj = sub_pp(&grad[j]);
        &sj * &g + g.transpose() * sj.transpose() - g.transpose() * &cj * &g
    };
    let d1: Vec<DMatrix<f64>> = grad.iter().enumerate().map(|(j, gj)| combine(gj, &nj(j))).collect();
    let mut d2 = Vec::new();
    if order >= 2 {
        let gk: Vec<DMatrix<f64>> =
            (0..d).map(|k| &cinv * (sub_np(&grad[k]).transpose() - sub_pp(&grad[k]) * &g)).collect();
        for j in 0..d {
            let mut row = Vec::new();
            for kk in j..d {
                let hjk =
                    DMatrix::from_fn(n, n, |a, b| ev.hess(&prep, a, &prep, b, j, kk).unwrap());
                let (sj, cj) = (sub_np(&grad[j]), sub_pp(&grad[j]));
                let (sjk, cjk) = (sub_np(&hjk), sub_pp(&hjk));
                let gkk = &gk[kk];
                let nys = &sjk * &g + &sj * gkk + gkk.transpose() * sj.transpose() + g.transpose() * sjk.transpose()
                    - gkk.transpose() * &cj * &g
                    - g.transpose() * &cjk * &g
                    - g.transpose() * &cj * gkk;
                row.push(combine(&hjk, &nys));
            }
            d2.push(row);
        }
    }
    Oracle { k, d1, d2 }
}

/// Exact kernel matrix with the nugget on the diagonal.
pub fn exact_matrix(spec: &KernelSpec, pts: &[Point]) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| kernel_eval(spec, pts[i], pts[j], i == j).unwrap())
}

pub fn dense_nll(k: &DMatrix<f64>, y: &[f64]) -> f64 {
    let ch = k.clone().cholesky().expect("dense oracle matrix is not positive definite");
    let yv = DVector::from_column_slice(y);
    let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let n = y.len() as f64;
    0.5 * logdet + 0.5 * yv.dot(&ch.solve(&yv)) + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub fn dense_logdet(k: &DMatrix<f64>) -> f64 {
    let ch = k.clone().cholesky().unwrap();
    2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Gradient, expected Fisher information and Hessian of the negative
/// log-likelihood.
pub fn dense_derivatives(o: &Oracle, y: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let ch = o.k.clone().cholesky().unwrap();
    let kinv = ch.inverse();
    let alpha = &kinv * DVector::from_column_slice(y);
    let d = o.d1.len();
    let kd: Vec<DMatrix<f64>> = o.d1.iter().map(|m| &kinv * m).collect();
    let grad = (0..d).map(|j| 0.5 * kd[j].trace() - 0.5 * alpha.dot(&(&o.d1[j] * &alpha))).collect();
    let fisher = DMatrix::from_fn(d, d, |j, k| 0.5 * (&kd[j] * &kd[k]).trace());
    let hess = if o.d2.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        DMatrix::from_fn(d, d, |j, k| {
            let djk = o.second(j, k);
            0.5 * (&kinv * djk).trace() - fisher[(j, k)] + alpha.dot(&(&o.d1[j] * (&kd[k] * &alpha)))
                - 0.5 * alpha.dot(&(djk * &alpha))
        })
    };
    (grad, fisher, hess)
}

/// Nearest centroid of the full blocks, ties to the lowest index.
pub fn nearest_block(pts: &[Point], plan: &PartitionPlan, t: Point) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (l, b) in plan.blocks.iter().enumerate() {
        let cx = b.iter().map(|&i| pts[i][0]).sum::<f64>() / b.len() as f64;
        let cy = b.iter().map(|&i| pts[i][1]).sum::<f64>() / b.len() as f64;
        let dist = (t[0] - cx).powi(2) + (t[1] - cy).powi(2);
        if dist < best.0 {
            best = (dist, l);
        }
    }
    best.1
}

/// Dense `K̃_N*` and `K̃**` under the same case rule as the observations.
pub fn oracle_targets(
    spec: &KernelSpec,
    pts: &[Point],
    plan: &PartitionPlan,
    targets: &[Point],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, ns) = (pts.len(), targets.len());
    let lm = &plan.landmarks;
    let p = lm.len();
    let owner = plan.block_of();
    let assign: Vec<usize> = targets.iter().map(|&t| nearest_block(pts, plan, t)).collect();
    let kf = |a: Point, b: Point| kernel_eval(spec, a, b, false).unwrap();
    let c = DMatrix::from_fn(p, p, |a, b| kernel_eval(spec, pts[lm[a]], pts[lm[b]], a == b).unwrap());
    let cinv = if p > 0 { c.cholesky().unwrap().inverse() } else { DMatrix::zeros(0, 0) };
    let snp = DMatrix::from_fn(n, p, |i, a| kf(pts[i], pts[lm[a]]));
    let stp = DMatrix::from_fn(ns, p, |t, a| kf(targets[t], pts[lm[a]]));
    let nys_x = &snp * &cinv * stp.transpose();
    let nys_s = &stp * &cinv * stp.transpose();
    let kx = DMatrix::from_fn(n, ns, |i, t| match owner[i] {
        Some(l) if l != assign[t] => nys_x[(i, t)],
        _ => kf(pts[i], targets[t]),
    });
    let kss = DMatrix::from_fn(ns, ns, |s, t| {
        if assign[s] == assign[t] {
            kf(targets[s], targets[t])
        } else {
            nys_s[(s, t)]
        }
    });
    (kx, kss)
}
