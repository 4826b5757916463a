//! Negative log-likelihood and its exact derivatives under `K̃`, with and
//! without the closed-form profile of the overall scale.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bfsa::BfsaMatrix;
use crate::derivatives::BfsaDerivative;
use crate::error::{invalid, Result};
use crate::structure::Structured;

/// `K̃` together with `K̃⁻¹ y` and the objective value.
#[derive(Clone, Debug)]
pub struct LikelihoodState {
    pub k: BfsaMatrix,
    /// `K̃⁻¹ y` in permuted coordinates.
    pub alpha: DVector<f64>,
    pub nll_value: f64,
    pub theta: Vec<f64>,
}

impl LikelihoodState {
    pub fn new(k: BfsaMatrix, y: &[f64], theta: Vec<f64>) -> Result<Self> {
        let z = permuted(&k, y)?;
        let alpha = k.solve_perm(&z);
        let nll_value = nll_from(&k, &z, &alpha);
        Ok(LikelihoodState { k, alpha, nll_value, theta })
    }

    /// `K̃⁻¹ y` in original coordinates.
    pub fn kinv_y(&self) -> Vec<f64> {
        self.k.plan.unpermute(self.alpha.as_slice())
    }
}

fn permuted(k: &BfsaMatrix, y: &[f64]) -> Result<DVector<f64>> {
    if y.len() != k.n() {
        return Err(invalid(format!("expected {} observations, got {}", k.n(), y.len())));
    }
    Ok(DVector::from_vec(k.plan.permute(y)))
}

fn nll_from(k: &BfsaMatrix, z: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = k.n() as f64;
    0.5 * k.logdet() + 0.5 * z.dot(alpha) + 0.5 * n * (2.0 * PI).ln()
}

/// `½ log det K̃ + ½ yᵀK̃⁻¹y + (n/2) log 2π`.
pub fn nll(k: &BfsaMatrix, y: &[f64]) -> Result<f64> {
    let z = permuted(k, y)?;
    Ok(nll_from(k, &z, &k.solve_perm(&z)))
}

/// `yᵀ K̃(1, θ)⁻¹ y / n` for a matrix assembled at unit scale.
pub fn profile_sigma2(k_unit: &BfsaMatrix, y: &[f64]) -> Result<f64> {
    let z = permuted(k_unit, y)?;
    Ok(z.dot(&k_unit.solve_perm(&z)) / k_unit.n() as f64)
}

/// Negative log-likelihood with the scale replaced by its profile optimum.
pub fn profile_nll(k_unit: &BfsaMatrix, y: &[f64]) -> Result<f64> {
    let n = k_unit.n() as f64;
    let q = profile_sigma2(k_unit, y)? * n;
    Ok(0.5 * k_unit.logdet() + 0.5 * n * (q / n).ln() + 0.5 * n * (1.0 + (2.0 * PI).ln()))
}

/// `K̃⁻¹ ∂_j K̃` for every derivative, in parallel.
pub fn solve_all(k: &BfsaMatrix, derivs: &[BfsaDerivative]) -> Vec<Structured> {
    derivs.par_iter().map(|d| k.solve_structured(d)).collect()
}

/// `½ tr(S_j S_k)` from precomputed `S_j = K̃⁻¹ ∂_j K̃`.
pub fn fisher_from_solved(solved: &[Structured]) -> DMatrix<f64> {
    let d = solved.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j..d).map(move |k| (j, k))).collect();
    let vals: Vec<f64> = pairs.par_iter().map(|&(j, k)| 0.5 * solved[j].trace_product(&solved[k])).collect();
    let mut out = DMatrix::zeros(d, d);
    for (&(j, k), v) in pairs.iter().zip(vals) {
        out[(j, k)] = v;
        out[(k, j)] = v;
    }
    out
}

/// Gradient of [`nll`]: `½ tr(K̃⁻¹∂_jK̃) − ½ αᵀ ∂_jK̃ α`.
pub fn grad_exact(k: &BfsaMatrix, derivs: &[BfsaDerivative], y: &[f64]) -> Result<Vec<f64>> {
    let z = permuted(k, y)?;
    let alpha = k.solve_perm(&z);
    Ok(derivs
        .par_iter()
        .map(|d| 0.5 * k.solve_structured(d).trace() - 0.5 * alpha.dot(&d.mul_vec(&alpha)))
        .collect())
}

/// Expected Fisher information `½ tr(K̃⁻¹∂_jK̃ K̃⁻¹∂_kK̃)`.
pub fn fisher_exact(k: &BfsaMatrix, derivs: &[BfsaDerivative]) -> DMatrix<f64> {
    fisher_from_solved(&solve_all(k, derivs))
}

/// Hessian of [`nll`]. `second(j, k)` yields `∂²K̃/∂θ_j∂θ_k` on demand.
pub fn hessian_exact<F>(k: &BfsaMatrix, derivs: &[BfsaDerivative], second: F, y: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(usize, usize) -> Result<BfsaDerivative> + Sync,
{
    let z = permuted(k, y)?;
    let alpha = k.solve_perm(&z);
    let solved = solve_all(k, derivs);
    let fisher = fisher_from_solved(&solved);
    let v: Vec<DVector<f64>> = derivs.par_iter().map(|d| d.mul_vec(&alpha)).collect();
    let kinv_v: Vec<DVector<f64>> = v.par_iter().map(|x| k.solve_perm(x)).collect();
    let d = derivs.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j..d).map(move |k| (j, k))).collect();
    let vals = pairs
        .par_iter()
        .map(|&(j, l)| {
            let djl = second(j, l)?;
            let tr = k.solve_structured(&djl).trace();
            Ok(-fisher[(j, l)] + 0.5 * tr + v[j].dot(&kinv_v[l]) - 0.5 * alpha.dot(&djl.mul_vec(&alpha)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut out = DMatrix::zeros(d, d);
    for (&(j, l), h) in pairs.iter().zip(vals) {
        out[(j, l)] = h;
        out[(l, j)] = h;
    }
    Ok(out)
}

/// Traces `tr(R⁻¹R_j)`, quadratic forms `αᵀR_jα` and the solved
/// derivatives for a unit-scale matrix `R`.
pub struct ProfileTerms {
    pub n: usize,
    pub q: f64,
    pub traces: Vec<f64>,
    pub quads: Vec<f64>,
    pub solved: Vec<Structured>,
}

impl ProfileTerms {
    pub fn new(k_unit: &BfsaMatrix, derivs: &[BfsaDerivative], y: &[f64]) -> Result<Self> {
        let z = permuted(k_unit, y)?;
        let alpha = k_unit.solve_perm(&z);
        let solved = solve_all(k_unit, derivs);
        let traces = solved.iter().map(Structured::trace).collect();
        let quads = derivs.par_iter().map(|d| alpha.dot(&d.mul_vec(&alpha))).collect();
        Ok(ProfileTerms { n: k_unit.n(), q: z.dot(&alpha), traces, quads, solved })
    }

    pub fn sigma2(&self) -> f64 {
        self.q / self.n as f64
    }

    /// Gradient of [`profile_nll`].
    pub fn grad(&self) -> Vec<f64> {
        let s2 = self.sigma2();
        self.traces.iter().zip(&self.quads).map(|(t, q)| 0.5 * t - 0.5 * q / s2).collect()
    }

    /// Fisher information of the profiled parameters: the `θθ` block with
    /// the scale eliminated by its Schur complement.
    pub fn fisher(&self) -> DMatrix<f64> {
        let t = DVector::from_column_slice(&self.traces);
        fisher_from_solved(&self.solved) - (&t * t.transpose()) / (2.0 * self.n as f64)
    }
}

/// Gradient of [`profile_nll`].
pub fn profile_grad(k_unit: &BfsaMatrix, derivs: &[BfsaDerivative], y: &[f64]) -> Result<Vec<f64>> {
    Ok(ProfileTerms::new(k_unit, derivs, y)?.grad())
}

/// Hessian of [`profile_nll`].
pub fn profile_hessian<F>(k_unit: &BfsaMatrix, derivs: &[BfsaDerivative], second: F, y: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(usize, usize) -> Result<BfsaDerivative> + Sync,
{
    let z = permuted(k_unit, y)?;
    let alpha = k_unit.solve_perm(&z);
    let q = z.dot(&alpha);
    let n = k_unit.n() as f64;
    let solved = solve_all(k_unit, derivs);
    let v: Vec<DVector<f64>> = derivs.par_iter().map(|d| d.mul_vec(&alpha)).collect();
    let kinv_v: Vec<DVector<f64>> = v.par_iter().map(|x| k_unit.solve_perm(x)).collect();
    let qj: Vec<f64> = v.iter().map(|x| -alpha.dot(x)).collect();
    let d = derivs.len();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j..d).map(move |k| (j, k))).collect();
    let vals = pairs
        .par_iter()
        .map(|&(j, l)| {
            let djl = second(j, l)?;
            let tr_jl = k_unit.solve_structured(&djl).trace();
            let dt = -solved[j].trace_product(&solved[l]) + tr_jl;
            let qjl = 2.0 * v[l].dot(&kinv_v[j]) - alpha.dot(&djl.mul_vec(&alpha));
            Ok(0.5 * dt + 0.5 * n * (qjl / q - qj[j] * qj[l] / (q * q)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut out = DMatrix::zeros(d, d);
    for (&(j, l), h) in pairs.iter().zip(vals) {
        out[(j, l)] = h;
        out[(l, j)] = h;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfsa::assemble;
    use crate::derivatives::Derivatives;
    use crate::geometry::build_plan;
    use crate::kernels::{AnisotropyField, KernelSpec};
    use crate::Point;
    use rand::{Rng, SeedableRng};

    fn setup(n: usize, seed: u64) -> (Vec<Point>, Vec<f64>, KernelSpec) {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let field =
            AnisotropyField::new(vec![[0.3, 0.5], [0.7, 0.5]], vec![[-1.4, 0.1, -1.3], [-1.2, -0.2, -1.6]]).unwrap();
        (pts, y, KernelSpec::paciorek_schervish(1.0, 1.0, field, 1e-2))
    }

    #[test]
    fn profile_gradient_and_hessian_match_finite_differences() {
        let (pts, y, spec) = setup(80, 11);
        let plan = build_plan(&pts, 4, 8).unwrap();
        let f = |th: &[f64]| profile_nll(&assemble(&spec.with_theta(th).unwrap(), &pts, &plan).unwrap(), &y).unwrap();
        let fg = |th: &[f64]| {
            let s = spec.with_theta(th).unwrap();
            let k = assemble(&s, &pts, &plan).unwrap();
            let ds = Derivatives::new(&s, &pts, &k).unwrap().all_first().unwrap();
            profile_grad(&k, &ds, &y).unwrap()
        };
        let theta = spec.theta();
        let k = assemble(&spec, &pts, &plan).unwrap();
        let d = Derivatives::new(&spec, &pts, &k).unwrap();
        let ds = d.all_first().unwrap();
        let g = profile_grad(&k, &ds, &y).unwrap();
        let h = profile_hessian(&k, &ds, |a, b| d.second(a, b, &ds[a], &ds[b]), &y).unwrap();
        let step = 1e-5;
        for j in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += step;
            tm[j] -= step;
            let fd = (f(&tp) - f(&tm)) / (2.0 * step);
            assert!((g[j] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "grad {j}: {} vs {fd}", g[j]);
            let gp = fg(&tp);
            let gm = fg(&tm);
            for l in 0..theta.len() {
                let fd2 = (gp[l] - gm[l]) / (2.0 * step);
                assert!((h[(j, l)] - fd2).abs() < 1e-4 * (1.0 + fd2.abs()), "hess {j},{l}");
            }
        }
    }
}
