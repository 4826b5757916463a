//! Stochastic trace estimation with probes pushed through the symmetric
//! factor, so that each estimator samples `W⁻¹ ∂K̃ W⁻ᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bfsa::{BfsaMatrix, SymmetricFactor};
use crate::derivatives::BfsaDerivative;
use crate::error::{invalid, Result};
use crate::geometry::PartitionPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    /// Independent ±1 entries.
    Rademacher { seed: u64 },
    /// `√n e_i` for every `i`, which makes every estimator exact.
    Canonical,
}

/// `s` probe vectors of length `n`. Entry `i` of Rademacher probe `l` is the
/// `i`-th draw of stream `l` of a ChaCha generator keyed by the seed, so
/// probes do not depend on generation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeSet {
    pub s: usize,
    pub n: usize,
    pub kind: ProbeKind,
}

impl ProbeSet {
    pub fn rademacher(n: usize, s: usize, seed: u64) -> Self {
        ProbeSet { s, n, kind: ProbeKind::Rademacher { seed } }
    }

    pub fn canonical(n: usize) -> Self {
        ProbeSet { s: n, n, kind: ProbeKind::Canonical }
    }

    /// Probe `l` in original coordinates.
    pub fn vector(&self, l: usize) -> Vec<f64> {
        match self.kind {
            ProbeKind::Rademacher { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(l as u64);
                (0..self.n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
            }
            ProbeKind::Canonical => {
                let mut v = vec![0.0; self.n];
                v[l] = (self.n as f64).sqrt();
                v
            }
        }
    }

    /// All probes as columns, rows in the permuted order of `plan`.
    pub fn matrix_perm(&self, plan: &PartitionPlan) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (0..self.s).into_par_iter().map(|l| plan.permute(&self.vector(l))).collect();
        let mut out = DMatrix::zeros(self.n, self.s);
        for (l, c) in cols.iter().enumerate() {
            out.column_mut(l).copy_from_slice(c);
        }
        out
    }
}

/// Probe images `W⁻ᵀ u_l` and their products with every derivative. These
/// `s (d + 1)` vectors are the memory high-water mark of the estimators.
pub struct ProbeProducts {
    pub s: usize,
    pub w: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
}

impl ProbeProducts {
    pub fn new(w: &SymmetricFactor, derivs: &[BfsaDerivative], probes: &ProbeSet) -> Result<Self> {
        if probes.n != w.n() {
            return Err(invalid(format!("probes have length {}, factor has order {}", probes.n, w.n())));
        }
        let u = probes.matrix_perm(&w.plan);
        let wt = w.solve_tr_perm(&u);
        let g = derivs.par_iter().map(|d| d.mul_mat(&wt)).collect();
        Ok(ProbeProducts { s: probes.s, w: wt, g })
    }

    /// Estimates of `tr(K̃⁻¹ ∂_jK̃)`.
    pub fn traces(&self) -> Vec<f64> {
        let s = self.s as f64;
        self.g.iter().map(|g| self.w.dot(g) / s).collect()
    }

    /// Estimate of the Fisher matrix from the polarized products
    /// `(g_j + g_k)ᵀ K̃⁻¹ (g_j + g_k)`, with the diagonal terms estimated
    /// alongside.
    pub fn fisher(&self, k: &BfsaMatrix) -> DMatrix<f64> {
        let s = self.s as f64;
        let h: Vec<DMatrix<f64>> = self.g.par_iter().map(|g| k.solve_perm_mat(g)).collect();
        let d = self.g.len();
        let diag: Vec<f64> = (0..d).map(|j| self.g[j].dot(&h[j]) / (2.0 * s)).collect();
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|j| (j + 1..d).map(move |k| (j, k))).collect();
        let vals: Vec<f64> = pairs
            .par_iter()
            .map(|&(j, l)| {
                let sum = self.g[j].dot(&h[j]) + self.g[j].dot(&h[l]) + self.g[l].dot(&h[j]) + self.g[l].dot(&h[l]);
                sum / (4.0 * s) - 0.5 * diag[j] - 0.5 * diag[l]
            })
            .collect();
        let mut out = DMatrix::from_diagonal(&DVector::from_vec(diag));
        for (&(j, l), v) in pairs.iter().zip(vals) {
            out[(j, l)] = v;
            out[(l, j)] = v;
        }
        out
    }
}

/// Gradient of the negative log-likelihood with the trace terms estimated
/// and the data term exact.
pub fn saa_grad(
    w: &SymmetricFactor,
    derivs: &[BfsaDerivative],
    probes: &ProbeSet,
    k: &BfsaMatrix,
    y: &[f64],
) -> Result<Vec<f64>> {
    let prod = ProbeProducts::new(w, derivs, probes)?;
    Ok(grad_from_traces(k, derivs, &prod.traces(), y))
}

/// `½ t_j − ½ αᵀ∂_jK̃α` for given trace values.
pub fn grad_from_traces(k: &BfsaMatrix, derivs: &[BfsaDerivative], traces: &[f64], y: &[f64]) -> Vec<f64> {
    let z = DVector::from_vec(k.plan.permute(y));
    let alpha = k.solve_perm(&z);
    derivs
        .par_iter()
        .zip(traces)
        .map(|(d, t)| 0.5 * t - 0.5 * alpha.dot(&d.mul_vec(&alpha)))
        .collect()
}

/// Stochastic estimate of the expected Fisher matrix.
pub fn saa_fisher(
    w: &SymmetricFactor,
    derivs: &[BfsaDerivative],
    probes: &ProbeSet,
    k: &BfsaMatrix,
) -> Result<DMatrix<f64>> {
    Ok(ProbeProducts::new(w, derivs, probes)?.fisher(k))
}

/// Plain Hutchinson estimates `(1/s) Σ u_lᵀ K̃⁻¹ ∂_jK̃ u_l`, for comparison.
pub fn hutchinson_traces(k: &BfsaMatrix, derivs: &[BfsaDerivative], probes: &ProbeSet) -> Vec<f64> {
    let u = probes.matrix_perm(&k.plan);
    let s = probes.s as f64;
    derivs
        .par_iter()
        .map(|d| {
            let du = d.mul_mat(&u);
            k.solve_perm_mat(&u).dot(&du) / s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfsa::assemble;
    use crate::derivatives::Derivatives;
    use crate::geometry::build_plan;
    use crate::kernels::KernelSpec;
    use crate::likelihood::{fisher_exact, grad_exact};
    use crate::Point;

    #[test]
    fn probes_are_order_independent() {
        let p = ProbeSet::rademacher(50, 4, 7);
        let a = p.vector(3);
        let _ = p.vector(0);
        assert_eq!(a, p.vector(3));
        assert!(a.iter().all(|v| *v == 1.0 || *v == -1.0));
        assert_ne!(p.vector(0), p.vector(1));
    }

    #[test]
    fn canonical_probes_are_exact() {
        let pts: Vec<Point> = (0..60).map(|i| [(i % 8) as f64 * 0.13, (i / 8) as f64 * 0.11]).collect();
        let spec = KernelSpec::stationary(1.5, 0.4, 1.0, 1e-3);
        let plan = build_plan(&pts, 4, 6).unwrap();
        let k = assemble(&spec, &pts, &plan).unwrap();
        let w = k.sym_factorize().unwrap();
        let ds = Derivatives::new(&spec, &pts, &k).unwrap().all_first().unwrap();
        let y: Vec<f64> = (0..60).map(|i| (i as f64).cos()).collect();
        let probes = ProbeSet::canonical(60);
        let g = saa_grad(&w, &ds, &probes, &k, &y).unwrap();
        let ge = grad_exact(&k, &ds, &y).unwrap();
        for (a, b) in g.iter().zip(&ge) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
        let f = saa_fisher(&w, &ds, &probes, &k).unwrap();
        let fe = fisher_exact(&k, &ds);
        assert!((f - &fe).amax() < 1e-10 * fe.amax());
    }
}
