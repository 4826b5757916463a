//! Synthetic nonstationary fields for tests, examples and the CLI.

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::bfsa::{assemble, BfsaMatrix};
use crate::error::Result;
use crate::geometry::{build_plan, centroids, kdtree_partition, PartitionPlan};
use crate::kernels::{AnisotropyField, KernelSpec};
use crate::Point;

/// `n` points drawn uniformly from the unit square.
pub fn uniform_points(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random(), rng.random()]).collect()
}

/// Anisotropy field with `m` centers at the centroids of a k-d split of
/// `points` and random coefficients: ranges between 0.05 and 0.2 along each
/// axis with a small shear.
pub fn random_field(points: &[Point], m: usize, seed: u64) -> Result<AnisotropyField> {
    let cells = kdtree_partition(points, m)?;
    let centers = centroids(points, &cells);
    let mut rng = StdRng::seed_from_u64(seed);
    let (lo, hi) = (0.05f64.ln(), 0.2f64.ln());
    let coeffs = centers
        .iter()
        .map(|_| [rng.random_range(lo..hi), rng.random_range(-0.05..0.05), rng.random_range(lo..hi)])
        .collect();
    AnisotropyField::new(centers, coeffs)
}

/// `count` draws from `N(0, K̃)` in original coordinates, via the symmetric
/// factor `K̃ = WWᵀ`.
pub fn simulate(k: &BfsaMatrix, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let w = k.sym_factorize()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let xi = DMatrix::from_fn(k.n(), count, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = w.mul_perm(&xi);
    Ok((0..count).map(|c| k.plan.unpermute(z.column(c).as_slice())).collect())
}

/// Marks each index as held out with probability `fraction`.
pub fn holdout_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() < fraction).collect()
}

/// A nonstationary problem with known truth.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub points: Vec<Point>,
    pub truth: KernelSpec,
    pub plan: PartitionPlan,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub n: usize,
    pub num_centers: usize,
    pub nu: f64,
    pub sigma2: f64,
    pub nugget: f64,
    pub num_blocks: usize,
    pub num_landmarks: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 2000,
            num_centers: 4,
            nu: 1.0,
            sigma2: 1.0,
            nugget: 1e-2,
            num_blocks: 16,
            num_landmarks: 32,
        }
    }
}

/// Draws points, a random field and one realization under the two-level
/// kernel of the resulting plan. Everything derives from `seed`.
pub fn ps_problem(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticProblem> {
    let points = uniform_points(cfg.n, seed);
    let field = random_field(&points, cfg.num_centers, seed.wrapping_add(1))?;
    let truth = KernelSpec::paciorek_schervish(cfg.sigma2, cfg.nu, field, cfg.nugget);
    let plan = build_plan(&points, cfg.num_blocks, cfg.num_landmarks)?;
    let k = assemble(&truth, &points, &plan)?;
    let values = simulate(&k, seed.wrapping_add(2), 1)?.remove(0);
    Ok(SyntheticProblem { points, truth, plan, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig { n: 300, num_blocks: 4, num_landmarks: 8, ..Default::default() };
        let a = ps_problem(&cfg, 9).unwrap();
        let b = ps_problem(&cfg, 9).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.n_params(), 12);
        assert_ne!(a.values, ps_problem(&cfg, 10).unwrap().values);
    }
}
