//! Eigenvector Z-scores: if `z ~ N(0, K)` then `qⱼᵀz / √λⱼ` is standard
//! normal for every eigenpair, so misfit shows up as an inflated tail among
//! the smallest eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZscoreReport {
    /// The `k` smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `|qⱼᵀz| / √λⱼ` in the same order.
    pub zscores: Vec<f64>,
    /// Half-normal quantiles paired with the sorted Z-scores.
    pub qq: Vec<(f64, f64)>,
}

/// `k` smallest eigenpairs of a symmetric matrix, ascending.
pub fn smallest_eigenpairs(m: &DMatrix<f64>, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(invalid("matrix is not square"));
    }
    if k > n {
        return Err(invalid(format!("requested {k} eigenpairs of an order {n} matrix")));
    }
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_fn(k, |i, _| eig.eigenvalues[order[i]]);
    let mut vecs = DMatrix::zeros(n, k);
    for (c, &i) in order[..k].iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

pub fn half_normal_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    erf(x / std::f64::consts::SQRT_2)
}

pub fn half_normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(p)
}

/// Z-scores of `z` along the `k` smallest eigenvectors of `k_mat`.
pub fn spectral_zscores(k_mat: &DMatrix<f64>, z: &[f64], k: usize) -> Result<ZscoreReport> {
    if z.len() != k_mat.nrows() {
        return Err(invalid(format!("data has length {}, matrix has order {}", z.len(), k_mat.nrows())));
    }
    let (vals, vecs) = smallest_eigenpairs(k_mat, k)?;
    if let Some(i) = (0..k).find(|&i| vals[i] <= 0.0) {
        return Err(Error::NonPositiveEigenvalue { index: i, value: vals[i] });
    }
    let zv = DVector::from_column_slice(z);
    let zscores: Vec<f64> = (0..k).map(|j| vecs.column(j).dot(&zv).abs() / vals[j].sqrt()).collect();
    let mut sorted = zscores.clone();
    sorted.sort_by(f64::total_cmp);
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &e)| (half_normal_quantile((i as f64 + 0.5) / k as f64), e))
        .collect();
    Ok(ZscoreReport { eigenvalues: vals.as_slice().to_vec(), zscores, qq })
}

/// Kolmogorov–Smirnov distance between the sample and the half-normal law.
pub fn ks_statistic(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = half_normal_cdf(x);
            (f - i as f64 / k).max((i + 1) as f64 / k - f)
        })
        .fold(0.0, f64::max)
}

/// Critical value of the one-sample KS test at level 1%, using Stephens'
/// finite-sample correction.
pub fn ks_critical_1pct(k: usize) -> f64 {
    let r = (k as f64).sqrt();
    1.628 / (r + 0.12 + 0.11 / r)
}

impl ZscoreReport {
    pub fn ks_statistic(&self) -> f64 {
        ks_statistic(&self.zscores)
    }

    /// Whether the half-normal hypothesis survives the KS test at 1%.
    pub fn ks_passes(&self) -> bool {
        self.ks_statistic() <= ks_critical_1pct(self.zscores.len())
    }

    pub fn max_zscore(&self) -> f64 {
        self.zscores.iter().copied().fold(0.0, f64::max)
    }
}

/// Negative log-likelihoods of competing fits with their difference from
/// the first entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllSummary {
    pub label: String,
    pub nll: f64,
    pub delta: f64,
}

pub fn compare_nll(entries: &[(String, f64)]) -> Vec<NllSummary> {
    let base = entries.first().map_or(0.0, |e| e.1);
    entries.iter().map(|(l, v)| NllSummary { label: l.clone(), nll: *v, delta: v - base }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum() {
        let z = vec![0.5, -1.0, 2.0];
        let r = spectral_zscores(&DMatrix::identity(3, 3), &z, 3).unwrap();
        assert!(r.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let mut got = r.zscores.clone();
        got.sort_by(f64::total_cmp);
        let norm: f64 = got.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - DVector::from_vec(z).norm()).abs() < 1e-12);
    }

    #[test]
    fn zero_data_and_indefinite_input() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = spectral_zscores(&m, &[0.0, 0.0], 2).unwrap();
        assert!(r.zscores.iter().all(|&v| v == 0.0));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spectral_zscores(&bad, &[1.0, 0.0], 1), Err(Error::NonPositiveEigenvalue { .. })));
    }

    #[test]
    fn half_normal_roundtrip() {
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((half_normal_cdf(half_normal_quantile(p)) - p).abs() < 1e-9);
        }
        assert!((ks_critical_1pct(100) - 0.1608).abs() < 1e-3);
    }
}
