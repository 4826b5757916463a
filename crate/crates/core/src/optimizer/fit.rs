use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bfsa::{assemble, BfsaMatrix};
use crate::derivatives::{BfsaDerivative, Derivatives};
use crate::error::{invalid, Error, Result};
use crate::geometry::{centroids, PartitionPlan};
use crate::kernels::{AnisotropyField, KernelSpec};
use crate::likelihood::{fisher_from_solved, hessian_exact, nll, profile_hessian, profile_nll, solve_all, ProfileTerms};
use crate::saa::{ProbeProducts, ProbeSet};
use crate::Point;

use super::trust_region::{minimize, Objective, Termination};
use super::{CurvatureMode, TrustRegionConfig};

/// Negative log-likelihood over a subset of the kernel parameters.
///
/// For a nonstationary kernel the scale is profiled out: the working matrix
/// is `R + τI` at unit variance, with the nugget ratio `τ` taken from the
/// starting specification as `nugget / sigma2`.
pub struct GpObjective<'a> {
    spec: KernelSpec,
    points: &'a [Point],
    y: &'a [f64],
    plan: &'a PartitionPlan,
    free: Vec<usize>,
    base: Vec<f64>,
    profile: bool,
    config: &'a TrustRegionConfig,
}

impl<'a> GpObjective<'a> {
    pub fn new(
        spec: &KernelSpec,
        points: &'a [Point],
        y: &'a [f64],
        plan: &'a PartitionPlan,
        free: Vec<usize>,
        config: &'a TrustRegionConfig,
    ) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        if y.len() != points.len() || plan.n() != points.len() {
            return Err(invalid("points, values and plan sizes differ"));
        }
        let d = spec.n_params();
        if free.iter().any(|&j| j >= d) {
            return Err(invalid("free parameter index out of range"));
        }
        let profile = spec.is_nonstationary();
        let mut spec = spec.clone();
        if profile {
            spec.nugget /= spec.matern.sigma2;
            spec.matern.sigma2 = 1.0;
        }
        let base = spec.theta();
        Ok(GpObjective { spec, points, y, plan, free, base, profile, config })
    }

    pub fn is_profiled(&self) -> bool {
        self.profile
    }

    pub fn x0(&self) -> Vec<f64> {
        self.free.iter().map(|&j| self.base[j]).collect()
    }

    pub fn theta(&self, x: &[f64]) -> Vec<f64> {
        let mut th = self.base.clone();
        for (&j, v) in self.free.iter().zip(x) {
            th[j] = *v;
        }
        th
    }

    /// Working specification at `x`; unit scale in profile mode.
    pub fn spec_at(&self, x: &[f64]) -> Result<KernelSpec> {
        self.spec.with_theta(&self.theta(x))
    }

    fn assemble_at(&self, x: &[f64]) -> Result<(KernelSpec, BfsaMatrix)> {
        let spec = self.spec_at(x)?;
        let k = assemble(&spec, self.points, self.plan)?;
        Ok((spec, k))
    }

    fn objective(&self, k: &BfsaMatrix) -> Result<f64> {
        if self.profile {
            profile_nll(k, self.y)
        } else {
            nll(k, self.y)
        }
    }

    /// Fitted specification at `x` with the profiled scale restored.
    pub fn fitted_spec(&self, x: &[f64]) -> Result<(KernelSpec, f64)> {
        let (spec, k) = self.assemble_at(x)?;
        if !self.profile {
            let s2 = spec.matern.sigma2;
            return Ok((spec, s2));
        }
        let s2 = crate::likelihood::profile_sigma2(&k, self.y)?;
        let mut out = spec.with_sigma2(s2);
        out.nugget = self.spec.nugget * s2;
        Ok((out, s2))
    }

    fn model_inner(&self, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let (spec, k) = self.assemble_at(x)?;
        let f = self.objective(&k)?;
        let builder = Derivatives::new(&spec, self.points, &k)?;
        let ds: Vec<BfsaDerivative> =
            self.free.par_iter().map(|&j| builder.first(j)).collect::<Result<Vec<_>>>()?;
        let n = k.n() as f64;
        let z = DVector::from_vec(self.plan.permute(self.y));
        let alpha = k.solve_perm(&z);
        let quads: Vec<f64> = ds.par_iter().map(|d| alpha.dot(&d.mul_vec(&alpha))).collect();
        let grad_of = |traces: &[f64]| -> Vec<f64> {
            let s2 = if self.profile { z.dot(&alpha) / n } else { 1.0 };
            traces.iter().zip(&quads).map(|(t, q)| 0.5 * t - 0.5 * q / s2).collect()
        };
        let schur = |mut fisher: DMatrix<f64>, traces: &[f64]| {
            if self.profile {
                let t = DVector::from_column_slice(traces);
                fisher -= (&t * t.transpose()) / (2.0 * n);
            }
            fisher
        };
        let second = |a: usize, b: usize| builder.second(self.free[a], self.free[b], &ds[a], &ds[b]);
        let (g, b) = match self.config.curvature_mode {
            CurvatureMode::FisherSaa => {
                let w = k.sym_factorize()?;
                let seed = if self.config.saa_redraw {
                    self.config.saa_seed.wrapping_add(iteration as u64)
                } else {
                    self.config.saa_seed
                };
                let probes = ProbeSet::rademacher(k.n(), self.config.saa_samples, seed);
                let prod = ProbeProducts::new(&w, &ds, &probes)?;
                let traces = prod.traces();
                (grad_of(&traces), schur(prod.fisher(&k), &traces))
            }
            CurvatureMode::FisherExact => {
                let solved = solve_all(&k, &ds);
                let traces: Vec<f64> = solved.iter().map(|s| s.trace()).collect();
                (grad_of(&traces), schur(fisher_from_solved(&solved), &traces))
            }
            CurvatureMode::HessianExact => {
                let solved = solve_all(&k, &ds);
                let traces: Vec<f64> = solved.iter().map(|s| s.trace()).collect();
                let h = if self.profile {
                    profile_hessian(&k, &ds, second, self.y)?
                } else {
                    hessian_exact(&k, &ds, second, self.y)?
                };
                (grad_of(&traces), h)
            }
        };
        Ok((f, g, b))
    }

    /// Exact Fisher matrix (profiled when applicable) at `x`.
    pub fn fisher_exact_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (spec, k) = self.assemble_at(x)?;
        let builder = Derivatives::new(&spec, self.points, &k)?;
        let ds: Vec<BfsaDerivative> =
            self.free.par_iter().map(|&j| builder.first(j)).collect::<Result<Vec<_>>>()?;
        let terms = ProfileTerms::new(&k, &ds, self.y)?;
        Ok(if self.profile { terms.fisher() } else { fisher_from_solved(&terms.solved) })
    }
}

impl Objective for GpObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        match self.assemble_at(x).and_then(|(_, k)| self.objective(&k)) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }

    fn model(&self, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        self.model_inner(x, iteration)
            .map_err(|e| Error::AtParameters { theta: self.theta(x), source: Box::new(e) })
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Outcome of a global fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    /// Fitted kernel, with the profiled scale and absolute nugget restored.
    pub spec: KernelSpec,
    pub free: Vec<usize>,
    pub initial_nll: f64,
    pub final_nll: f64,
    /// Objective at the start followed by every trial point. Trials where
    /// the objective could not be evaluated hold `+∞`, written as `null`.
    #[serde(with = "infinite_as_null")]
    pub nll_trace: Vec<f64>,
    pub accepted: Vec<bool>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub curvature_mode: CurvatureMode,
    /// Fisher information over the free parameters at the estimate.
    pub fisher_at_mle: Vec<Vec<f64>>,
}

impl FitReport {
    pub fn fisher(&self) -> DMatrix<f64> {
        let d = self.fisher_at_mle.len();
        DMatrix::from_fn(d, d, |i, j| self.fisher_at_mle[i][j])
    }

    /// Objective values of the accepted iterates.
    pub fn accepted_trace(&self) -> Vec<f64> {
        self.nll_trace.iter().zip(&self.accepted).filter(|(_, a)| **a).map(|(v, _)| *v).collect()
    }
}

/// Fits every parameter of `spec`, starting from its current values.
pub fn fit(
    spec: &KernelSpec,
    points: &[Point],
    y: &[f64],
    plan: &PartitionPlan,
    config: &TrustRegionConfig,
) -> Result<FitReport> {
    fit_subset(spec, points, y, plan, config, &(0..spec.n_params()).collect::<Vec<_>>())
}

/// Fits the parameters listed in `free`, holding the rest at their values
/// in `spec`.
pub fn fit_subset(
    spec: &KernelSpec,
    points: &[Point],
    y: &[f64],
    plan: &PartitionPlan,
    config: &TrustRegionConfig,
    free: &[usize],
) -> Result<FitReport> {
    let obj = GpObjective::new(spec, points, y, plan, free.to_vec(), config)?;
    let res = minimize(&obj, &obj.x0(), config)?;
    let fisher = if config.curvature_mode == CurvatureMode::HessianExact {
        obj.fisher_exact_at(&res.x)?
    } else {
        res.curvature.clone()
    };
    let (fitted, sigma2_hat) = obj.fitted_spec(&res.x)?;
    let d = fisher.nrows();
    Ok(FitReport {
        theta_hat: fitted.theta(),
        sigma2_hat,
        spec: fitted,
        free: free.to_vec(),
        initial_nll: res.trace[0],
        final_nll: res.f,
        nll_trace: res.trace,
        accepted: res.accepted,
        grad_norm: DVector::from_vec(res.grad).norm(),
        iterations: res.iterations,
        termination: res.termination,
        curvature_mode: config.curvature_mode,
        fisher_at_mle: (0..d).map(|i| (0..d).map(|j| fisher[(i, j)]).collect()).collect(),
    })
}

/// Single-center anisotropy estimate for one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    pub block: usize,
    pub center: Point,
    pub n: usize,
    pub coeffs: [f64; 3],
    pub sigma2: f64,
    /// NaN, written as `null`, when the fit fell back.
    #[serde(with = "nan_as_null")]
    pub nll: f64,
    pub iterations: usize,
    /// The fit failed and `coeffs` hold the isotropic starting value.
    pub fallback: bool,
    pub message: Option<String>,
}

fn isotropic_start(points: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if extent > 0.0 {
        0.2 * extent
    } else {
        1.0
    }
}

/// Fits a constant anisotropy with profiled scale to each block using dense
/// exact algebra. Blocks are processed in parallel.
pub fn fit_local(
    points: &[Point],
    y: &[f64],
    blocks: &[Vec<usize>],
    nu: f64,
    nugget_ratio: f64,
    config: &TrustRegionConfig,
) -> Vec<LocalFit> {
    let centers = centroids(points, blocks);
    blocks
        .par_iter()
        .enumerate()
        .map(|(l, idx)| {
            let pts: Vec<Point> = idx.iter().map(|&i| points[i]).collect();
            let vals: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let rho0 = isotropic_start(&pts);
            let iso = [rho0.ln(), 0.0, rho0.ln()];
            let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len().max(1) as f64;
            let attempt = || -> Result<FitReport> {
                let field = AnisotropyField::new(vec![centers[l]], vec![iso])?;
                let spec = KernelSpec::paciorek_schervish(1.0, nu, field, nugget_ratio);
                let plan = PartitionPlan::from_parts(pts.len(), vec![(0..pts.len()).collect()], Vec::new(), false)?;
                fit(&spec, &pts, &vals, &plan, config)
            };
            match attempt() {
                Ok(r) => LocalFit {
                    block: l,
                    center: centers[l],
                    n: idx.len(),
                    coeffs: [r.theta_hat[0], r.theta_hat[1], r.theta_hat[2]],
                    sigma2: r.sigma2_hat,
                    nll: r.final_nll,
                    iterations: r.iterations,
                    fallback: false,
                    message: None,
                },
                Err(e) => LocalFit {
                    block: l,
                    center: centers[l],
                    n: idx.len(),
                    coeffs: iso,
                    sigma2: var,
                    nll: f64::NAN,
                    iterations: 0,
                    fallback: true,
                    message: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Field with one center per local fit, seeded by the local coefficients.
pub fn initial_field(local: &[LocalFit]) -> Result<AnisotropyField> {
    AnisotropyField::new(local.iter().map(|f| f.center).collect(), local.iter().map(|f| f.coeffs).collect())
}

/// Global nonstationary fit initialized from `local`.
pub fn fit_global(
    points: &[Point],
    y: &[f64],
    plan: &PartitionPlan,
    local: &[LocalFit],
    nu: f64,
    nugget_ratio: f64,
    config: &TrustRegionConfig,
) -> Result<FitReport> {
    let spec = KernelSpec::paciorek_schervish(1.0, nu, initial_field(local)?, nugget_ratio);
    fit(&spec, points, y, plan, config)
}
