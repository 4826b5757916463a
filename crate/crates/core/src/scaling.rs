//! Wall-clock scaling of the main operations over a doubling ladder of
//! problem sizes, summarized by least-squares slopes in log–log space.

use std::time::Instant;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::bfsa::assemble;
use crate::derivatives::Derivatives;
use crate::error::Result;
use crate::geometry::{blocks_for_size, build_plan};
use crate::kernels::KernelSpec;
use crate::likelihood::nll;
use crate::predict::{cond_cov, cond_mean, PredictionPlan};
use crate::synthetic::uniform_points;

pub const OPERATIONS: [&str; 6] = ["assemble", "nll", "sym_factorize", "grad_component", "fisher_entry", "predict"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    pub block_size: usize,
    pub num_landmarks: usize,
    pub num_targets: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            sizes: (9..=15).map(|e| 1usize << e).collect(),
            block_size: 128,
            num_landmarks: 32,
            num_targets: 512,
            repetitions: 3,
            seed: 0,
            kernel: KernelSpec::stationary(1.0, 0.1, 1.0, 1e-3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub n: usize,
    pub operation: String,
    /// Median over the repetitions.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub timings: Vec<Timing>,
    /// `(operation, slope)` of log seconds against log n.
    pub slopes: Vec<(String, f64)>,
}

impl ScalingReport {
    pub fn slope(&self, op: &str) -> Option<f64> {
        self.slopes.iter().find(|(o, _)| o == op).map(|s| s.1)
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let t = Instant::now();
    let out = f()?;
    Ok((t.elapsed().as_secs_f64(), out))
}

/// Times every operation at one size. Each operation runs once untimed
/// first so that one-off setup costs stay out of the measurement.
pub fn time_size(cfg: &ScalingConfig, n: usize) -> Result<Vec<Timing>> {
    let spec = &cfg.kernel;
    let seed = cfg.seed.wrapping_add(n as u64);
    let points = uniform_points(n, seed);
    let targets = uniform_points(cfg.num_targets, seed.wrapping_add(1));
    let y: Vec<f64> = points.iter().map(|p| (7.0 * p[0]).sin() + (5.0 * p[1]).cos()).collect();
    let plan = build_plan(&points, blocks_for_size(n, cfg.block_size), cfg.num_landmarks.min(n))?;
    let reps = cfg.repetitions.max(1);
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); OPERATIONS.len()];
    let k = assemble(spec, &points, &plan)?;
    for rep in 0..=reps {
        let mut record = |op: usize, secs: f64| {
            if rep > 0 {
                samples[op].push(secs);
            }
        };
        let (t, _) = time(|| assemble(spec, &points, &plan))?;
        record(0, t);
        let (t, _) = time(|| nll(&k, &y))?;
        record(1, t);
        let (t, _) = time(|| k.sym_factorize())?;
        record(2, t);
        let derivs = Derivatives::new(spec, &points, &k)?;
        let (t, _) = time(|| {
            let d = derivs.first(1)?;
            let alpha = k.solve_vec(&y);
            let az = nalgebra::DVector::from_vec(plan.permute(&alpha));
            let s = k.solve_structured(&d);
            Ok(0.5 * s.trace() - 0.5 * az.dot(&d.mul_vec(&az)))
        })?;
        record(3, t);
        let (t, _) = time(|| {
            let s0 = k.solve_structured(&derivs.first(0)?);
            let s1 = k.solve_structured(&derivs.first(1)?);
            Ok(0.5 * s0.trace_product(&s1))
        })?;
        record(4, t);
        let (t, _) = time(|| {
            let pp = PredictionPlan::new(spec, &points, &k, &targets)?;
            let m = cond_mean(&k, &y, &pp)?;
            let v = cond_cov(&k, &pp).variances();
            Ok((m, v))
        })?;
        record(5, t);
    }
    Ok(OPERATIONS
        .iter()
        .zip(samples)
        .map(|(op, s)| Timing { n, operation: op.to_string(), seconds: median(s) })
        .collect())
}

pub fn run_scaling(cfg: &ScalingConfig) -> Result<ScalingReport> {
    let mut timings = Vec::new();
    for &n in &cfg.sizes {
        timings.extend(time_size(cfg, n)?);
    }
    let slopes = OPERATIONS
        .iter()
        .map(|op| {
            let (x, y): (Vec<f64>, Vec<f64>) =
                timings.iter().filter(|t| t.operation == *op).map(|t| (t.n as f64, t.seconds.max(1e-9))).unzip();
            (op.to_string(), if x.len() >= 2 { loglog_slope(&x, &y) } else { f64::NAN })
        })
        .collect();
    Ok(ScalingReport { timings, slopes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y) - 1.5).abs() < 1e-12);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn small_ladder_runs() {
        let cfg = ScalingConfig { sizes: vec![256, 512], num_targets: 16, repetitions: 1, ..Default::default() };
        let r = run_scaling(&cfg).unwrap();
        assert_eq!(r.timings.len(), 12);
        assert!(r.slope("predict").unwrap().is_finite());
    }
}
