//! Trust-region Fisher scoring for the covariance parameters.

mod fit;
pub mod trust_region;

pub use fit::{fit, fit_global, fit_local, fit_subset, initial_field, FitReport, GpObjective, LocalFit};
pub use trust_region::{cauchy_point, minimize, solve_subproblem, Objective, Termination, TrustRegionResult};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Curvature used in the quadratic model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureMode {
    FisherSaa,
    FisherExact,
    HessianExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionConfig {
    pub delta0: f64,
    pub delta_max: f64,
    pub eta_accept: f64,
    pub shrink: f64,
    pub grow: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub subproblem_tol: f64,
    pub saa_samples: usize,
    pub saa_seed: u64,
    /// Draw fresh probes at every model evaluation.
    pub saa_redraw: bool,
    pub curvature_mode: CurvatureMode,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        TrustRegionConfig {
            delta0: 1.0,
            delta_max: 100.0,
            eta_accept: 0.1,
            shrink: 0.25,
            grow: 2.0,
            max_iters: 50,
            grad_tol: 1e-4,
            f_tol: 1e-8,
            subproblem_tol: 1e-10,
            saa_samples: 150,
            saa_seed: 0,
            saa_redraw: false,
            curvature_mode: CurvatureMode::FisherSaa,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_accept > 0.0 && self.eta_accept < 0.25) {
            return Err(invalid("eta_accept must lie in (0, 0.25)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.grow > 1.0) {
            return Err(invalid("need 0 < shrink < 1 < grow"));
        }
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_max) {
            return Err(invalid("need 0 < delta0 <= delta_max"));
        }
        if self.curvature_mode == CurvatureMode::FisherSaa && self.saa_samples == 0 {
            return Err(invalid("saa_samples must be positive"));
        }
        Ok(())
    }
}
