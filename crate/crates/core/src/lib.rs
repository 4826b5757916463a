//! Gaussian-process maximum likelihood under the block full-scale
//! approximation: a Nyström low-rank term plus a block-diagonal correction
//! that is exact within spatial blocks.
//!
//! The crate covers kernel evaluation ([`kernels`]), spatial partitioning
//! ([`geometry`]), the structured covariance and its factorizations
//! ([`bfsa`]), derivative matrices ([`derivatives`]), exact and stochastic
//! likelihood quantities ([`likelihood`], [`saa`]), trust-region fitting
//! ([`optimizer`]), kriging ([`predict`]) and fit diagnostics
//! ([`diagnostics`]).

pub mod bfsa;
pub mod derivatives;
pub mod diagnostics;
pub mod error;
mod factor;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod likelihood;
pub mod linalg;
pub mod optimizer;
pub mod predict;
pub mod saa;
pub mod scaling;
pub mod structure;
pub mod synthetic;

pub use bfsa::{assemble, BfsaMatrix, SymmetricFactor};
pub use derivatives::{d2_assemble, d_assemble, BfsaDerivative};
pub use error::{Error, Result};
pub use geometry::{build_plan, PartitionPlan};
pub use kernels::{AnisotropyField, KernelSpec, MaternParams};
pub use optimizer::{FitReport, TrustRegionConfig};
pub use predict::PredictionPlan;
pub use structure::{BlockLowRank, Structured};

/// A location in the plane.
pub type Point = [f64; 2];
