use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{CurvatureMode, TrustRegionConfig};

/// Objective with a local quadratic model.
pub trait Objective {
    /// Exact objective, `+∞` where it cannot be evaluated.
    fn value(&self, x: &[f64]) -> f64;

    /// `(f, ∇f, B)` at `x`; `iteration` lets stochastic models reseed.
    fn model(&self, x: &[f64], iteration: usize) -> Result<(f64, Vec<f64>, DMatrix<f64>)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    ObjectiveStagnation,
    MaxIterations,
    RadiusCollapse,
    CurvatureIndefinite,
}

#[derive(Clone, Debug)]
pub struct TrustRegionResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub curvature: DMatrix<f64>,
    /// Objective at the start followed by every trial point.
    pub trace: Vec<f64>,
    pub accepted: Vec<bool>,
    pub iterations: usize,
    pub termination: Termination,
}

fn model_value(g: &DVector<f64>, b: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    g.dot(p) + 0.5 * p.dot(&(b * p))
}

/// Cauchy point: the model minimizer along `−g` inside the ball.
pub fn cauchy_point(g: &DVector<f64>, b: &DMatrix<f64>, delta: f64) -> DVector<f64> {
    let gn = g.norm();
    if gn == 0.0 {
        return DVector::zeros(g.len());
    }
    let gbg = g.dot(&(b * g));
    let tau = if gbg <= 0.0 { 1.0 } else { (gn.powi(3) / (delta * gbg)).min(1.0) };
    g * (-tau * delta / gn)
}

/// Approximate minimizer of `gᵀp + ½ pᵀBp` over `‖p‖ ≤ delta`. Works in the
/// eigenbasis of `B`, finds the multiplier by Newton iteration on
/// `1/‖p(λ)‖ − 1/Δ`, handles the hard case, and never returns less than
/// the Cauchy decrease.
pub fn solve_subproblem(g: &DVector<f64>, b: &DMatrix<f64>, delta: f64) -> DVector<f64> {
    let n = g.len();
    let cauchy = cauchy_point(g, b, delta);
    if n == 0 || g.norm() == 0.0 {
        return cauchy;
    }
    let eig = SymmetricEigen::new(0.5 * (b + b.transpose()));
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let gh = q.tr_mul(g);
    let lmin = lam.min();
    let scale = lam.amax().max(1e-300);
    let step = |shift: f64| -> DVector<f64> {
        let coeffs = DVector::from_fn(n, |i, _| {
            let d = lam[i] + shift;
            if d.abs() <= 1e-14 * scale {
                0.0
            } else {
                -gh[i] / d
            }
        });
        q * coeffs
    };
    let candidate = 'found: {
        if lmin > 1e-14 * scale {
            let p = step(0.0);
            if p.norm() <= delta {
                break 'found p;
            }
        }
        let lo = (-lmin).max(0.0);
        let norm_at = |shift: f64| -> (f64, f64) {
            let mut s2 = 0.0;
            let mut s3 = 0.0;
            for i in 0..n {
                let d = lam[i] + shift;
                s2 += gh[i] * gh[i] / (d * d);
                s3 += gh[i] * gh[i] / (d * d * d);
            }
            (s2, s3)
        };
        // Hard case: g has no component along the lowest eigenvector and the
        // shifted step is still inside the ball.
        let low: Vec<usize> = (0..n).filter(|&i| lam[i] - lmin <= 1e-12 * scale).collect();
        let g_low: f64 = low.iter().map(|&i| gh[i] * gh[i]).sum::<f64>().sqrt();
        if lmin <= 0.0 && g_low <= 1e-12 * g.norm().max(1e-300) {
            let p = step(lo);
            let pn = p.norm();
            if pn <= delta {
                let qmin = q.column(low[0]).into_owned();
                let tau = (delta * delta - pn * pn).max(0.0).sqrt();
                let a = &p + &qmin * tau;
                let c = &p - &qmin * tau;
                break 'found if model_value(g, b, &a) <= model_value(g, b, &c) { a } else { c };
            }
        }
        let mut hi = g.norm() / delta + lam.amax() + lo + 1.0;
        let mut shift = lo + 1e-12 * (1.0 + lo.abs());
        if norm_at(shift).0.sqrt() < delta {
            shift = lo;
        }
        let mut lo_b = lo;
        let mut ok = false;
        for _ in 0..200 {
            let (s2, s3) = norm_at(shift);
            let pn = s2.sqrt();
            if !pn.is_finite() {
                shift = 0.5 * (shift + hi);
                continue;
            }
            if (pn - delta).abs() <= 1e-10 * delta {
                ok = true;
                break;
            }
            if pn > delta {
                lo_b = lo_b.max(shift);
            } else {
                hi = hi.min(shift);
            }
            let phi = 1.0 / pn - 1.0 / delta;
            let dphi = s3 / (s2 * pn);
            let mut next = shift - phi / dphi;
            if !(next > lo_b && next < hi) || !next.is_finite() {
                next = 0.5 * (lo_b + hi);
            }
            if (next - shift).abs() <= 1e-15 * (1.0 + shift.abs()) {
                ok = true;
                shift = next;
                break;
            }
            shift = next;
        }
        if !ok {
            break 'found cauchy.clone();
        }
        let p = step(shift);
        if p.norm() > delta * (1.0 + 1e-8) {
            break 'found &p * (delta / p.norm());
        }
        p
    };
    if model_value(g, b, &candidate) <= model_value(g, b, &cauchy) {
        candidate
    } else {
        cauchy
    }
}

/// Trust-region minimization of `obj` from `x0`.
pub fn minimize(obj: &dyn Objective, x0: &[f64], config: &TrustRegionConfig) -> Result<TrustRegionResult> {
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g0, mut b) = obj.model(x.as_slice(), 0)?;
    let mut g = DVector::from_vec(g0);
    let mut delta = config.delta0;
    let mut trace = vec![f];
    let mut accepted = vec![true];
    let mut stagnant = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    while iterations < config.max_iters {
        if g.norm() < config.grad_tol * (1.0 + f.abs()) {
            termination = Termination::GradientTolerance;
            break;
        }
        let p = solve_subproblem(&g, &b, delta);
        let pred = -model_value(&g, &b, &p);
        if !(pred > 0.0) {
            termination = if config.curvature_mode == CurvatureMode::HessianExact {
                Termination::CurvatureIndefinite
            } else {
                Termination::RadiusCollapse
            };
            break;
        }
        iterations += 1;
        let trial = &x + &p;
        let f_new = obj.value(trial.as_slice());
        let rho = if f_new.is_finite() { (f - f_new) / pred } else { f64::NEG_INFINITY };
        if rho < 0.25 {
            delta *= config.shrink;
        } else if rho > 0.75 && p.norm() >= 0.99 * delta {
            delta = (config.grow * delta).min(config.delta_max);
        }
        trace.push(f_new);
        if rho >= config.eta_accept {
            accepted.push(true);
            let rel = (f - f_new) / f.abs().max(1.0);
            stagnant = if rel < config.f_tol { stagnant + 1 } else { 0 };
            x = trial;
            let (fm, gm, bm) = obj.model(x.as_slice(), iterations)?;
            f = fm;
            g = DVector::from_vec(gm);
            b = bm;
            if stagnant >= 3 {
                termination = Termination::ObjectiveStagnation;
                break;
            }
        } else {
            accepted.push(false);
        }
        if delta < 1e-10 {
            termination = Termination::RadiusCollapse;
            break;
        }
    }
    Ok(TrustRegionResult {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        curvature: b,
        trace,
        accepted,
        iterations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mv(g: &DVector<f64>, b: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
        model_value(g, b, p)
    }

    #[test]
    fn identity_curvature() {
        let g = DVector::from_vec(vec![0.3, -0.4]);
        let b = DMatrix::identity(2, 2);
        let p = solve_subproblem(&g, &b, 10.0);
        assert!((&p + &g).norm() < 1e-12);
        let p = solve_subproblem(&g, &b, 0.1);
        assert!((&p + &g * (0.1 / g.norm())).norm() < 1e-9);
    }

    #[test]
    fn matches_multiplier_grid() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        for _ in 0..20 {
            let a = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>() - 0.5);
            let b = &a * a.transpose() + DMatrix::identity(8, 8) * 0.05;
            let g = DVector::from_fn(8, |_, _| rng.random::<f64>() - 0.5);
            let delta = 0.05 + 0.3 * rng.random::<f64>();
            let p = solve_subproblem(&g, &b, delta);
            assert!(p.norm() <= delta * (1.0 + 1e-8));
            let mut best = f64::INFINITY;
            for k in 0..20000 {
                let lam = 1e-4 * 1.001f64.powi(k);
                let mut m = b.clone();
                for i in 0..8 {
                    m[(i, i)] += lam;
                }
                let q = -m.lu().solve(&g).unwrap();
                if q.norm() <= delta {
                    best = best.min(mv(&g, &b, &q));
                }
            }
            assert!(mv(&g, &b, &p) <= best + 1e-6, "{} vs {best}", mv(&g, &b, &p));
        }
    }

    #[test]
    fn indefinite_and_hard_case() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 2.0]));
        let g = DVector::from_vec(vec![0.0, 1.0]);
        let p = solve_subproblem(&g, &b, 1.0);
        assert!((p.norm() - 1.0).abs() < 1e-8);
        let c = cauchy_point(&g, &b, 1.0);
        assert!(mv(&g, &b, &p) <= mv(&g, &b, &c));
        assert!(p[0].abs() > 0.5);
    }
}
