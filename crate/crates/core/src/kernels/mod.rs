//! Covariance functions: the stationary isotropic Matérn and the
//! Paciorek–Schervish nonstationary kernel driven by a radial-basis
//! anisotropy field, with analytic first and second parameter derivatives.

pub mod bessel;
mod sym2;

pub use sym2::Sym2;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::Point;

/// Weights of unnormalized radial basis functions below this are flushed.
pub const WEIGHT_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MaternParams {
    pub sigma2: f64,
    pub rho: f64,
    pub nu: f64,
}

impl MaternParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.rho > 0.0 && self.nu > 0.0) {
            return Err(invalid(format!("Matérn parameters must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// Unit-variance, unit-range Matérn as a function of the squared scaled
/// distance `q = (r/rho)^2`, together with its first two `q`-derivatives.
#[derive(Clone, Copy, Debug)]
pub(crate) struct UnitMatern {
    nu: f64,
    c: f64,
    a2: f64,
}

impl UnitMatern {
    pub(crate) fn new(nu: f64) -> Self {
        let c = if nu == 1.0 { 1.0 } else { 2f64.powf(1.0 - nu) / gamma(nu) };
        UnitMatern { nu, c, a2: 4.0 * nu }
    }

    /// Returns `(m, m', m'')`. At `q = 0` the derivative slots are zero; every
    /// caller multiplies them by quantities that vanish with `q`.
    pub(crate) fn eval(&self, q: f64, order: usize) -> (f64, f64, f64) {
        if q <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        let z = (self.a2 * q).sqrt();
        if self.nu == 1.0 {
            let (k0, k1) = bessel::bessel_k01(z);
            let m = z * k1;
            if order == 0 {
                return (m, 0.0, 0.0);
            }
            let m1 = -0.5 * self.a2 * k0;
            let m2 = 0.25 * self.a2 * self.a2 * k1 / z;
            return (m, m1, m2);
        }
        let t = |mu: f64| z.powf(mu) * bessel::bessel_k(mu, z);
        let m = self.c * t(self.nu);
        if order == 0 {
            return (m, 0.0, 0.0);
        }
        let m1 = -0.5 * self.c * self.a2 * t(self.nu - 1.0);
        let m2 = if order >= 2 {
            0.25 * self.c * self.a2 * self.a2 * t(self.nu - 2.0)
        } else {
            0.0
        };
        (m, m1, m2)
    }
}

/// Stationary isotropic Matérn covariance at distance `r`.
pub fn matern_iso(r: f64, params: &MaternParams) -> f64 {
    let q = (r / params.rho).powi(2);
    params.sigma2 * UnitMatern::new(params.nu).eval(q, 0).0
}

/// Anisotropy field `Λ(x) = Σ φ_i(x) L_i L_iᵀ` with normalized
/// squared-exponential weights and log-Cholesky coefficients per center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AnisotropyField {
    pub centers: Vec<Point>,
    pub width_c: f64,
    /// `(log l11, l21, log l22)` per center.
    pub coeffs: Vec<[f64; 3]>,
}

impl AnisotropyField {
    /// Field with the basis width fixed at half the minimum distance between
    /// centers (1 for a single center, where the width is immaterial).
    pub fn new(centers: Vec<Point>, coeffs: Vec<[f64; 3]>) -> Result<Self> {
        let width_c = default_width(&centers);
        let field = AnisotropyField { centers, width_c, coeffs };
        field.validate()?;
        Ok(field)
    }

    /// Constant isotropic field with range `rho` at every center.
    pub fn isotropic(centers: Vec<Point>, rho: f64) -> Result<Self> {
        let coeffs = vec![[rho.ln(), 0.0, rho.ln()]; centers.len()];
        Self::new(centers, coeffs)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(invalid("anisotropy field needs at least one center"));
        }
        if self.coeffs.len() != self.centers.len() {
            return Err(invalid("one coefficient triple per center is required"));
        }
        if !(self.width_c > 0.0) {
            return Err(invalid("basis width must be positive"));
        }
        if self.coeffs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("anisotropy coefficients must be finite"));
        }
        Ok(())
    }

    /// `Λ_i = L_i L_iᵀ`.
    pub fn lambda(&self, i: usize) -> Sym2 {
        let [t0, t1, t2] = self.coeffs[i];
        let (e0, e2) = (t0.exp(), t2.exp());
        Sym2::new(e0 * e0, t1 * e0, t1 * t1 + e2 * e2)
    }

    /// `∂Λ_i / ∂θ_(i,c)`.
    pub fn lambda_grad(&self, i: usize, c: usize) -> Sym2 {
        let [t0, t1, t2] = self.coeffs[i];
        let (e0, e2) = (t0.exp(), t2.exp());
        match c {
            0 => Sym2::new(2.0 * e0 * e0, t1 * e0, 0.0),
            1 => Sym2::new(0.0, e0, 2.0 * t1),
            _ => Sym2::new(0.0, 0.0, 2.0 * e2 * e2),
        }
    }

    /// `∂²Λ_i / ∂θ_(i,c) ∂θ_(i,e)`.
    pub fn lambda_hess(&self, i: usize, c: usize, e: usize) -> Sym2 {
        let [t0, t1, t2] = self.coeffs[i];
        let (e0, e2) = (t0.exp(), t2.exp());
        match (c.min(e), c.max(e)) {
            (0, 0) => Sym2::new(4.0 * e0 * e0, t1 * e0, 0.0),
            (0, 1) => Sym2::new(0.0, e0, 0.0),
            (1, 1) => Sym2::new(0.0, 0.0, 2.0),
            (2, 2) => Sym2::new(0.0, 0.0, 4.0 * e2 * e2),
            _ => Sym2::ZERO,
        }
    }

    /// Normalized basis weights at `x`, written into `out`.
    pub fn weights_into(&self, x: Point, out: &mut [f64]) {
        let mut total = 0.0;
        let mut nearest = (f64::INFINITY, 0);
        for (i, a) in self.centers.iter().enumerate() {
            let r2 = (x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2);
            if r2 < nearest.0 {
                nearest = (r2, i);
            }
            let psi = (-r2 / (self.width_c * self.width_c)).exp();
            out[i] = if psi < WEIGHT_FLOOR { 0.0 } else { psi };
            total += out[i];
        }
        if total == 0.0 {
            out[nearest.1] = 1.0;
            return;
        }
        for w in out.iter_mut() {
            *w /= total;
        }
    }

    pub fn weights(&self, x: Point) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        self.weights_into(x, &mut w);
        w
    }
}

fn default_width(centers: &[Point]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..centers.len() {
        for j in 0..i {
            let d = ((centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2)).sqrt();
            min = min.min(d);
        }
    }
    if min.is_finite() {
        0.5 * min
    } else {
        1.0
    }
}

/// `Λ(x)` for the given field.
pub fn anisotropy_at(field: &AnisotropyField, x: Point) -> Sym2 {
    let w = field.weights(x);
    let mut lam = Sym2::ZERO;
    for (i, wi) in w.iter().enumerate() {
        if *wi != 0.0 {
            lam.axpy(*wi, &field.lambda(i));
        }
    }
    lam
}

/// Covariance model. Without a field this is the stationary Matérn with
/// parameters `(sigma2, rho)`; with a field it is the Paciorek–Schervish
/// kernel with unit-range Matérn correlation, overall variance `sigma2` and
/// parameters the field's coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub matern: MaternParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<AnisotropyField>,
    #[serde(default)]
    pub nugget: f64,
}

impl KernelSpec {
    pub fn stationary(sigma2: f64, rho: f64, nu: f64, nugget: f64) -> Self {
        KernelSpec { matern: MaternParams { sigma2, rho, nu }, field: None, nugget }
    }

    pub fn paciorek_schervish(sigma2: f64, nu: f64, field: AnisotropyField, nugget: f64) -> Self {
        KernelSpec { matern: MaternParams { sigma2, rho: 1.0, nu }, field: Some(field), nugget }
    }

    pub fn is_nonstationary(&self) -> bool {
        self.field.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.matern.validate()?;
        if !(self.nugget >= 0.0) {
            return Err(invalid("nugget must be nonnegative"));
        }
        if let Some(f) = &self.field {
            f.validate()?;
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        match &self.field {
            Some(f) => 3 * f.len(),
            None => 2,
        }
    }

    /// Parameter vector: `(sigma2, rho)` or the flattened field coefficients.
    pub fn theta(&self) -> Vec<f64> {
        match &self.field {
            Some(f) => f.coeffs.iter().flatten().copied().collect(),
            None => vec![self.matern.sigma2, self.matern.rho],
        }
    }

    /// Labels matching [`KernelSpec::theta`].
    pub fn param_names(&self) -> Vec<String> {
        match &self.field {
            Some(f) => (0..f.len())
                .flat_map(|i| [format!("log_l11_{i}"), format!("l21_{i}"), format!("log_l22_{i}")])
                .collect(),
            None => vec!["sigma2".into(), "rho".into()],
        }
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<KernelSpec> {
        if theta.len() != self.n_params() {
            return Err(invalid(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        let mut out = self.clone();
        match &mut out.field {
            Some(f) => {
                for (c, t) in f.coeffs.iter_mut().zip(theta.chunks(3)) {
                    c.copy_from_slice(t);
                }
            }
            None => {
                out.matern.sigma2 = theta[0];
                out.matern.rho = theta[1];
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn with_sigma2(&self, sigma2: f64) -> KernelSpec {
        let mut out = self.clone();
        out.matern.sigma2 = sigma2;
        out
    }

    /// Precomputes per-point quantities used by every entry evaluation.
    pub fn prepare(&self, points: &[Point]) -> Prepared {
        let m = self.field.as_ref().map_or(0, |f| f.len());
        let mut weights = vec![0.0; points.len() * m];
        let mut lam = Vec::new();
        let mut lam_inv = Vec::new();
        let mut qdet = Vec::new();
        if let Some(f) = &self.field {
            let lambdas: Vec<Sym2> = (0..m).map(|i| f.lambda(i)).collect();
            lam.reserve(points.len());
            for (k, x) in points.iter().enumerate() {
                let w = &mut weights[k * m..(k + 1) * m];
                f.weights_into(*x, w);
                let mut l = Sym2::ZERO;
                for (wi, li) in w.iter().zip(&lambdas) {
                    if *wi != 0.0 {
                        l.axpy(*wi, li);
                    }
                }
                lam.push(l);
                lam_inv.push(l.inverse().unwrap_or(Sym2::ZERO));
                qdet.push(l.det().max(0.0).powf(0.25));
            }
        }
        Prepared { points: points.to_vec(), m, weights, lam, lam_inv, qdet }
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator { spec: self, unit: UnitMatern::new(self.matern.nu) }
    }
}

/// Per-point cache for a fixed kernel and point set.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub points: Vec<Point>,
    m: usize,
    weights: Vec<f64>,
    lam: Vec<Sym2>,
    lam_inv: Vec<Sym2>,
    qdet: Vec<f64>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn weight(&self, i: usize, a: usize) -> f64 {
        self.weights[i * self.m + a]
    }
}

/// Quantities shared by an entry and its derivatives.
struct PairTerms {
    p: f64,
    s_inv: Sym2,
    u: [f64; 2],
    m: f64,
    m1: f64,
    m2: f64,
}

/// Kernel bound to its unit Matérn constants.
pub struct Evaluator<'a> {
    spec: &'a KernelSpec,
    unit: UnitMatern,
}

impl Evaluator<'_> {
    pub fn spec(&self) -> &KernelSpec {
        self.spec
    }

    fn pair(&self, pa: &Prepared, i: usize, pb: &Prepared, j: usize, order: usize) -> Result<PairTerms> {
        let (xa, xb) = (pa.points[i], pb.points[j]);
        let d = [xa[0] - xb[0], xa[1] - xb[1]];
        let sigma2 = self.spec.matern.sigma2;
        if self.spec.field.is_none() {
            let rho = self.spec.matern.rho;
            let q = (d[0] * d[0] + d[1] * d[1]) / (rho * rho);
            let (m, m1, m2) = self.unit.eval(q, order);
            return Ok(PairTerms { p: sigma2, s_inv: Sym2::ZERO, u: [q, 0.0], m, m1, m2 });
        }
        let s = pa.lam[i].add(&pb.lam[j]).scale(0.5);
        let s_inv = s.inverse().ok_or(Error::SingularAnisotropy)?;
        let p = sigma2 * pa.qdet[i] * pb.qdet[j] / s.det().sqrt();
        let u = s_inv.apply(d);
        let q = d[0] * u[0] + d[1] * u[1];
        let (m, m1, m2) = self.unit.eval(q, order);
        Ok(PairTerms { p, s_inv, u, m, m1, m2 })
    }

    /// Covariance between point `i` of `pa` and point `j` of `pb`; the nugget
    /// is added when `same` marks the two as one observation.
    pub fn entry(&self, pa: &Prepared, i: usize, pb: &Prepared, j: usize, same: bool) -> Result<f64> {
        let t = self.pair(pa, i, pb, j, 0)?;
        let nug = if same { self.spec.nugget } else { 0.0 };
        Ok(t.p * t.m + nug)
    }

    /// `∂k / ∂θ_param`.
    pub fn grad(&self, pa: &Prepared, i: usize, pb: &Prepared, j: usize, param: usize) -> Result<f64> {
        match &self.spec.field {
            None => {
                let t = self.pair(pa, i, pb, j, 1)?;
                let (q, rho) = (t.u[0], self.spec.matern.rho);
                Ok(match param {
                    0 => t.m,
                    _ => t.p * t.m1 * (-2.0 * q / rho),
                })
            }
            Some(f) => {
                let (a, c) = (param / 3, param % 3);
                let (wi, wj) = (pa.weight(i, a), pb.weight(j, a));
                if wi == 0.0 && wj == 0.0 {
                    return Ok(0.0);
                }
                let t = self.pair(pa, i, pb, j, 1)?;
                let delta = f.lambda_grad(a, c);
                let (dh, dq) = first_order(&t, &pa.lam_inv[i], &pb.lam_inv[j], wi, wj, &delta);
                Ok(t.p * (t.m * dh + t.m1 * dq))
            }
        }
    }

    /// `∂²k / ∂θ_j ∂θ_k`.
    pub fn hess(&self, pa: &Prepared, i: usize, pb: &Prepared, j: usize, pj: usize, pk: usize) -> Result<f64> {
        match &self.spec.field {
            None => {
                let t = self.pair(pa, i, pb, j, 2)?;
                let (q, rho) = (t.u[0], self.spec.matern.rho);
                Ok(match (pj.min(pk), pj.max(pk)) {
                    (0, 0) => 0.0,
                    (0, _) => t.m1 * (-2.0 * q / rho),
                    _ => t.p * (t.m2 * (2.0 * q / rho).powi(2) + t.m1 * 6.0 * q / (rho * rho)),
                })
            }
            Some(f) => {
                let (a, c) = (pj / 3, pj % 3);
                let (b, e) = (pk / 3, pk % 3);
                let (wai, waj) = (pa.weight(i, a), pb.weight(j, a));
                let (wbi, wbj) = (pa.weight(i, b), pb.weight(j, b));
                if (wai == 0.0 && waj == 0.0) || (wbi == 0.0 && wbj == 0.0) {
                    return Ok(0.0);
                }
                let t = self.pair(pa, i, pb, j, 2)?;
                let (ai, bi) = (&pa.lam_inv[i], &pb.lam_inv[j]);
                let d1 = f.lambda_grad(a, c);
                let d2 = f.lambda_grad(b, e);
                let (dh1, dq1) = first_order(&t, ai, bi, wai, waj, &d1);
                let (dh2, dq2) = first_order(&t, ai, bi, wbi, wbj, &d2);
                let ai_d1 = ai.mul(&d1);
                let ai_d2 = ai.mul(&d2);
                let bi_d1 = bi.mul(&d1);
                let bi_d2 = bi.mul(&d2);
                let si_d1 = t.s_inv.mul(&d1);
                let si_d2 = t.s_inv.mul(&d2);
                let ws1 = 0.5 * (wai + waj);
                let ws2 = 0.5 * (wbi + wbj);
                let d2h = -0.25 * wai * wbi * Sym2::trace_of_products(&ai_d1, &ai_d2)
                    - 0.25 * waj * wbj * Sym2::trace_of_products(&bi_d1, &bi_d2)
                    + 0.5 * ws1 * ws2 * Sym2::trace_of_products(&si_d1, &si_d2);
                let d2q = 2.0 * ws1 * ws2 * Sym2::bilinear3(t.u, &d1, &t.s_inv, &d2);
                let mut h = (dh1 * dh2 + d2h) * t.m + t.m1 * (dh1 * dq2 + dh2 * dq1) + t.m2 * dq1 * dq2 + t.m1 * d2q;
                if a == b {
                    let d12 = f.lambda_hess(a, c, e);
                    let (dh12, dq12) = first_order(&t, ai, bi, wai, waj, &d12);
                    h += t.m * dh12 + t.m1 * dq12;
                }
                Ok(t.p * h)
            }
        }
    }
}

/// First-order log-prefactor change `dh` and quadratic-form change `dq` for
/// the perturbation `Λ(x_i) += wi Δ`, `Λ(x_j) += wj Δ`.
fn first_order(t: &PairTerms, a_inv: &Sym2, b_inv: &Sym2, wi: f64, wj: f64, delta: &Sym2) -> (f64, f64) {
    let ws = 0.5 * (wi + wj);
    let dh = 0.25 * wi * a_inv.dot(delta) + 0.25 * wj * b_inv.dot(delta) - 0.5 * ws * t.s_inv.dot(delta);
    let dq = -ws * delta.quad(t.u);
    (dh, dq)
}

/// Single-entry covariance between two locations.
pub fn kernel_eval(spec: &KernelSpec, xi: Point, xj: Point, same_index: bool) -> Result<f64> {
    let p = spec.prepare(&[xi, xj]);
    let (i, j) = if same_index { (0, 0) } else { (0, 1) };
    spec.evaluator().entry(&p, i, &p, j, same_index)
}

/// `∂k(x_i, x_j) / ∂θ_j` by the analytic chain rule.
pub fn kernel_grad_entry(spec: &KernelSpec, xi: Point, xj: Point, param: usize) -> Result<f64> {
    let p = spec.prepare(&[xi, xj]);
    spec.evaluator().grad(&p, 0, &p, 1, param)
}

/// `∂²k(x_i, x_j) / ∂θ_j ∂θ_k`.
pub fn kernel_hess_entry(spec: &KernelSpec, xi: Point, xj: Point, pj: usize, pk: usize) -> Result<f64> {
    let p = spec.prepare(&[xi, xj]);
    spec.evaluator().hess(&p, 0, &p, 1, pj, pk)
}
