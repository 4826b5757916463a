//! Modified Bessel functions of the second kind.
//!
//! Temme's series is used below `x = 2` and Steed's continued fraction above
//! it; both give `K_mu` and `K_{mu+1}` for `|mu| <= 1/2`, and higher orders
//! follow from upward recurrence, which is stable for `K`. Orders 0 and 1
//! above `x = 2` use a Chebyshev expansion in `2/x` of the scaled functions
//! `sqrt(x) e^x K(x)`, with coefficients computed once from the continued
//! fraction.

use std::f64::consts::PI;
use std::sync::OnceLock;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const CROSSOVER: f64 = 2.0;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// Taylor coefficients of 1/Gamma(z) = sum_k C[k] z^(k+1).
const RGAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Returns `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` where
/// `gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` and
/// `gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
fn gamma_aux(mu: f64) -> (f64, f64, f64, f64) {
    let mu2 = mu * mu;
    let mut odd = 0.0;
    let mut even = 0.0;
    let mut pow = 1.0;
    for k in 0..RGAMMA.len() / 2 {
        even += RGAMMA[2 * k] * pow;
        odd += RGAMMA[2 * k + 1] * pow;
        pow *= mu2;
    }
    let gam1 = -odd;
    let gam2 = even;
    let gampl = gam2 - mu * gam1;
    let gammi = gam2 + mu * gam1;
    (gam1, gam2, gampl, gammi)
}

/// `(K_mu(x), K_{mu+1}(x))` for `|mu| <= 1/2` and `x > 0`.
pub fn bessel_k_pair(mu: f64, x: f64) -> (f64, f64) {
    debug_assert!(mu.abs() <= 0.5 + 1e-12 && x > 0.0);
    if x < CROSSOVER {
        temme_series(mu, x)
    } else {
        steed_cf2(mu, x)
    }
}

fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let x2 = 0.5 * x;
    let pimu = PI * mu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -x2.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = gamma_aux(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let ee = e.exp();
    let mut p = 0.5 * ee / gampl;
    let mut q = 0.5 / (ee * gammi);
    let mut c = 1.0;
    let dd = x2 * x2;
    let mut sum1 = p;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= dd / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum, sum1 * 2.0 / x)
}

/// `sqrt(x) e^x (K_mu(x), K_{mu+1}(x))`.
fn steed_cf2_scaled(mu: f64, x: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25 - mu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h *= a1;
    let kmu = (PI / 2.0).sqrt() / s;
    (kmu, kmu * (mu + x + 0.5 - h) / x)
}

fn steed_cf2(mu: f64, x: f64) -> (f64, f64) {
    let (a, b) = steed_cf2_scaled(mu, x);
    let f = (-x).exp() / x.sqrt();
    (a * f, b * f)
}

const CHEB_TERMS: usize = 40;

struct ChebK01 {
    k0: [f64; CHEB_TERMS],
    k1: [f64; CHEB_TERMS],
}

// Chebyshev coefficients in t = 4/x - 1 on x >= 2, from values at the
// first-kind nodes.
fn cheb_k01() -> &'static ChebK01 {
    static TABLE: OnceLock<ChebK01> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = CHEB_TERMS;
        let vals: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = (PI * (k as f64 + 0.5) / n as f64).cos();
                steed_cf2_scaled(0.0, 4.0 / (t + 1.0))
            })
            .collect();
        let mut k0 = [0.0; CHEB_TERMS];
        let mut k1 = [0.0; CHEB_TERMS];
        for j in 0..n {
            let (mut a, mut b) = (0.0, 0.0);
            for (k, v) in vals.iter().enumerate() {
                let c = (PI * j as f64 * (k as f64 + 0.5) / n as f64).cos();
                a += v.0 * c;
                b += v.1 * c;
            }
            k0[j] = 2.0 * a / n as f64;
            k1[j] = 2.0 * b / n as f64;
        }
        ChebK01 { k0, k1 }
    })
}

fn clenshaw(c: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + 0.5 * c[0]
}



/// `K_nu(x)` for real `nu` and `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut k0, mut k1) = bessel_k_pair(mu, x);
    for i in 0..nl as usize {
        let next = 2.0 * (mu + i as f64 + 1.0) / x * k1 + k0;
        k0 = k1;
        k1 = next;
    }
    k0
}

/// `(K_0(x), K_1(x))`, the dedicated path for unit smoothness.
pub fn bessel_k01(x: f64) -> (f64, f64) {
    if x < CROSSOVER {
        // mu = 0 specialization of the Temme series.
        let x2 = 0.5 * x;
        let d = -x2.ln();
        let mut ff = d - EULER_GAMMA;
        let mut sum = ff;
        let mut p = 0.5;
        let mut q = 0.5;
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi);
            c *= dd / fi;
            p /= fi;
            q /= fi;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum, sum1 * 2.0 / x)
    } else {
        let c = cheb_k01();
        let t = 4.0 / x - 1.0;
        let f = (-x).exp() / x.sqrt();
        (clenshaw(&c.k0, t) * f, clenshaw(&c.k1, t) * f)
    }
}
