//! Oracles shared by the integration tests. Nothing here calls into the library's numerics.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Tanh-sinh quadrature on `[0, 1]`; handles integrable endpoint singularities.
/// `f` receives `x` and `1 - x`.
pub fn tanh_sinh_unit(f: impl Fn(f64, f64) -> f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    let h = 1.0 / 128.0;
    let mut total = 0.0;
    let kmax = (6.0 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        let w = FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
        // x = (1 + tanh u)/2 and 1 - x, written to keep precision near the ends
        let e = (-2.0 * u.abs()).exp();
        let small = e / (1.0 + e);
        let (x, one_minus) = if u >= 0.0 {
            (1.0 - small, small)
        } else {
            (small, 1.0 - small)
        };
        if x <= 0.0 || one_minus <= 0.0 {
            continue;
        }
        total += 0.5 * w * f(x, one_minus);
    }
    total * h
}

/// Euler integral `Γ(c)/(Γ(b)Γ(c-b)) ∫ t^{b-1}(1-t)^{c-b-1}(1-xt)^{-a} dt`, valid for `c > b > 0`, `x < 1`.
pub fn hyp2f1_euler(a: f64, b: f64, c: f64, x: f64) -> f64 {
    use statrs::function::gamma::gamma;
    assert!(c > b && b > 0.0 && x < 1.0);
    let pref = gamma(c) / (gamma(b) * gamma(c - b));
    pref * tanh_sinh_unit(|t, u| t.powf(b - 1.0) * u.powf(c - b - 1.0) * (1.0 - x * t).powf(-a))
}

/// Féjer kernel from its trigonometric sum.
pub fn fejer_by_sum(x: f64, n: usize) -> f64 {
    let mut s = 1.0;
    for k in 1..n {
        s += 2.0 * (1.0 - k as f64 / n as f64) * (k as f64 * x).cos();
    }
    s
}

/// Kernel form of the Féjer reconstruction: `(1/(nT)) sum_m F_N(2 pi (t - t_{m-1}) / T) g_m`.
pub fn kernel_form(g: &[f64], n: u64, horizon: f64, modes: usize, t: f64) -> f64 {
    let omega = std::f64::consts::TAU / horizon;
    let mut s = 0.0;
    for (m, gm) in g.iter().enumerate() {
        let tm = m as f64 / n as f64;
        s += fejer_by_sum(omega * (t - tm), modes) * gm;
    }
    s / (n as f64 * horizon)
}

/// `E|Z1|^r |Z2|^s` for each `(r, s)` pair at correlation `corr`, with standard errors.
pub fn mc_bivariate_moments(
    pairs: &[(f64, f64)],
    corr: f64,
    samples: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = (1.0 - corr * corr).sqrt();
    let mut sum = vec![0.0f64; pairs.len()];
    let mut sum2 = vec![0.0f64; pairs.len()];
    for _ in 0..samples {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        let z1 = a.abs();
        let z2 = (corr * a + q * b).abs();
        for (k, &(r, s)) in pairs.iter().enumerate() {
            let v = z1.powf(r) * z2.powf(s);
            sum[k] += v;
            sum2[k] += v * v;
        }
    }
    let n = samples as f64;
    sum.iter()
        .zip(&sum2)
        .map(|(&s, &s2)| {
            let mean = s / n;
            let var = (s2 / n - mean * mean) * n / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

pub fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
