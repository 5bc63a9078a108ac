//! Acceptance suite. Every test prints one `PASS`/`FAIL` line and asserts the same condition.
//!
//! Targets are recomputed here from closed forms rather than read back from the
//! reports, so a wrong constant inside the library cannot pass silently.

mod common;

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use common::verdict;
use covfourier::fourier::{
    fejer_eval_times, fejer_identities, fejer_reconstruct, fourier_coefficients, GFunctionSpec,
};
use covfourier::linalg::{SampledPath, SymMatrix, SymMatrixPath, TimeGrid};
use covfourier::mc::{
    clt_fourier_experiment, clt_spot_experiment, consistency_sweep, jump_robustness_experiment,
    martingale_check, parameter_recovery_experiment, ConstantDesign,
};
use covfourier::second_pass::{
    alpha_diag_from_variation, alpha_offdiag_from_variation, coarse_times, estimate_rho, pc_model,
    pv12_model, Pv12Form, SecondPassConfig,
};
use covfourier::simulator::BatesParams;
use covfourier::special::{abs_moment, bivariate_abs_moment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const X: f64 = 0.09;
const N_CLT: u64 = 1 << 14;
const BATES_N: u64 = 127_750;
const BATES_MODES: usize = 210;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("{} criterion {id} ({name}): {detail}", verdict(ok));
}

#[test]
fn c01_kernel_identities() {
    let start = Instant::now();
    let mut ok = true;
    let mut worst = 0.0f64;
    for n in [5usize, 10, 50, 210] {
        let id = fejer_identities(n).unwrap();
        let nf = n as f64;
        let exact_square = TAU * (2.0 * nf * nf + 1.0) / (3.0 * nf * nf);
        let errs = [
            (id.integral - TAU).abs(),
            (id.normalized_square - exact_square).abs(),
            (1..n)
                .map(|j| common::fejer_by_sum(TAU * j as f64 / nf, n).abs())
                .fold(0.0, f64::max),
            id.max_at_zeros,
        ];
        for e in errs {
            worst = worst.max(e);
            ok &= e <= 1e-10;
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed.as_secs_f64() < 1.0;
    report(
        1,
        "kernel identities",
        ok,
        format!("max abs error {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(ok);
}

#[test]
fn c02_dual_form_equivalence() {
    let start = Instant::now();
    let (n, modes) = (1000u64, 30usize);
    let grid = TimeGrid::new(n, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for path in 0..100 {
        let sd = (0.05 + 0.3 * (path as f64 / 100.0)) / (n as f64).sqrt();
        let mut values = vec![0.0];
        for m in 0..n as usize {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(values[m] + sd * z);
        }
        let y = SampledPath::new(grid.clone(), 1, values.clone()).unwrap();
        let root_n = (n as f64).sqrt();
        let specs: [(GFunctionSpec<f64>, fn(f64) -> f64); 2] = [
            (GFunctionSpec::cosine(1), f64::cos),
            (GFunctionSpec::squares(), |v| v * v),
        ];
        for (spec, g) in specs {
            let gm: Vec<f64> = values
                .windows(2)
                .map(|w| g(root_n * (w[1] - w[0])))
                .collect();
            let coeffs = fourier_coefficients(&y, &spec, modes).unwrap();
            let times = fejer_eval_times(modes, 1.0);
            assert_eq!(times.len(), 2 * modes + 1);
            let spectral = fejer_reconstruct(&coeffs, &times).unwrap();
            for (t, v) in times.iter().zip(spectral.values()) {
                let kernel = common::kernel_form(&gm, n, 1.0, modes, *t);
                worst = worst.max((v.get(0, 0) - kernel).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && elapsed.as_secs_f64() < 10.0;
    report(
        2,
        "dual-form equivalence",
        ok,
        format!("max abs difference {worst:.2e} over 100 paths, {elapsed:.2?}"),
    );
    assert!(ok);
}

#[test]
fn c03_spot_clt_constant() {
    let rep = clt_spot_experiment(
        ConstantDesign::new(X),
        &GFunctionSpec::squares(),
        N_CLT,
        2.0,
        3.0,
        512,
        12,
    )
    .unwrap();
    let fourier = rep.metric("fourier_rho_variance").unwrap().summary;
    let local = rep.metric("local_variance").unwrap().summary;
    let ratio = rep.metric("variance_ratio").unwrap().summary;
    let targets = [4.0 / 3.0 * X * X, 2.0 * X * X, 2.0 / 3.0];
    let rel: Vec<f64> = [fourier.estimate, local.estimate, ratio.estimate]
        .iter()
        .zip(targets)
        .map(|(e, t)| (e / t - 1.0).abs())
        .collect();
    let ok = rel.iter().all(|&r| r <= 0.10);
    report(
        3,
        "spot CLT constant",
        ok,
        format!(
            "fourier {:.5} vs {:.5}, local {:.5} vs {:.5}, ratio {:.4} vs {:.4}, {:.1?}",
            fourier.estimate,
            targets[0],
            local.estimate,
            targets[1],
            ratio.estimate,
            targets[2],
            rep.wall_clock
        ),
    );
    assert!(ok, "relative errors {rel:?}");
}

#[test]
fn c04_fourier_coefficient_clt() {
    let modes = 74;
    let rep = clt_fourier_experiment(
        ConstantDesign::new(X),
        &GFunctionSpec::cosine(1),
        N_CLT,
        modes,
        512,
        11,
    )
    .unwrap();
    let rho_g = (-X / 2.0).exp();
    let rho_gg = 0.5 * (1.0 + (-2.0 * X).exp());
    let target = 1.0 * (rho_gg - rho_g * rho_g);
    let diag = rep.metric("diag_pooled").unwrap().summary;
    let cross_re = rep.metric("cross_re").unwrap().summary;
    let cross_im = rep.metric("cross_im").unwrap().summary;
    let z_re = cross_re.estimate / cross_re.std_error;
    let z_im = cross_im.estimate / cross_im.std_error;
    let ok = (diag.estimate / target - 1.0).abs() <= 0.10 && z_re.abs() <= 3.0 && z_im.abs() <= 3.0;
    report(
        4,
        "Fourier-coefficient CLT",
        ok,
        format!(
            "diagonal {:.6} vs {target:.6}, off-diagonal z = ({z_re:.2}, {z_im:.2}), {:.1?}",
            diag.estimate, rep.wall_clock
        ),
    );
    assert!(ok);
}

#[test]
fn c05_consistency_rate() {
    let sweep = consistency_sweep(
        ConstantDesign::new(X),
        &GFunctionSpec::squares(),
        &[1 << 12, 1 << 13, 1 << 14, 1 << 15],
        2.0,
        3.0,
        128,
        13,
    )
    .unwrap();
    let ok = (sweep.slope + 0.25).abs() <= 0.08;
    report(
        5,
        "consistency rate",
        ok,
        format!(
            "slope {:.3} (modes {:?}), {:.1?}",
            sweep.slope, sweep.modes, sweep.wall_clock
        ),
    );
    assert!(ok);
}

#[test]
fn c06_jump_robustness() {
    let params = BatesParams::<f64>::reference();
    assert_eq!(params.lambda_y, vec![100.0, 100.0]);
    let rep = jump_robustness_experiment(&params, BATES_N, BATES_MODES, 64, 5).unwrap();
    let ok = rep.win_fraction >= 0.9;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    report(
        6,
        "jump robustness",
        ok,
        format!(
            "cosine wins {:.3} of 64 pairs, mean errors {:.4} vs {:.4}, {:.1?}",
            rep.win_fraction,
            mean(&rep.cosine_error),
            mean(&rep.squares_error),
            rep.wall_clock
        ),
    );
    assert!(ok);
}

#[test]
fn c07_parameter_recovery() {
    let params = BatesParams::<f64>::reference();
    let m_list = [10usize, 15, 21, 30, 42, 60, 84, 105];
    let judged = m_list.iter().position(|&m| m == BATES_MODES / 2).unwrap();
    let rep = parameter_recovery_experiment(
        &params,
        BATES_N,
        BATES_MODES,
        &m_list,
        &SecondPassConfig::new(10),
        32,
        21,
    )
    .unwrap();
    let within = |k: usize| {
        rep.replications
            .iter()
            .filter(|r| {
                let e = &r.estimates[k];
                let a = [
                    e.alpha_hat.get(0, 0),
                    e.alpha_hat.get(0, 1),
                    e.alpha_hat.get(1, 1),
                ];
                let ok_alpha = a
                    .iter()
                    .zip([0.0725, 0.06, 0.1325])
                    .all(|(v, t)| (v / t - 1.0).abs() <= 0.4);
                let ok_rho = e
                    .rho_hat
                    .iter()
                    .zip([-0.3, -0.5])
                    .all(|(v, t)| (v - t).abs() <= 0.2);
                ok_alpha && ok_rho
            })
            .count()
    };
    let counts: Vec<usize> = (0..m_list.len()).map(within).collect();
    let residuals = rep.median_residuals();
    let monotone = residuals.windows(2).all(|w| w[1] <= w[0]);
    let fraction = counts[judged] as f64 / 32.0;
    let ok = fraction >= 0.75 && monotone;
    report(
        7,
        "parameter recovery",
        ok,
        format!(
            "{}/32 within band at m = {} (per m: {counts:?}); median residuals non-increasing: {monotone} [{}], {:.1?}",
            counts[judged],
            m_list[judged],
            residuals.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", "),
            rep.wall_clock
        ),
    );
    assert!(ok);
}

fn smooth_path(m: usize) -> SymMatrixPath<f64> {
    let times = coarse_times::<f64>(m, 1.0);
    let values = times
        .iter()
        .map(|&t| {
            let a = 0.09 + 0.03 * (TAU * t).sin() + 0.01 * (3.0 * PI * t).cos();
            let b = 0.07 + 0.02 * (2.0 * TAU * t).cos();
            let c = -0.3 * (a * b).sqrt() * (1.0 + 0.2 * (5.0 * t).sin());
            SymMatrix::from_packed(2, vec![a, c, b]).unwrap()
        })
        .collect();
    SymMatrixPath::new(times, values).unwrap()
}

#[test]
fn c08_inverse_crime() {
    let start = Instant::now();
    let x = smooth_path(200);
    let cfg = SecondPassConfig::<f64>::new(200);
    let alpha = SymMatrix::<f64>::from_packed(2, vec![0.0725, 0.06, 0.1325]).unwrap();
    let rho = [-0.3, -0.5];
    let mut worst = 0.0f64;
    let mut diag = [0.0; 2];
    for i in 0..2 {
        let r = cfg.r_for_diag(i);
        // model value of the power variation, with the integral as a right-point sum over p = 1..=m
        let h = 1.0 / 200.0;
        let integral: f64 = x.values()[1..]
            .iter()
            .map(|v| v.get(i, i).powf(0.5 * r) * h)
            .sum();
        let target = abs_moment(r) * (4.0 * alpha.get(i, i)).powf(0.5 * r) * integral;
        diag[i] = alpha_diag_from_variation(&x, i, target, r).unwrap();
        worst = worst.max((diag[i] - alpha.get(i, i)).abs());
    }
    let (target12, _) = pv12_model(
        &x,
        (0, 1),
        (0.0725, 0.06, 0.1325),
        cfg.r_offdiag,
        Pv12Form::Model,
    )
    .unwrap();
    let (a12, _) = alpha_offdiag_from_variation(
        &x,
        (0, 1),
        (diag[0], diag[1]),
        target12,
        cfg.r_offdiag,
        Pv12Form::Model,
    )
    .unwrap();
    worst = worst.max((a12 - 0.06).abs());
    let targets: Vec<f64> = (0..2)
        .map(|i| pc_model(&x, &alpha, &rho, i, cfg.r_cross, cfg.s_cross).unwrap())
        .collect();
    let (rho_hat, _, _) = estimate_rho(&x, &targets, &alpha, &cfg).unwrap();
    for (a, b) in rho_hat.iter().zip(rho) {
        worst = worst.max((a - b).abs());
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-6 && elapsed.as_secs_f64() < 1.0;
    report(
        8,
        "inverse-crime exactness",
        ok,
        format!("max parameter error {worst:.2e}, {elapsed:.2?}"),
    );
    assert!(ok);
}

#[test]
fn c09_martingale_compensation() {
    let params = BatesParams::<f64>::reference();
    let rep = martingale_check(&params, BATES_N / 10, 512, 9).unwrap();
    let z: Vec<f64> = rep
        .metrics
        .iter()
        .map(|m| (m.summary.estimate - 1.0) / m.summary.std_error)
        .collect();
    let ok = z.iter().all(|v| v.abs() <= 3.0);
    let means: Vec<f64> = rep.metrics.iter().map(|m| m.summary.estimate).collect();
    report(
        9,
        "martingale compensation",
        ok,
        format!(
            "E exp(Y_T) = {means:.4?}, z = {z:.2?}, {:.1?}",
            rep.wall_clock
        ),
    );
    assert!(ok);
}

#[test]
fn c10_bivariate_absolute_moments() {
    let start = Instant::now();
    let powers = [0.5, 1.0, 2.0];
    let pairs: Vec<(f64, f64)> = powers
        .iter()
        .flat_map(|&r| powers.iter().map(move |&s| (r, s)))
        .collect();
    let mut worst_z = 0.0f64;
    let mut exact_err = 0.0f64;
    for (idx, corr) in [0.0, 0.3, 0.9].into_iter().enumerate() {
        let mc = common::mc_bivariate_moments(&pairs, corr, 10_000_000, 100 + idx as u64);
        for (&(r, s), (mean, se)) in pairs.iter().zip(mc) {
            worst_z = worst_z.max((bivariate_abs_moment(r, s, corr) - mean).abs() / se);
        }
        exact_err =
            exact_err.max((bivariate_abs_moment(2.0, 2.0, corr) - (1.0 + 2.0 * corr * corr)).abs());
    }
    let ok = worst_z <= 3.0 && exact_err <= 1e-12;
    report(
        10,
        "bivariate absolute moments",
        ok,
        format!(
            "max |z| {worst_z:.2} over 27 cases, r = s = 2 error {exact_err:.1e}, {:.1?}",
            start.elapsed()
        ),
    );
    assert!(ok);
}
