//! Monte Carlo experiments for the asymptotic constants of the estimators.
//!
//! Replication `r` of an experiment seeded with `seed` draws from
//! `derive_seed(seed, r)`; replications run on the rayon pool and are collected
//! in index order, so every report is reproducible bit for bit.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::baseline::local_spot_estimator;
use crate::error::{Error, Result};
use crate::fourier::{
    estimate_spot_covariance, fourier_coefficients, select_mode_count, ClampPolicy, GFunctionSpec,
};
use crate::linalg::{SampledPath, SymMatrix, TimeGrid};
use crate::second_pass::{coarse_reconstruction, estimate_params, ParamEstimate, SecondPassConfig};
use crate::simulator::{derive_seed, simulate_bates, BatesParams};

/// Fewest replications an experiment accepts.
pub const MIN_REPLICATIONS: usize = 64;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Point estimate with jackknife standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    fn new(estimate: f64, std_error: f64) -> Self {
        Self {
            estimate,
            std_error,
            ci_low: estimate - Z95 * std_error,
            ci_high: estimate + Z95 * std_error,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// How an estimate is compared with its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `|estimate / target - 1| <= tol`.
    Relative(f64),
    /// `|estimate - target| <= k * std_error`.
    StdErrors(f64),
    /// `|estimate - target| <= tol`.
    Absolute(f64),
    /// `estimate >= target`.
    AtLeast,
}

impl Tolerance {
    pub fn check(&self, summary: &Summary, target: f64) -> bool {
        let e = summary.estimate;
        match *self {
            Tolerance::Relative(tol) => (e / target - 1.0).abs() <= tol,
            Tolerance::StdErrors(k) => (e - target).abs() <= k * summary.std_error,
            Tolerance::Absolute(tol) => (e - target).abs() <= tol,
            Tolerance::AtLeast => e >= target,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Tolerance::Relative(tol) => format!("relative {tol}"),
            Tolerance::StdErrors(k) => format!("{k} std errors"),
            Tolerance::Absolute(tol) => format!("absolute {tol}"),
            Tolerance::AtLeast => "at least target".into(),
        }
    }
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub summary: Summary,
    pub target: f64,
    pub tolerance: Tolerance,
    pub passed: bool,
}

impl Metric {
    pub fn new(
        name: impl Into<String>,
        summary: Summary,
        target: f64,
        tolerance: Tolerance,
    ) -> Self {
        let passed = tolerance.check(&summary, target);
        Self {
            name: name.into(),
            summary,
            target,
            tolerance,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub replications: usize,
    /// Per-replication statistics, one row per replication.
    pub per_replication: Vec<Vec<f64>>,
    pub columns: Vec<String>,
    pub metrics: Vec<Metric>,
    pub wall_clock: Duration,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.passed)
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Mean and variance (unbiased) of a sample.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Delete-one jackknife of a smooth function of feature means.
///
/// `rows[r]` holds the features of replication `r`; `stat` maps the vector of
/// feature means to the statistic.
pub fn jackknife(rows: &[Vec<f64>], stat: impl Fn(&[f64]) -> f64) -> Summary {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    let mut totals = vec![0.0; k];
    for row in rows {
        for (t, v) in totals.iter_mut().zip(row) {
            *t += v;
        }
    }
    let full: Vec<f64> = totals.iter().map(|t| t / n as f64).collect();
    let estimate = stat(&full);
    if n < 2 {
        return Summary::new(estimate, f64::INFINITY);
    }
    let loo: Vec<f64> = rows
        .iter()
        .map(|row| {
            let means: Vec<f64> = totals
                .iter()
                .zip(row)
                .map(|(t, v)| (t - v) / (n - 1) as f64)
                .collect();
            stat(&means)
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n - 1) as f64 / n as f64 * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>();
    Summary::new(estimate, var.sqrt())
}

/// Runs `f(r, derive_seed(seed, r))` for each replication, collected in index order.
pub fn replicate<R: Send>(
    reps: usize,
    seed: u64,
    f: impl Fn(usize, u64) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    (0..reps)
        .into_par_iter()
        .map(|r| f(r, derive_seed(seed, r as u64)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPLICATIONS {
        return Err(Error::InvalidParams(format!(
            "experiments need at least {MIN_REPLICATIONS} replications, got {reps}"
        )));
    }
    Ok(())
}

/// One-dimensional Brownian motion with constant variance `x` per unit time, drift-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantDesign {
    pub x: f64,
    pub horizon: f64,
}

impl ConstantDesign {
    pub fn new(x: f64) -> Self {
        Self { x, horizon: 1.0 }
    }

    pub fn sample(&self, n: u64, seed: u64) -> Result<SampledPath<f64>> {
        let grid = TimeGrid::new(n, self.horizon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (self.x / n as f64).sqrt();
        let mut values = Vec::with_capacity(grid.count());
        let mut y = 0.0;
        values.push(y);
        for _ in 0..grid.increments() {
            let z: f64 = StandardNormal.sample(&mut rng);
            y += scale * z;
            values.push(y);
        }
        SampledPath::new(grid, 1, values)
    }

    fn matrix(&self) -> SymMatrix<f64> {
        SymMatrix::from_diag(&[self.x])
    }
}

fn check_scalar_spec(spec: &GFunctionSpec<f64>) -> Result<()> {
    if spec.dim != 1 {
        return Err(Error::Unsupported(
            "constant-variance experiments are one-dimensional".into(),
        ));
    }
    Ok(())
}

/// Empirical covariance of `sqrt(n) (V(k) - T rho_g(X) 1{k=0})` against `T (rho_gg - rho_g^2) 1{k=k'}`.
///
/// The diagonal is pooled over `k = 0..=N`; the off-diagonal statistic pools
/// `E[U_k conj(U_{k+1})]` over neighbouring modes.
pub fn clt_fourier_experiment(
    design: ConstantDesign,
    spec: &GFunctionSpec<f64>,
    n: u64,
    modes: usize,
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    check_scalar_spec(spec)?;
    check_reps(reps)?;
    let start = Instant::now();
    let x = design.matrix();
    let rho = spec.rho(&x)?.get(0, 0);
    let var_g = spec.rho_pair(&x, (0, 0), (0, 0))? - rho * rho;
    let t = design.horizon;
    let target = t * var_g;
    let root_n = (n as f64).sqrt();
    let rows = replicate(reps, seed, |_, s| {
        let y = design.sample(n, s)?;
        let c = fourier_coefficients(&y, spec, modes)?;
        let u: Vec<Complex64> = (0..=modes as isize)
            .map(|k| {
                let dc = if k == 0 { t * rho } else { 0.0 };
                (c.get(k, 0, 0) - dc) * root_n
            })
            .collect();
        let diag = u.iter().map(|v| v.norm_sqr()).sum::<f64>() / u.len() as f64;
        let cross: Complex64 = u.windows(2).map(|w| w[0] * w[1].conj()).sum::<Complex64>()
            / (u.len() - 1).max(1) as f64;
        Ok(vec![u[0].re * u[0].re, diag, cross.re, cross.im])
    })?;
    let k0 = jackknife(&rows, |m| m[0]);
    let diag = jackknife(&rows, |m| m[1]);
    let cross_re = jackknife(&rows, |m| m[2]);
    let cross_im = jackknife(&rows, |m| m[3]);
    Ok(ExperimentReport {
        name: "clt_fourier".into(),
        replications: reps,
        per_replication: rows,
        columns: vec![
            "u0_sq".into(),
            "diag_pooled".into(),
            "cross_re".into(),
            "cross_im".into(),
        ],
        metrics: vec![
            Metric::new("diag_k0", k0, target, Tolerance::Relative(0.2)),
            Metric::new("diag_pooled", diag, target, Tolerance::Relative(0.1)),
            Metric::new("cross_re", cross_re, 0.0, Tolerance::StdErrors(3.0)),
            Metric::new("cross_im", cross_im, 0.0, Tolerance::StdErrors(3.0)),
        ],
        wall_clock: start.elapsed(),
    })
}

/// Interior Fejér evaluation indices `j` with `t_j` in `[T/4, 3T/4]`.
fn interior_indices(modes: usize) -> std::ops::RangeInclusive<usize> {
    modes.div_ceil(2)..=(3 * modes) / 2
}

/// Standardized spot variances of the Fourier–Fejér and local estimators in a constant design.
///
/// Per replication the squared standardized errors are averaged over interior
/// evaluation points (Fejér) or interior equal-size blocks (local).
pub fn clt_spot_experiment(
    design: ConstantDesign,
    spec: &GFunctionSpec<f64>,
    n: u64,
    gamma: f64,
    k: f64,
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    check_scalar_spec(spec)?;
    check_reps(reps)?;
    let start = Instant::now();
    let grid = TimeGrid::new(n, design.horizon)?;
    let modes = select_mode_count(n, gamma, k, grid.increments())?;
    let x = design.matrix();
    let rho = spec.rho(&x)?.get(0, 0);
    let var_g = spec.rho_pair(&x, (0, 0), (0, 0))? - rho * rho;
    let slope = spec.rho_jacobian(&x)?[0][0];
    let rho_target = 2.0 / 3.0 * var_g;
    let x_target = rho_target / (slope * slope);
    let local_target = 2.0 * design.x * design.x;
    let scale = (n as f64 * design.horizon / modes as f64).sqrt();
    let interior = interior_indices(modes);
    let rows = replicate(reps, seed, |_, s| {
        let y = design.sample(n, s)?;
        let est = estimate_spot_covariance(&y, spec, modes, ClampPolicy::default())?;
        let (mut zr, mut zx, mut e) = (0.0, 0.0, 0.0);
        for j in interior.clone() {
            let dr = scale * (est.rho_path.values()[j].get(0, 0) - rho);
            let dx = scale * (est.x_path.values()[j].get(0, 0) - design.x);
            zr += dr * dr;
            zx += dx * dx;
            e += dr;
        }
        let cnt = interior.clone().count() as f64;
        let local = local_spot_estimator(&y, modes)?;
        let (mut zl, mut cl) = (0.0, 0.0);
        // the last block absorbs the remainder and is excluded
        for (b, v) in local.values.values().iter().enumerate().take(modes - 1) {
            let t = local.values.times()[b];
            if t >= design.horizon / 4.0 && t < 3.0 * design.horizon / 4.0 {
                let d = scale * (v.get(0, 0) - design.x);
                zl += d * d;
                cl += 1.0;
            }
        }
        Ok(vec![zr / cnt, zx / cnt, zl / cl, e / cnt])
    })?;
    let fourier = jackknife(&rows, |m| m[0]);
    let inverted = jackknife(&rows, |m| m[1]);
    let local = jackknife(&rows, |m| m[2]);
    let ratio = jackknife(&rows, |m| m[0] / m[2]);
    let bias = jackknife(&rows, |m| m[3]);
    Ok(ExperimentReport {
        name: "clt_spot".into(),
        replications: reps,
        per_replication: rows,
        columns: vec![
            "z2_rho".into(),
            "z2_x".into(),
            "z2_local".into(),
            "z_rho".into(),
        ],
        metrics: vec![
            Metric::new(
                "fourier_rho_variance",
                fourier,
                rho_target,
                Tolerance::Relative(0.1),
            ),
            Metric::new(
                "fourier_x_variance",
                inverted,
                x_target,
                Tolerance::Relative(0.1),
            ),
            Metric::new(
                "local_variance",
                local,
                local_target,
                Tolerance::Relative(0.1),
            ),
            Metric::new(
                "variance_ratio",
                ratio,
                rho_target / (slope * slope) / local_target,
                Tolerance::Relative(0.1),
            ),
            Metric::new("mean_error", bias, 0.0, Tolerance::StdErrors(3.0)),
        ],
        wall_clock: start.elapsed(),
    })
}

/// Median pointwise spot error per sample size with the log-log slope.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub n: Vec<u64>,
    pub modes: Vec<usize>,
    pub median_error: Vec<f64>,
    pub slope: f64,
    pub wall_clock: Duration,
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, _) = mean_var(xs);
    let (my, _) = mean_var(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median `|X̂_t - X|` over interior points and replications, for each `n`.
pub fn consistency_sweep(
    design: ConstantDesign,
    spec: &GFunctionSpec<f64>,
    n_list: &[u64],
    gamma: f64,
    k: f64,
    reps: usize,
    seed: u64,
) -> Result<SweepReport> {
    check_scalar_spec(spec)?;
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams(
            "n_list must be increasing with at least two entries".into(),
        ));
    }
    let start = Instant::now();
    let mut modes = Vec::new();
    let mut medians = Vec::new();
    for (idx, &n) in n_list.iter().enumerate() {
        let grid = TimeGrid::new(n, design.horizon)?;
        let nm = select_mode_count(n, gamma, k, grid.increments())?;
        let errs = replicate(reps, derive_seed(seed, idx as u64), |_, s| {
            let y = design.sample(n, s)?;
            let est = estimate_spot_covariance(&y, spec, nm, ClampPolicy::default())?;
            Ok(interior_indices(nm)
                .map(|j| (est.x_path.values()[j].get(0, 0) - design.x).abs())
                .collect::<Vec<f64>>())
        })?;
        modes.push(nm);
        medians.push(median(errs.into_iter().flatten().collect()));
    }
    let lx: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = medians.iter().map(|e| e.ln()).collect();
    Ok(SweepReport {
        n: n_list.to_vec(),
        modes,
        slope: ols_slope(&lx, &ly),
        median_error: medians,
        wall_clock: start.elapsed(),
    })
}

/// Per-replication time-averaged diagonal errors of the cosine and squared-increment estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub cosine_error: Vec<f64>,
    pub squares_error: Vec<f64>,
    /// Fraction of replications where the cosine error is smaller.
    pub win_fraction: f64,
    pub wall_clock: Duration,
}

/// Paired comparison on jump-diffusion paths: `g = cos` on the full vector versus squared increments per component.
pub fn jump_robustness_experiment(
    params: &BatesParams<f64>,
    n: u64,
    modes: usize,
    reps: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    let start = Instant::now();
    let d = params.dim();
    let grid = TimeGrid::new(n, 1.0)?;
    let cosine = GFunctionSpec::cosine(d);
    let squares = GFunctionSpec::squares();
    let interior = interior_indices(modes);
    let rows = replicate(reps, seed, |_, s| {
        let sim = simulate_bates(params, &grid, s)?;
        let cos_est =
            estimate_spot_covariance(&sim.y_path, &cosine, modes, ClampPolicy::default())?;
        let sq_est: Vec<_> = (0..d)
            .map(|i| {
                estimate_spot_covariance(
                    &sim.y_path.component(i),
                    &squares,
                    modes,
                    ClampPolicy::default(),
                )
            })
            .collect::<Result<_>>()?;
        let (mut ec, mut es) = (0.0, 0.0);
        for j in interior.clone() {
            let t = cos_est.x_path.times()[j];
            let truth = &sim.x_path.values()[grid.nearest_index(t)];
            for i in 0..d {
                ec += (cos_est.x_path.values()[j].get(i, i) - truth.get(i, i)).abs();
                es += (sq_est[i].x_path.values()[j].get(0, 0) - truth.get(i, i)).abs();
            }
        }
        let cnt = interior.clone().count() as f64;
        Ok((ec / cnt, es / cnt))
    })?;
    let (cosine_error, squares_error): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let wins = cosine_error
        .iter()
        .zip(&squares_error)
        .filter(|(c, s)| c < s)
        .count();
    Ok(RobustnessReport {
        win_fraction: wins as f64 / reps as f64,
        cosine_error,
        squares_error,
        wall_clock: start.elapsed(),
    })
}

/// Parameter estimates of one replication for each coarse grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReplication {
    pub estimates: Vec<ParamEstimate<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub m_list: Vec<usize>,
    pub replications: Vec<RecoveryReplication>,
    pub wall_clock: Duration,
}

impl RecoveryReport {
    /// Median over replications of the total fit residual, per coarse grid size.
    pub fn median_residuals(&self) -> Vec<f64> {
        (0..self.m_list.len())
            .map(|k| {
                median(
                    self.replications
                        .iter()
                        .map(|r| r.estimates[k].objective_values.iter().sum())
                        .collect(),
                )
            })
            .collect()
    }
}

/// Full pipeline: simulate, cosine spot reconstruction, second pass for every `m` in `m_list`.
pub fn parameter_recovery_experiment(
    params: &BatesParams<f64>,
    n: u64,
    modes: usize,
    m_list: &[usize],
    base: &SecondPassConfig<f64>,
    reps: usize,
    seed: u64,
) -> Result<RecoveryReport> {
    let start = Instant::now();
    let grid = TimeGrid::new(n, 1.0)?;
    let spec = GFunctionSpec::cosine(params.dim());
    let replications = replicate(reps, seed, |_, s| {
        let sim = simulate_bates(params, &grid, s)?;
        let coeffs = fourier_coefficients(&sim.y_path, &spec, modes)?;
        let estimates = m_list
            .iter()
            .map(|&m| {
                let cfg = SecondPassConfig { m, ..base.clone() };
                let spot = coarse_reconstruction(&coeffs, &spec, m, ClampPolicy::default())?;
                estimate_params(&spot.x_path, &sim.y_path, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RecoveryReplication { estimates })
    })?;
    Ok(RecoveryReport {
        m_list: m_list.to_vec(),
        replications,
        wall_clock: start.elapsed(),
    })
}

/// `E exp(Y_T - Y_0)` per component, with standard errors.
pub fn martingale_check(
    params: &BatesParams<f64>,
    n: u64,
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    check_reps(reps)?;
    let start = Instant::now();
    let grid = TimeGrid::new(n, 1.0)?;
    let d = params.dim();
    let rows = replicate(reps, seed, |_, s| {
        let sim = simulate_bates(params, &grid, s)?;
        let last = sim.y_path.row(sim.y_path.len() - 1);
        Ok((0..d)
            .map(|i| (last[i] - params.y0[i]).exp())
            .collect::<Vec<f64>>())
    })?;
    let metrics = (0..d)
        .map(|i| {
            Metric::new(
                format!("exp_y{}", i + 1),
                jackknife(&rows, |m| m[i]),
                1.0,
                Tolerance::StdErrors(3.0),
            )
        })
        .collect();
    Ok(ExperimentReport {
        name: "martingale".into(),
        replications: reps,
        per_replication: rows,
        columns: (1..=d).map(|i| format!("exp_y{i}")).collect(),
        metrics,
        wall_clock: start.elapsed(),
    })
}
