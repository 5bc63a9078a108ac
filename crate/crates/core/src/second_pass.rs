//! Second-order parameters from a reconstructed covariance path.
//!
//! Power variations of `X̂` (and of `X̂` jointly with `Y`) on a coarse grid of
//! `m` intervals are matched against their model limits in the affine
//! specification `dX = (b + MX + XM^T) dt + sqrt(X) dB Sigma + Sigma^T dB^T sqrt(X)`,
//! `alpha = Sigma^T Sigma`, yielding `alpha_hat` and `rho_hat`.
//!
//! All functionals use the step `h = T/m`, i.e. `V = h sum_p |Δ_p / sqrt(h)|^r`.

pub use crate::special::{bivariate_abs_moment, hyp2f1};

use crate::error::{Error, Result};
use crate::fourier::{
    spot_from_coefficients, ClampPolicy, FourierCoefficients, GFunctionSpec, SpotEstimate,
};
use crate::linalg::{matrix_sqrt_psd, upper_pairs, SampledPath, SymMatrix, SymMatrixPath};
use crate::scalar::{CompensatedSum, Scalar};
use crate::special::abs_moment;

/// Quadratic-variation convention for the off-diagonal entry of `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pv12Form {
    /// `d<X_ij> = (alpha_jj X_ii + 2 alpha_ij X_ij + alpha_ii X_jj) dt`, as implied by the model.
    #[default]
    Model,
    /// `alpha_ii X_ii + 2 alpha_ij X_ij + alpha_jj X_jj`.
    SameIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondPassConfig<T> {
    /// Number of coarse intervals.
    pub m: usize,
    /// Exponent for diagonal entries listed in `jump_components`.
    pub r_diag: T,
    /// Exponent for off-diagonal entries and jump-free diagonal entries.
    pub r_offdiag: T,
    pub r_cross: T,
    pub s_cross: T,
    /// Components whose variance process jumps.
    pub jump_components: Vec<usize>,
    pub pv12_form: Pv12Form,
}

impl<T: Scalar> SecondPassConfig<T> {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            r_diag: T::lit(0.25),
            r_offdiag: T::one(),
            r_cross: T::lit(0.5),
            s_cross: T::lit(0.5),
            jump_components: vec![0],
            pv12_form: Pv12Form::Model,
        }
    }

    /// `m = round(k_tilde n^iota)`, at least 2.
    pub fn coarse_count(n: u64, iota: f64, k_tilde: f64) -> usize {
        ((k_tilde * (n as f64).powf(iota)).round() as usize).max(2)
    }

    /// Power used for the diagonal entry `i`.
    pub fn r_for_diag(&self, i: usize) -> T {
        if self.jump_components.contains(&i) {
            self.r_diag
        } else {
            self.r_offdiag
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidParams("coarse grid needs m >= 1".into()));
        }
        for (name, v) in [
            ("r_diag", self.r_diag),
            ("r_offdiag", self.r_offdiag),
            ("r_cross", self.r_cross),
        ] {
            if !(v > T::zero()) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.s_cross >= T::zero()) {
            return Err(Error::InvalidParams(format!(
                "s_cross must be nonnegative, got {}",
                self.s_cross
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate<T> {
    pub alpha_hat: SymMatrix<T>,
    pub rho_hat: Vec<T>,
    /// Squared residuals of each off-diagonal alpha fit (packed order of `i < j`), then of the rho fit.
    pub objective_values: Vec<T>,
    /// Objective evaluations spent in the rho refinement.
    pub iterations: usize,
}

/// Coarse grid `t_p = pT/m`, `p = 0..=m`.
pub fn coarse_times<T: Scalar>(m: usize, horizon: T) -> Vec<T> {
    (0..=m)
        .map(|p| T::count(p) * horizon / T::count(m))
        .collect()
}

/// Spot reconstruction on the coarse grid from precomputed Fourier coefficients.
pub fn coarse_reconstruction<T: Scalar>(
    coeffs: &FourierCoefficients<T>,
    spec: &GFunctionSpec<T>,
    m: usize,
    policy: ClampPolicy<T>,
) -> Result<SpotEstimate<T>> {
    spot_from_coefficients(coeffs, spec, &coarse_times(m, coeffs.horizon()), policy)
}

/// `h sum_p |Δ_p / sqrt(h)|^r` for a path sampled at `t_p = pT/m`.
pub fn power_variation<T: Scalar>(path: &[T], horizon: T, r: T) -> T {
    cross_power_variation(path, path, horizon, r, T::zero())
}

/// `h sum_p |Δ_p x / sqrt(h)|^r |Δ_p y / sqrt(h)|^s`.
pub fn cross_power_variation<T: Scalar>(x: &[T], y: &[T], horizon: T, r: T, s: T) -> T {
    let m = x.len().saturating_sub(1).min(y.len().saturating_sub(1));
    if m == 0 {
        return T::zero();
    }
    let h = horizon / T::count(m);
    let root = h.sqrt();
    let mut acc = CompensatedSum::new();
    for p in 1..=m {
        let dx = ((x[p] - x[p - 1]) / root).abs();
        let term = if s == T::zero() {
            dx.powf(r)
        } else {
            dx.powf(r) * ((y[p] - y[p - 1]) / root).abs().powf(s)
        };
        acc.add(term);
    }
    acc.value() * h
}

/// Component `i` of `y` at `t_p = pT/m`, `p = 0..=m`, by nearest fine index.
pub fn subsample<T: Scalar>(y: &SampledPath<T>, component: usize, m: usize) -> Result<Vec<T>> {
    let grid = y.grid();
    let horizon = grid.horizon();
    let half_step = T::lit(0.5 + 1e-9) * grid.spacing();
    if m > grid.increments() {
        return Err(Error::GridMismatch(format!(
            "{m} coarse intervals on {} observed increments",
            grid.increments()
        )));
    }
    coarse_times(m, horizon)
        .into_iter()
        .enumerate()
        .map(|(p, t)| {
            let idx = grid.nearest_index(t);
            if (grid.time(idx) - t).abs() > half_step {
                return Err(Error::GridMismatch(format!(
                    "coarse point {p} at t = {t} is {} away from the nearest observation",
                    (grid.time(idx) - t).abs()
                )));
            }
            Ok(y.row(idx)[component])
        })
        .collect()
}

fn coarse_step<T: Scalar>(x: &SymMatrixPath<T>) -> Result<(usize, T)> {
    if x.len() < 2 {
        return Err(Error::EmptyPath);
    }
    let m = x.len() - 1;
    let span = x.times()[m] - x.times()[0];
    Ok((m, span / T::count(m)))
}

/// Model limit of the power variation of `X_ij`, `i != j`, with the clamp count of
/// negative quadratic-variation densities.
pub fn pv12_model<T: Scalar>(
    x: &SymMatrixPath<T>,
    (i, j): (usize, usize),
    (a_ii, a_ij, a_jj): (T, T, T),
    r: T,
    form: Pv12Form,
) -> Result<(T, usize)> {
    let (m, h) = coarse_step(x)?;
    let (wi, wj) = match form {
        Pv12Form::Model => (a_jj, a_ii),
        Pv12Form::SameIndex => (a_ii, a_jj),
    };
    let two = T::lit(2.0);
    let half_r = T::lit(0.5) * r;
    let mut clamped = 0;
    let mut acc = CompensatedSum::new();
    for v in &x.values()[1..=m] {
        let q = wi * v.get(i, i) + two * a_ij * v.get(i, j) + wj * v.get(j, j);
        if q < T::zero() {
            clamped += 1;
        } else {
            acc.add(q.powf(half_r));
        }
    }
    Ok((abs_moment(r) * h * acc.value(), clamped))
}

fn check_diagonal<T: Scalar>(x: &SymMatrixPath<T>, i: usize) -> Result<()> {
    for (p, v) in x.values().iter().enumerate() {
        let val = v.get(i, i);
        if val < T::zero() {
            return Err(Error::NegativeDiagonal {
                point: p,
                component: i,
                value: val.as_f64(),
            });
        }
    }
    Ok(())
}

/// `h sum_{p=1..m} X_{p,ii}^e`.
fn diag_power_integral<T: Scalar>(x: &SymMatrixPath<T>, i: usize, e: T) -> Result<T> {
    let (m, h) = coarse_step(x)?;
    let acc: CompensatedSum<T> = x.values()[1..=m]
        .iter()
        .map(|v| v.get(i, i).powf(e))
        .collect();
    Ok(acc.value() * h)
}

/// Model limit of the joint power variation of `(X_ii, Y_i)`.
pub fn pc_model<T: Scalar>(
    x: &SymMatrixPath<T>,
    alpha: &SymMatrix<T>,
    rho: &[T],
    i: usize,
    r: T,
    s: T,
) -> Result<T> {
    let sqrt_alpha = matrix_sqrt_psd(alpha)?;
    pc_model_with_sqrt(x, alpha, &sqrt_alpha, rho, i, r, s)
}

fn pc_model_with_sqrt<T: Scalar>(
    x: &SymMatrixPath<T>,
    alpha: &SymMatrix<T>,
    sqrt_alpha: &SymMatrix<T>,
    rho: &[T],
    i: usize,
    r: T,
    s: T,
) -> Result<T> {
    let a_ii = alpha.get(i, i);
    if !(a_ii > T::zero()) {
        return Err(Error::DegenerateAlpha {
            index: i,
            value: a_ii.as_f64(),
        });
    }
    let loading: T = (0..alpha.dim())
        .map(|k| sqrt_alpha.get(i, k) * rho[k])
        .sum();
    let corr = (loading / a_ii.sqrt()).max(-T::one()).min(T::one());
    let integral = diag_power_integral(x, i, T::lit(0.5) * (r + s))?;
    Ok(bivariate_abs_moment(r, s, corr) * (T::lit(4.0) * a_ii).powf(T::lit(0.5) * r) * integral)
}

/// Closed-form `alpha_ii` whose model limit equals the power variation `v` of order `r`.
pub fn alpha_diag_from_variation<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    i: usize,
    v: T,
    r: T,
) -> Result<T> {
    check_diagonal(xhat, i)?;
    let half = T::lit(0.5);
    let base = abs_moment(r) / T::lit(2.0).powf(half * r) * diag_power_integral(xhat, i, half * r)?;
    Ok(if base > T::zero() {
        (v / base).powf(T::lit(2.0) / r) / T::lit(8.0)
    } else {
        T::zero()
    })
}

/// Least-squares `alpha_ij` on `[-sqrt(a_ii a_jj), sqrt(a_ii a_jj)]` against `target`; returns the estimate and squared residual.
pub fn alpha_offdiag_from_variation<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    (i, j): (usize, usize),
    (a_ii, a_jj): (T, T),
    target: T,
    r: T,
    form: Pv12Form,
) -> Result<(T, T)> {
    pv12_model(xhat, (i, j), (a_ii, T::zero(), a_jj), r, form)?;
    let bound = (a_ii * a_jj).sqrt();
    let objective = |a: T| {
        let (model, _) = pv12_model(xhat, (i, j), (a_ii, a, a_jj), r, form).expect("path checked");
        (target - model) * (target - model)
    };
    Ok(minimize_interval(objective, -bound, bound, T::lit(1e-10)))
}

/// Closed-form diagonal estimates and 1-D fits for the off-diagonal entries.
pub fn estimate_alpha<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    cfg: &SecondPassConfig<T>,
) -> Result<(SymMatrix<T>, Vec<T>)> {
    cfg.validate()?;
    let (_, h) = coarse_step(xhat)?;
    let m = xhat.len() - 1;
    let horizon = h * T::count(m);
    let d = xhat.dim();
    let mut alpha = SymMatrix::zeros(d);
    for i in 0..d {
        let r = cfg.r_for_diag(i);
        let v = power_variation(&xhat.entry_series(i, i), horizon, r);
        alpha.set(i, i, alpha_diag_from_variation(xhat, i, v, r)?);
    }
    let mut residuals = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let r = cfg.r_offdiag;
            let target = power_variation(&xhat.entry_series(i, j), horizon, r);
            let (a_ij, res) = alpha_offdiag_from_variation(
                xhat,
                (i, j),
                (alpha.get(i, i), alpha.get(j, j)),
                target,
                r,
                cfg.pv12_form,
            )?;
            alpha.set(i, j, a_ij);
            residuals.push(res);
        }
    }
    Ok((alpha, residuals))
}

/// Coarse scan over 201 points, then golden-section search around the best one.
fn minimize_interval<T: Scalar>(f: impl Fn(T) -> T, lo: T, hi: T, tol: T) -> (T, T) {
    if !(hi > lo) {
        let x = T::lit(0.5) * (lo + hi);
        return (x, f(x));
    }
    const SCAN: usize = 200;
    let step = (hi - lo) / T::count(SCAN);
    let mut best = (lo, f(lo));
    for k in 1..=SCAN {
        let x = lo + step * T::count(k);
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    while b - a > tol {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = f(e);
        }
    }
    let x = T::lit(0.5) * (a + b);
    let v = f(x);
    if v <= best.1 {
        (x, v)
    } else {
        best
    }
}

/// Targets `V(X̂_ii, Y_i)` of the rho fit.
pub fn cross_targets<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    y: &SampledPath<T>,
    cfg: &SecondPassConfig<T>,
) -> Result<Vec<T>> {
    let (m, h) = coarse_step(xhat)?;
    if y.dim() != xhat.dim() {
        return Err(Error::DimensionMismatch(format!(
            "path dimension {} but covariance dimension {}",
            y.dim(),
            xhat.dim()
        )));
    }
    let horizon = h * T::count(m);
    (0..y.dim())
        .map(|i| {
            let yi = subsample(y, i, m)?;
            Ok(cross_power_variation(
                &xhat.entry_series(i, i),
                &yi,
                horizon,
                cfg.r_cross,
                cfg.s_cross,
            ))
        })
        .collect()
}

/// Least-squares fit of `rho` on the unit ball.
///
/// The objective depends on `rho` only through `((sqrt(alpha) rho)_i)^2`, so
/// `rho` and `-rho` always tie; the grid scan resolves ties towards the
/// lexicographically smallest candidate.
pub fn estimate_rho<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    targets: &[T],
    alpha_hat: &SymMatrix<T>,
    cfg: &SecondPassConfig<T>,
) -> Result<(Vec<T>, T, usize)> {
    let d = alpha_hat.dim();
    if targets.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for dimension {d}",
            targets.len()
        )));
    }
    if d > 3 {
        return Err(Error::Unsupported(format!(
            "rho grid scan in dimension {d}"
        )));
    }
    for i in 0..d {
        check_diagonal(xhat, i)?;
    }
    let sqrt_alpha = matrix_sqrt_psd(alpha_hat)?;
    let objective = |rho: &[T]| -> Result<T> {
        let norm2: T = rho.iter().map(|&v| v * v).sum();
        if norm2 > T::one() || rho.iter().any(|v| v.abs() > T::one()) {
            return Ok(T::infinity());
        }
        let mut total = T::zero();
        for i in 0..d {
            let model = pc_model_with_sqrt(
                xhat,
                alpha_hat,
                &sqrt_alpha,
                rho,
                i,
                cfg.r_cross,
                cfg.s_cross,
            )?;
            total += (targets[i] - model) * (targets[i] - model);
        }
        Ok(total)
    };

    const HALF_GRID: usize = 20;
    let side = 2 * HALF_GRID + 1;
    let mut best: Option<(Vec<T>, T)> = None;
    let mut idx = vec![0usize; d];
    'scan: loop {
        let cand: Vec<T> = idx
            .iter()
            .map(|&k| (T::count(k) - T::count(HALF_GRID)) / T::count(HALF_GRID))
            .collect();
        let v = objective(&cand)?;
        if v.is_finite() && best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((cand, v));
        }
        for pos in (0..d).rev() {
            idx[pos] += 1;
            if idx[pos] < side {
                continue 'scan;
            }
            idx[pos] = 0;
        }
        break;
    }
    let (start, start_val) =
        best.ok_or_else(|| Error::SolverFailure("no feasible grid point".into()))?;
    let step = T::one() / T::count(HALF_GRID);
    let (rho, val, evals) = nelder_mead(|p| objective(p), &start, step, T::lit(1e-8), 4000)?;
    if val > start_val {
        return Err(Error::SolverFailure(format!(
            "refinement ended at {val:e}, above the grid minimum {start_val:e}"
        )));
    }
    Ok((rho, val, evals))
}

/// Derivative-free simplex minimization; returns the best vertex, its value and the evaluation count.
fn nelder_mead<T: Scalar>(
    f: impl Fn(&[T]) -> Result<T>,
    start: &[T],
    step: T,
    tol: T,
    max_evals: usize,
) -> Result<(Vec<T>, T, usize)> {
    let d = start.len();
    let mut evals = 0;
    let eval = |p: &[T], evals: &mut usize| -> Result<T> {
        *evals += 1;
        f(p)
    };
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), eval(start, &mut evals)?));
    for k in 0..d {
        // step away from the boundary so the initial simplex stays feasible when possible
        let mut p = start.to_vec();
        p[k] = if p[k] > T::zero() {
            p[k] - step
        } else {
            p[k] + step
        };
        let v = eval(&p, &mut evals)?;
        simplex.push((p, v));
    }
    let (alpha, gamma, rho_c, sigma) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
            })
            .fold(T::zero(), T::max);
        if size < tol {
            break;
        }
        let mut centroid = vec![T::zero(); d];
        for (p, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += *v / T::count(d);
            }
        }
        let worst = simplex[d].clone();
        let along = |t: T| -> Vec<T> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| *c + t * (*c - *w))
                .collect()
        };
        let reflected = along(alpha);
        let fr = eval(&reflected, &mut evals)?;
        if fr < simplex[0].1 {
            let expanded = along(gamma);
            let fe = eval(&expanded, &mut evals)?;
            simplex[d] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
            continue;
        }
        let contracted = if fr < worst.1 {
            along(rho_c)
        } else {
            along(-rho_c)
        };
        let fc = eval(&contracted, &mut evals)?;
        if fc < worst.1.min(fr) {
            simplex[d] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let p: Vec<T> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| *b + sigma * (*v - *b))
                .collect();
            let v = eval(&p, &mut evals)?;
            *vertex = (p, v);
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (p, v) = simplex.swap_remove(0);
    Ok((p, v, evals))
}

/// Alpha then rho from a coarse-grid reconstruction and the observed path.
pub fn estimate_params<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    y: &SampledPath<T>,
    cfg: &SecondPassConfig<T>,
) -> Result<ParamEstimate<T>> {
    let (alpha_hat, mut objective_values) = estimate_alpha(xhat, cfg)?;
    let targets = cross_targets(xhat, y, cfg)?;
    let (rho_hat, rho_res, iterations) = estimate_rho(xhat, &targets, &alpha_hat, cfg)?;
    objective_values.push(rho_res);
    Ok(ParamEstimate {
        alpha_hat,
        rho_hat,
        objective_values,
        iterations,
    })
}

/// Functional applied to pairs of coarse increments of `X̂` entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovCovFamily<T> {
    /// `Δ_a Δ_b / h`.
    Products,
    /// `|Δ_a / sqrt(h)|^r |Δ_b / sqrt(h)|^s` (`|Δ_a / sqrt(h)|^(r+s)` on the diagonal).
    AbsPower { r: T, s: T },
}

/// `h sum_p f(Δ_p X̂_a, Δ_p X̂_b)` for all pairs of packed entries `a <= b`.
pub fn covcov_estimator<T: Scalar>(
    xhat: &SymMatrixPath<T>,
    family: CovCovFamily<T>,
) -> Result<SymMatrix<T>> {
    let (m, h) = coarse_step(xhat)?;
    let pairs = upper_pairs(xhat.dim());
    let series: Vec<Vec<T>> = pairs
        .iter()
        .map(|&(i, j)| xhat.entry_series(i, j))
        .collect();
    let root = h.sqrt();
    let mut out = SymMatrix::zeros(pairs.len());
    for a in 0..pairs.len() {
        for b in a..pairs.len() {
            let mut acc = CompensatedSum::new();
            for p in 1..=m {
                let da = (series[a][p] - series[a][p - 1]) / root;
                let db = (series[b][p] - series[b][p - 1]) / root;
                acc.add(match family {
                    CovCovFamily::Products => da * db,
                    CovCovFamily::AbsPower { r, s } if a == b => da.abs().powf(r + s),
                    CovCovFamily::AbsPower { r, s } => da.abs().powf(r) * db.abs().powf(s),
                });
            }
            out.set(a, b, acc.value() * h);
        }
    }
    Ok(out)
}
