//! Euler–Maruyama simulation of a multivariate Bates-type affine model.
//!
//! The log-price `Y` is driven by `sqrt(X) dZ` plus compound-Poisson Gaussian
//! jumps; the covariance `X` follows Wishart-type dynamics
//!
//! ```text
//! dX = (b + M X + X M^T) dt + sqrt(X) dB Sigma + Sigma dB^T sqrt(X) + jumps in X_11
//! ```
//!
//! with `Z = sqrt(1 - rho^T rho) W + B rho`. Each Euler step is symmetrized and
//! projected back onto the PSD cone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{
    matrix_sqrt_psd, psd_project, Matrix, SampledPath, SymMatrix, SymMatrixPath, TimeGrid,
};
use crate::scalar::Scalar;

/// Largest fraction of eigenvalue mass one Euler step may lose to PSD clipping.
pub const MAX_CLIP_FRACTION: f64 = 0.1;

/// Smallest fine-grid resolution accepted by [`simulate_bates`].
pub const MIN_SAMPLES_PER_UNIT: u64 = 100;

/// Drift correction paired with the Gaussian `Y` jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpCompensation {
    /// `lambda (exp(mu + sigma^2/2) - 1)`: makes `exp(Y_i)` a martingale.
    #[default]
    Martingale,
    /// `lambda (exp(mu - sigma^2/2) - 1)`, the variant with the opposite sign on `sigma^2`.
    NegativeHalfVariance,
}

/// Parameters of the affine jump model.
#[derive(Debug, Clone, PartialEq)]
pub struct BatesParams<T> {
    pub y0: Vec<T>,
    pub x0: SymMatrix<T>,
    /// Mean reversion matrix `M`.
    pub mean_reversion: Matrix<T>,
    /// `alpha = Sigma^2`.
    pub alpha: SymMatrix<T>,
    /// Affine drift level `b`.
    pub b: SymMatrix<T>,
    /// Leverage vector `rho`, `rho^T rho <= 1`.
    pub rho: Vec<T>,
    /// Jump intensities of each log-price, per unit time.
    pub lambda_y: Vec<T>,
    pub jump_mu: Vec<T>,
    pub jump_sigma: Vec<T>,
    /// Intensity of the exponential jumps in `X_11`.
    pub lambda_x11: T,
    /// Mean of the exponential `X_11` jump marks.
    pub theta: T,
    pub compensation: JumpCompensation,
}

impl<T: Scalar> BatesParams<T> {
    /// Two-asset reference parameter set (one year of one-minute data is `n = 127750`).
    pub fn reference() -> Self {
        let l = T::lit;
        let alpha = SymMatrix::from_packed(2, vec![l(0.0725), l(0.06), l(0.1325)]).unwrap();
        Self {
            y0: vec![T::zero(); 2],
            x0: SymMatrix::from_packed(2, vec![l(0.09), l(-0.036), l(0.09)]).unwrap(),
            mean_reversion: Matrix::from_rows(&[vec![l(-1.6), l(-0.2)], vec![l(-0.4), l(-1.0)]])
                .unwrap(),
            b: alpha.scale(l(3.5)),
            alpha,
            rho: vec![l(-0.3), l(-0.5)],
            lambda_y: vec![l(100.0), l(100.0)],
            jump_mu: vec![l(-0.005), l(-0.003)],
            jump_sigma: vec![l(0.015), l(0.02)],
            lambda_x11: l(10.0),
            theta: l(0.05),
            compensation: JumpCompensation::Martingale,
        }
    }

    /// Constant covariance `x`: no vol-of-vol, no mean reversion, no jumps.
    pub fn constant_covariance(x: SymMatrix<T>) -> Self {
        let d = x.dim();
        Self {
            y0: vec![T::zero(); d],
            x0: x,
            mean_reversion: Matrix::zeros(d, d),
            alpha: SymMatrix::zeros(d),
            b: SymMatrix::zeros(d),
            rho: vec![T::zero(); d],
            lambda_y: vec![T::zero(); d],
            jump_mu: vec![T::zero(); d],
            jump_sigma: vec![T::zero(); d],
            lambda_x11: T::zero(),
            theta: T::one(),
            compensation: JumpCompensation::Martingale,
        }
    }

    /// Copy with every jump intensity set to zero.
    pub fn without_jumps(&self) -> Self {
        let mut p = self.clone();
        p.lambda_y.iter_mut().for_each(|l| *l = T::zero());
        p.lambda_x11 = T::zero();
        p
    }

    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    /// `Sigma = sqrt(alpha)`, recomputed on every call.
    pub fn sigma(&self) -> Result<SymMatrix<T>> {
        matrix_sqrt_psd(&self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if d == 0 {
            return bad("dimension must be positive".into());
        }
        if self.x0.dim() != d
            || self.alpha.dim() != d
            || self.b.dim() != d
            || self.mean_reversion.rows() != d
            || self.mean_reversion.cols() != d
            || self.rho.len() != d
            || self.lambda_y.len() != d
            || self.jump_mu.len() != d
            || self.jump_sigma.len() != d
        {
            return bad(format!("all parameters must have dimension {d}"));
        }
        if !self.x0.is_psd() {
            return bad("x0 must be positive semidefinite".into());
        }
        if !self.alpha.is_psd() {
            return bad("alpha must be positive semidefinite".into());
        }
        let shifted = self.b.sub(&self.alpha.scale(T::count(d - 1)));
        if !self.b.is_psd() || !shifted.is_psd() {
            return bad("b and b - (d-1) alpha must be positive semidefinite".into());
        }
        let rr = self.rho.iter().fold(T::zero(), |acc, &r| acc + r * r);
        if self.rho.iter().any(|r| r.abs() > T::one()) || rr > T::one() {
            return bad("rho must lie in [-1, 1]^d with rho^T rho <= 1".into());
        }
        if self.lambda_y.iter().any(|&l| l < T::zero()) || self.lambda_x11 < T::zero() {
            return bad("jump intensities must be nonnegative".into());
        }
        if self.jump_sigma.iter().any(|&s| s < T::zero()) {
            return bad("jump standard deviations must be nonnegative".into());
        }
        if !(self.theta > T::zero()) {
            return bad("theta must be positive".into());
        }
        Ok(())
    }

    /// Per-unit-time drift compensator of the jumps of `Y_i`.
    pub fn jump_compensator(&self, i: usize) -> T {
        let half_var = T::lit(0.5) * self.jump_sigma[i] * self.jump_sigma[i];
        let exponent = match self.compensation {
            JumpCompensation::Martingale => self.jump_mu[i] + half_var,
            JumpCompensation::NegativeHalfVariance => self.jump_mu[i] - half_var,
        };
        self.lambda_y[i] * (exponent.exp() - T::one())
    }
}

/// One recorded jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent<T> {
    /// First grid index at which the jump is visible.
    pub step: usize,
    pub time: T,
    /// Log-price coordinate for `Y` jumps; always `0` (entry `(1,1)`) for `X` jumps.
    pub component: usize,
    pub mark: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput<T> {
    pub y_path: SampledPath<T>,
    /// Covariance on the same fine grid as `y_path`.
    pub x_path: SymMatrixPath<T>,
    pub y_jumps: Vec<JumpEvent<T>>,
    pub x_jumps: Vec<JumpEvent<T>>,
    /// Number of Euler steps that needed PSD clipping.
    pub psd_clip_count: usize,
}

/// SplitMix64 mixing of a master seed with a stream index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal<T: Scalar>(rng: &mut impl Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

fn poisson_count(dist: &Option<Poisson<f64>>, rng: &mut impl Rng) -> usize {
    dist.as_ref().map_or(0, |p| p.sample(rng) as usize)
}

/// Simulates `(Y, X)` on `grid` with Euler–Maruyama and left-endpoint coefficients.
///
/// Diffusion and jump draws come from two independent streams derived from
/// `seed`, so switching jumps on or off leaves the Brownian increments intact.
pub fn simulate_bates<T: Scalar>(
    params: &BatesParams<T>,
    grid: &TimeGrid<T>,
    seed: u64,
) -> Result<SimOutput<T>> {
    params.validate()?;
    if grid.n() < MIN_SAMPLES_PER_UNIT {
        return Err(Error::InvalidParams(format!(
            "simulation grid needs at least {MIN_SAMPLES_PER_UNIT} samples per unit time, got {}",
            grid.n()
        )));
    }
    let d = params.dim();
    let sigma = params.sigma()?.to_dense();
    let m_mat = &params.mean_reversion;
    let m_t = m_mat.transpose();
    let h = grid.spacing();
    let sqrt_h = h.sqrt();
    let steps = grid.increments();
    let rho_norm2 = params.rho.iter().fold(T::zero(), |acc, &r| acc + r * r);
    let w_scale = (T::one() - rho_norm2).max(T::zero()).sqrt();
    let compensators: Vec<T> = (0..d).map(|i| params.jump_compensator(i)).collect();

    let poisson = |rate: T| -> Result<Option<Poisson<f64>>> {
        let mean = (rate * h).as_f64();
        if mean > 0.0 {
            Poisson::new(mean)
                .map(Some)
                .map_err(|e| Error::InvalidParams(format!("jump intensity: {e}")))
        } else {
            Ok(None)
        }
    };
    let y_counts = (0..d)
        .map(|i| poisson(params.lambda_y[i]))
        .collect::<Result<Vec<_>>>()?;
    let x_count = poisson(params.lambda_x11)?;
    let x_marks = Exp::new(1.0 / params.theta.as_f64())
        .map_err(|e| Error::InvalidParams(format!("theta: {e}")))?;

    let mut diffusion_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut jump_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));

    let mut y_values = Vec::with_capacity(grid.count() * d);
    y_values.extend_from_slice(&params.y0);
    let mut x_values = Vec::with_capacity(grid.count());
    x_values.push(params.x0.clone());
    let mut y_jumps = Vec::new();
    let mut x_jumps = Vec::new();
    let mut clip_count = 0usize;
    let mut x = params.x0.clone();
    let mut db = Matrix::zeros(d, d);
    let mut dw = vec![T::zero(); d];

    for step in 0..steps {
        for i in 0..d {
            for j in 0..d {
                db[(i, j)] = normal::<T>(&mut diffusion_rng) * sqrt_h;
            }
        }
        for w in dw.iter_mut() {
            *w = normal::<T>(&mut diffusion_rng) * sqrt_h;
        }
        let root = matrix_sqrt_psd(&x)?.to_dense();
        let db_rho = db.matvec(&params.rho);
        let dz: Vec<T> = dw
            .iter()
            .zip(&db_rho)
            .map(|(&w, &br)| w_scale * w + br)
            .collect();

        // X step
        let xd = x.to_dense();
        let drift = params
            .b
            .to_dense()
            .add(&m_mat.matmul(&xd))
            .add(&xd.matmul(&m_t));
        let noise = root.matmul(&db).matmul(&sigma);
        let delta = drift.scale(h).add(&noise).add(&noise.transpose());
        let raw = SymMatrix::from_dense_symmetrized(&xd.add(&delta));
        let (mut next_x, clipped) = psd_project(&raw);
        if clipped > T::zero() {
            clip_count += 1;
            let mass = next_x.trace() + clipped;
            if clipped > T::lit(MAX_CLIP_FRACTION) * mass {
                return Err(Error::DegenerateStep {
                    step,
                    clipped: clipped.as_f64(),
                    mass: mass.as_f64(),
                });
            }
        }
        let t_next = grid.time(step + 1);
        for _ in 0..poisson_count(&x_count, &mut jump_rng) {
            let mark = T::lit(x_marks.sample(&mut jump_rng));
            next_x.set(0, 0, next_x.get(0, 0) + mark);
            x_jumps.push(JumpEvent {
                step: step + 1,
                time: t_next,
                component: 0,
                mark,
            });
        }

        // Y step, coefficients at the left endpoint
        let diffusion = root.matvec(&dz);
        let base = step * d;
        for i in 0..d {
            let drift_y = (-T::lit(0.5) * x.get(i, i) - compensators[i]) * h;
            let mut next = y_values[base + i] + drift_y + diffusion[i];
            for _ in 0..poisson_count(&y_counts[i], &mut jump_rng) {
                let z = normal::<T>(&mut jump_rng);
                let mark = params.jump_mu[i] + params.jump_sigma[i] * z;
                next += mark;
                y_jumps.push(JumpEvent {
                    step: step + 1,
                    time: t_next,
                    component: i,
                    mark,
                });
            }
            y_values.push(next);
        }
        x = next_x;
        x_values.push(x.clone());
    }

    let times = (0..grid.count()).map(|m| grid.time(m)).collect();
    Ok(SimOutput {
        y_path: SampledPath::new(*grid, d, y_values)?,
        x_path: SymMatrixPath::new(times, x_values)?,
        y_jumps,
        x_jumps,
        psd_clip_count: clip_count,
    })
}

/// Removes the recorded jump marks cumulatively from `Y` and `X_11`.
pub fn strip_jumps<T: Scalar>(out: &SimOutput<T>) -> SimOutput<T> {
    let d = out.y_path.dim();
    let count = out.y_path.len();
    let mut y_shift = vec![T::zero(); d];
    let mut x_shift = T::zero();
    let mut y_events = out.y_jumps.iter().peekable();
    let mut x_events = out.x_jumps.iter().peekable();
    let mut y_values = Vec::with_capacity(out.y_path.values().len());
    let mut x_values = Vec::with_capacity(count);
    for m in 0..count {
        while let Some(ev) = y_events.next_if(|ev| ev.step <= m) {
            y_shift[ev.component] += ev.mark;
        }
        while let Some(ev) = x_events.next_if(|ev| ev.step <= m) {
            x_shift += ev.mark;
        }
        y_values.extend(out.y_path.row(m).iter().zip(&y_shift).map(|(&v, &s)| v - s));
        let mut x = out.x_path.values()[m].clone();
        if x_shift != T::zero() {
            x.set(0, 0, x.get(0, 0) - x_shift);
        }
        x_values.push(x);
    }
    SimOutput {
        y_path: SampledPath::new(*out.y_path.grid(), d, y_values).expect("same shape as input"),
        x_path: SymMatrixPath::new(out.x_path.times().to_vec(), x_values)
            .expect("same shape as input"),
        y_jumps: Vec::new(),
        x_jumps: Vec::new(),
        psd_clip_count: out.psd_clip_count,
    }
}
