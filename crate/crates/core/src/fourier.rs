//! Fourier–Féjer reconstruction of the spot covariance path.
//!
//! 1. Fourier coefficients of `t -> rho_g(X_t)` are estimated from normalized
//!    increments, `V(k) = (1/n) sum_m exp(-i 2 pi k t_{m-1} / T) g(sqrt(n) dY_m)`.
//! 2. The path is rebuilt by Féjer (Cesàro) summation of those coefficients.
//! 3. The moment map `rho_g` is inverted pointwise.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{packed_len, upper_pairs, SampledPath, SymMatrix, SymMatrixPath};
use crate::scalar::{CompensatedSum, Scalar};
use crate::special::{abs_moment, bivariate_abs_moment};

/// Upper bound on `|rho_g|` entries accepted by the inverse of the bounded maps.
pub const INVERSE_UPPER_SLACK: f64 = 1e-10;

/// Relative imaginary residue tolerated by [`fejer_reconstruct`].
pub const IMAGINARY_REL_TOL: f64 = 1e-9;
pub const IMAGINARY_ABS_TOL: f64 = 1e-12;

/// Test function applied to normalized increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GKind<T> {
    /// Entry `(i, j)`, `i < j`: `|y_i|^r |y_j|^s`; diagonal `|y_i|^(r+s)`.
    PowerVariation { r: T, s: T },
    /// Entry `(i, j)`: `cos(y_i + 1{i != j} y_j)`.
    CosineTT,
    /// Entry `(i, j)`: `exp(-<y, A_ij y>/2)` with `A_ij = (e_i + e_j)(e_i + e_j)^T`.
    GaussExp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GFunctionSpec<T> {
    pub kind: GKind<T>,
    pub dim: usize,
}

impl<T: Scalar> GFunctionSpec<T> {
    pub fn new(kind: GKind<T>, dim: usize) -> Self {
        Self { kind, dim }
    }

    pub fn cosine(dim: usize) -> Self {
        Self::new(GKind::CosineTT, dim)
    }

    pub fn gauss_exp(dim: usize) -> Self {
        Self::new(GKind::GaussExp, dim)
    }

    /// `g(y) = y^2` in one dimension.
    pub fn squares() -> Self {
        Self::new(
            GKind::PowerVariation {
                r: T::lit(2.0),
                s: T::zero(),
            },
            1,
        )
    }

    pub fn supports_rho(&self) -> bool {
        true
    }

    /// Whether `rho_{g_a g_b}` is available for every pair of entries.
    pub fn supports_rho_pair(&self) -> bool {
        !matches!(self.kind, GKind::PowerVariation { .. }) || self.dim == 1
    }

    pub fn supports_inverse(&self) -> bool {
        !matches!(self.kind, GKind::PowerVariation { .. }) || self.dim == 1
    }

    /// Coefficients of the linear form `<a_ij, y>` behind the bounded kinds.
    fn form(&self, i: usize, j: usize) -> Vec<(usize, T)> {
        match (self.kind, i == j) {
            (GKind::CosineTT, true) => vec![(i, T::one())],
            (GKind::GaussExp, true) => vec![(i, T::lit(2.0))],
            _ => vec![(i, T::one()), (j, T::one())],
        }
    }

    /// Quadratic form `a^T x a` of entry `(i, j)`.
    fn quad(&self, x: &SymMatrix<T>, i: usize, j: usize) -> T {
        let a = self.form(i, j);
        let mut q = T::zero();
        for &(u, au) in &a {
            for &(v, av) in &a {
                q += au * av * x.get(u, v);
            }
        }
        q
    }

    fn cross_quad(&self, x: &SymMatrix<T>, a: (usize, usize), b: (usize, usize)) -> T {
        let fa = self.form(a.0, a.1);
        let fb = self.form(b.0, b.1);
        let mut q = T::zero();
        for &(u, au) in &fa {
            for &(v, bv) in &fb {
                q += au * bv * x.get(u, v);
            }
        }
        q
    }

    /// Writes the packed upper triangle of `g(y)` into `out`.
    #[inline]
    pub fn eval_packed_into(&self, y: &[T], out: &mut [T]) {
        let d = self.dim;
        let mut k = 0;
        match self.kind {
            GKind::PowerVariation { r, s } => {
                for i in 0..d {
                    for j in i..d {
                        out[k] = if i == j {
                            y[i].abs().powf(r + s)
                        } else {
                            y[i].abs().powf(r) * y[j].abs().powf(s)
                        };
                        k += 1;
                    }
                }
            }
            GKind::CosineTT => {
                for i in 0..d {
                    for j in i..d {
                        out[k] = if i == j {
                            y[i].cos()
                        } else {
                            (y[i] + y[j]).cos()
                        };
                        k += 1;
                    }
                }
            }
            GKind::GaussExp => {
                let half = T::lit(0.5);
                for i in 0..d {
                    for j in i..d {
                        let u = if i == j {
                            T::lit(2.0) * y[i]
                        } else {
                            y[i] + y[j]
                        };
                        out[k] = (-half * u * u).exp();
                        k += 1;
                    }
                }
            }
        }
    }

    pub fn eval(&self, y: &[T]) -> SymMatrix<T> {
        let mut out = vec![T::zero(); packed_len(self.dim)];
        self.eval_packed_into(y, &mut out);
        SymMatrix::from_packed(self.dim, out).expect("packed length")
    }

    /// `rho_g(x) = E[g(U)]`, `U ~ N(0, x)`.
    pub fn rho(&self, x: &SymMatrix<T>) -> Result<SymMatrix<T>> {
        self.check_dim(x)?;
        let half = T::lit(0.5);
        let mut out = SymMatrix::zeros(self.dim);
        for (i, j) in upper_pairs(self.dim) {
            let v = match self.kind {
                GKind::CosineTT => (-half * self.quad(x, i, j)).exp(),
                GKind::GaussExp => (T::one() + self.quad(x, i, j)).sqrt().recip(),
                GKind::PowerVariation { r, s } => {
                    if i == j {
                        x.get(i, i).max(T::zero()).powf(half * (r + s)) * abs_moment(r + s)
                    } else {
                        let (xi, xj) = (x.get(i, i).max(T::zero()), x.get(j, j).max(T::zero()));
                        let corr = if xi > T::zero() && xj > T::zero() {
                            x.get(i, j) / (xi * xj).sqrt()
                        } else {
                            T::zero()
                        };
                        xi.powf(half * r) * xj.powf(half * s) * bivariate_abs_moment(r, s, corr)
                    }
                }
            };
            out.set(i, j, v);
        }
        Ok(out)
    }

    /// `rho_{g_a g_b}(x) = E[g_a(U) g_b(U)]` for packed entries `a`, `b`.
    pub fn rho_pair(&self, x: &SymMatrix<T>, a: (usize, usize), b: (usize, usize)) -> Result<T> {
        self.check_dim(x)?;
        let half = T::lit(0.5);
        match self.kind {
            GKind::CosineTT => {
                let qa = self.quad(x, a.0, a.1);
                let qb = self.quad(x, b.0, b.1);
                let qab = self.cross_quad(x, a, b);
                let plus = qa + qb + T::lit(2.0) * qab;
                let minus = qa + qb - T::lit(2.0) * qab;
                Ok(half * ((-half * plus).exp() + (-half * minus).exp()))
            }
            GKind::GaussExp => {
                let qa = self.quad(x, a.0, a.1);
                let qb = self.quad(x, b.0, b.1);
                let qab = self.cross_quad(x, a, b);
                let det = (T::one() + qa) * (T::one() + qb) - qab * qab;
                Ok(det.sqrt().recip())
            }
            GKind::PowerVariation { r, s } => {
                if self.dim != 1 {
                    return Err(Error::Unsupported(
                        "second moment map of multivariate power variation".into(),
                    ));
                }
                let p = r + s;
                Ok(x.get(0, 0).max(T::zero()).powf(p) * abs_moment(T::lit(2.0) * p))
            }
        }
    }

    /// Algebraic inverse of [`rho`](Self::rho).
    pub fn rho_inverse(&self, v: &SymMatrix<T>) -> Result<SymMatrix<T>> {
        self.check_dim(v)?;
        let d = self.dim;
        let upper = T::one() + T::lit(INVERSE_UPPER_SLACK);
        let out_of_domain = |i: usize, j: usize, val: T| Error::OutOfDomain {
            row: i,
            col: j,
            value: val.as_f64(),
        };
        if let GKind::PowerVariation { r, s } = self.kind {
            if d != 1 {
                return Err(Error::Unsupported(
                    "inverse of multivariate power variation map".into(),
                ));
            }
            let val = v.get(0, 0);
            if !(val >= T::zero()) {
                return Err(out_of_domain(0, 0, val));
            }
            let p = r + s;
            return Ok(SymMatrix::from_diag(&[
                (val / abs_moment(p)).powf(T::lit(2.0) / p)
            ]));
        }
        let mut q = SymMatrix::zeros(d);
        for (i, j) in upper_pairs(d) {
            let val = v.get(i, j);
            if !(val > T::zero()) || val > upper {
                return Err(out_of_domain(i, j, val));
            }
            let qij = match self.kind {
                GKind::CosineTT => -T::lit(2.0) * val.ln(),
                _ => (val * val).recip() - T::one(),
            };
            q.set(i, j, qij);
        }
        let diag_scale = match self.kind {
            GKind::GaussExp => T::lit(0.25),
            _ => T::one(),
        };
        let mut x = SymMatrix::zeros(d);
        for i in 0..d {
            x.set(i, i, q.get(i, i) * diag_scale);
        }
        let half = T::lit(0.5);
        for i in 0..d {
            for j in (i + 1)..d {
                x.set(i, j, half * (q.get(i, j) - x.get(i, i) - x.get(j, j)));
            }
        }
        Ok(x)
    }

    /// Asymptotic covariance of the standardized spot error of `rho_hat` at `x`,
    /// `(2/3)(rho_{g_a g_b} - rho_a rho_b)`, indexed by packed entries.
    pub fn spot_rho_covariance(&self, x: &SymMatrix<T>) -> Result<SymMatrix<T>> {
        let rho = self.rho(x)?;
        let pairs = upper_pairs(self.dim);
        let mut out = SymMatrix::zeros(pairs.len());
        let two_thirds = T::lit(2.0 / 3.0);
        for (ai, &a) in pairs.iter().enumerate() {
            for (bi, &b) in pairs.iter().enumerate().skip(ai) {
                let c = self.rho_pair(x, a, b)? - rho.get(a.0, a.1) * rho.get(b.0, b.1);
                out.set(ai, bi, two_thirds * c);
            }
        }
        Ok(out)
    }

    /// Jacobian `d rho_a / d x_b` over packed entries (symmetric perturbations).
    pub fn rho_jacobian(&self, x: &SymMatrix<T>) -> Result<Vec<Vec<T>>> {
        let pairs = upper_pairs(self.dim);
        let half = T::lit(0.5);
        let mut jac = vec![vec![T::zero(); pairs.len()]; pairs.len()];
        for (ai, &(i, j)) in pairs.iter().enumerate() {
            match self.kind {
                GKind::PowerVariation { r, s } => {
                    if self.dim != 1 {
                        return Err(Error::Unsupported(
                            "jacobian of multivariate power variation map".into(),
                        ));
                    }
                    let p = r + s;
                    jac[0][0] = abs_moment(p) * half * p * x.get(0, 0).powf(half * p - T::one());
                }
                _ => {
                    let q = self.quad(x, i, j);
                    let dpsi = match self.kind {
                        GKind::CosineTT => -half * (-half * q).exp(),
                        _ => -half * (T::one() + q).powf(-T::lit(1.5)),
                    };
                    let form = self.form(i, j);
                    for (bi, &(k, l)) in pairs.iter().enumerate() {
                        let ak = form.iter().find(|f| f.0 == k).map_or(T::zero(), |f| f.1);
                        let al = form.iter().find(|f| f.0 == l).map_or(T::zero(), |f| f.1);
                        let mult = if k == l { T::one() } else { T::lit(2.0) };
                        jac[ai][bi] = dpsi * mult * ak * al;
                    }
                }
            }
        }
        Ok(jac)
    }

    fn check_dim(&self, x: &SymMatrix<T>) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "g has dimension {}, matrix has {}",
                self.dim,
                x.dim()
            )));
        }
        Ok(())
    }
}

/// Estimated Fourier coefficients `V(k)`, `k = -N..=N`, of a symmetric-matrix-valued path.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients<T> {
    modes: usize,
    horizon: T,
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> FourierCoefficients<T> {
    /// `data` holds the packed upper triangle of each mode, ordered `k = -N..=N`.
    pub fn new(modes: usize, horizon: T, dim: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != (2 * modes + 1) * packed_len(dim) {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coefficients, got {}",
                (2 * modes + 1) * packed_len(dim),
                data.len()
            )));
        }
        Ok(Self {
            modes,
            horizon,
            dim,
            data,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Packed coefficients of mode `k`.
    pub fn mode(&self, k: isize) -> &[Complex<T>] {
        let p = packed_len(self.dim);
        let idx = (k + self.modes as isize) as usize;
        &self.data[idx * p..(idx + 1) * p]
    }

    pub fn get(&self, k: isize, i: usize, j: usize) -> Complex<T> {
        self.mode(k)[crate::linalg::packed_index(self.dim, i, j)]
    }
}

/// Estimates `V(Y, g, k)` for `k = -N..=N` from the increments of `y`.
///
/// Non-negative modes are summed over `m = 1..=floor(nT)` in ascending order
/// with compensated accumulation; negative modes are their conjugates.
pub fn fourier_coefficients<T: Scalar>(
    y: &SampledPath<T>,
    spec: &GFunctionSpec<T>,
    modes: usize,
) -> Result<FourierCoefficients<T>> {
    if y.dim() != spec.dim {
        return Err(Error::DimensionMismatch(format!(
            "path dimension {} but g dimension {}",
            y.dim(),
            spec.dim
        )));
    }
    if y.len() < 2 {
        return Err(Error::EmptyPath);
    }
    let grid = y.grid();
    let increments = grid.increments();
    if modes > increments {
        return Err(Error::ModeCountTooLarge { modes, increments });
    }
    let d = spec.dim;
    let p = packed_len(d);
    let n = T::count(grid.n() as usize);
    let sqrt_n = n.sqrt();

    let mut gvals = vec![T::zero(); increments * p];
    let mut inc = vec![T::zero(); d];
    for m in 1..=increments {
        y.increment_into(m, &mut inc);
        inc.iter_mut().for_each(|v| *v *= sqrt_n);
        spec.eval_packed_into(&inc, &mut gvals[(m - 1) * p..m * p]);
    }

    // exact twiddles when the grid wraps the period exactly
    let table: Option<Vec<(T, T)>> = grid.is_whole().then(|| {
        (0..increments)
            .map(|j| {
                let (s, c) = (T::TAU() * T::count(j) / T::count(increments)).sin_cos();
                (c, s)
            })
            .collect()
    });
    let omega = T::TAU() / grid.horizon();

    let inv_n = n.recip();
    let mut positive = Vec::with_capacity((modes + 1) * p);
    let mut re = vec![CompensatedSum::<T>::new(); p];
    let mut im = vec![CompensatedSum::<T>::new(); p];
    for k in 0..=modes {
        re.iter_mut().for_each(|s| *s = CompensatedSum::new());
        im.iter_mut().for_each(|s| *s = CompensatedSum::new());
        let mut idx = 0usize;
        for m in 0..increments {
            let (c, s) = match &table {
                Some(tab) => tab[idx],
                None => {
                    let (s, c) = (omega * T::count(k) * grid.time(m)).sin_cos();
                    (c, s)
                }
            };
            let g = &gvals[m * p..(m + 1) * p];
            for e in 0..p {
                re[e].add(c * g[e]);
                im[e].add(-s * g[e]);
            }
            idx += k;
            while idx >= increments {
                idx -= increments;
            }
        }
        for e in 0..p {
            positive.push(Complex::new(re[e].value() * inv_n, im[e].value() * inv_n));
        }
    }

    let mut data = Vec::with_capacity((2 * modes + 1) * p);
    for k in (1..=modes).rev() {
        data.extend(positive[k * p..(k + 1) * p].iter().map(|c| c.conj()));
    }
    data.extend_from_slice(&positive);
    FourierCoefficients::new(modes, grid.horizon(), d, data)
}

/// Féjer kernel with weights `1 - |k|/N`: `(1/N) sin^2(N x / 2) / sin^2(x / 2)`, and `N` at `x = 0 mod 2 pi`.
pub fn fejer_kernel<T: Scalar>(x: T, modes: usize) -> T {
    let nf = T::count(modes);
    let reduced = x - T::TAU() * (x / T::TAU()).round();
    if reduced.abs() <= T::lit(1e-12) {
        return nf;
    }
    let half = T::lit(0.5);
    let num = (half * nf * reduced).sin();
    let den = (half * reduced).sin();
    num * num / (nf * den * den)
}

/// Numerical checks of the Féjer kernel identities on `[-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelIdentities {
    pub modes: usize,
    /// `integral F_N`, exactly `2 pi`.
    pub integral: f64,
    /// `(1/N) integral F_N^2`, exactly `2 pi (2N^2 + 1) / (3 N^2)`.
    pub normalized_square: f64,
    pub normalized_square_exact: f64,
    /// `max_j |F_N(2 pi j / N)|` over `j = 1..N-1`.
    pub max_at_zeros: f64,
}

/// Integrates `F_N` and `F_N^2` piecewise between consecutive kernel zeros.
pub fn fejer_identities(modes: usize) -> Result<KernelIdentities> {
    use std::f64::consts::{PI, TAU};
    if modes == 0 {
        return Err(Error::InvalidParams("kernel needs N >= 1".into()));
    }
    let nf = modes as f64;
    let step = TAU / nf;
    let mut integral = 0.0;
    let mut square = 0.0;
    for j in 0..modes {
        let (a, b) = (-PI + step * j as f64, -PI + step * (j + 1) as f64);
        integral += crate::quadrature::integrate(|x| fejer_kernel(x, modes), a, b, 1e-14)?;
        square += crate::quadrature::integrate(|x| fejer_kernel(x, modes).powi(2), a, b, 1e-13)?;
    }
    let max_at_zeros = (1..modes)
        .map(|j| fejer_kernel(TAU * j as f64 / nf, modes).abs())
        .fold(0.0, f64::max);
    Ok(KernelIdentities {
        modes,
        integral,
        normalized_square: square / nf,
        normalized_square_exact: TAU * (2.0 * nf * nf + 1.0) / (3.0 * nf * nf),
        max_at_zeros,
    })
}

/// Evaluation grid `t_j = j T / (2N)`, `j = 0..=2N`.
pub fn fejer_eval_times<T: Scalar>(modes: usize, horizon: T) -> Vec<T> {
    let denom = T::count(2 * modes);
    (0..=2 * modes)
        .map(|j| T::count(j) * horizon / denom)
        .collect()
}

/// Féjer sum `(1/T) sum_k (1 - |k|/N) exp(i 2 pi k t / T) V(k)` at each time.
pub fn fejer_reconstruct<T: Scalar>(
    coeffs: &FourierCoefficients<T>,
    eval_times: &[T],
) -> Result<SymMatrixPath<T>> {
    let horizon = coeffs.horizon();
    let modes = coeffs.modes();
    let d = coeffs.dim();
    let p = packed_len(d);
    let nf = T::count(modes.max(1));
    let omega = T::TAU() / horizon;
    let inv_t = horizon.recip();
    let mut values = Vec::with_capacity(eval_times.len());
    for &t in eval_times {
        if t < T::zero() || t > horizon {
            return Err(Error::InvalidParams(format!(
                "evaluation time {t} outside [0, {horizon}]"
            )));
        }
        let mut acc = vec![Complex::new(T::zero(), T::zero()); p];
        for k in -(modes as isize)..=(modes as isize) {
            let weight = T::one() - T::count(k.unsigned_abs()) / nf;
            if weight <= T::zero() {
                continue;
            }
            let (s, c) = (omega * T::lit(k as f64) * t).sin_cos();
            let phase = Complex::new(c * weight, s * weight);
            for (a, v) in acc.iter_mut().zip(coeffs.mode(k)) {
                *a = *a + phase * *v;
            }
        }
        let mut packed = Vec::with_capacity(p);
        for a in acc {
            let (re, im) = (a.re * inv_t, a.im * inv_t);
            if im.abs() > T::lit(IMAGINARY_REL_TOL) * re.abs() + T::lit(IMAGINARY_ABS_TOL) {
                return Err(Error::ImaginaryResidue {
                    time: t.as_f64(),
                    residue: im.as_f64(),
                });
            }
            packed.push(re);
        }
        values.push(SymMatrix::from_packed(d, packed)?);
    }
    SymMatrixPath::new(eval_times.to_vec(), values)
}

/// What to do with reconstructed moment values outside the invertible domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClampPolicy<T> {
    Error,
    /// Non-positive entries become `eps`; entries of the bounded maps above one become one.
    ClampToEps(T),
}

impl<T: Scalar> Default for ClampPolicy<T> {
    fn default() -> Self {
        ClampPolicy::ClampToEps(T::lit(1e-10))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpotEstimate<T> {
    /// Reconstructed `rho_g(X)`.
    pub rho_path: SymMatrixPath<T>,
    /// `rho_g^{-1}` applied pointwise.
    pub x_path: SymMatrixPath<T>,
    /// Number of clamped points per evaluation time.
    pub clamped: Vec<usize>,
    pub clamp_count: usize,
}

impl<T: Scalar> SpotEstimate<T> {
    pub fn eval_times(&self) -> &[T] {
        self.x_path.times()
    }
}

/// Clamps entries of a reconstructed moment matrix into the domain of `rho_g^{-1}`.
fn clamp_into_domain<T: Scalar>(spec: &GFunctionSpec<T>, v: &mut SymMatrix<T>, eps: T) -> usize {
    let bounded = !matches!(spec.kind, GKind::PowerVariation { .. });
    let mut count = 0;
    for e in v.packed_mut() {
        if bounded {
            if *e <= T::zero() {
                *e = eps;
                count += 1;
            } else if *e > T::one() {
                *e = T::one();
                count += 1;
            }
        } else if *e < T::zero() {
            *e = eps;
            count += 1;
        }
    }
    count
}

/// Inverts a reconstructed `rho_g` path pointwise under `policy`.
pub fn invert_rho_path<T: Scalar>(
    spec: &GFunctionSpec<T>,
    rho_path: &SymMatrixPath<T>,
    policy: ClampPolicy<T>,
) -> Result<(SymMatrixPath<T>, Vec<usize>)> {
    let mut values = Vec::with_capacity(rho_path.len());
    let mut clamped = Vec::with_capacity(rho_path.len());
    for v in rho_path.values() {
        let (x, c) = match policy {
            ClampPolicy::Error => (spec.rho_inverse(v)?, 0),
            ClampPolicy::ClampToEps(eps) => {
                let mut w = v.clone();
                let c = clamp_into_domain(spec, &mut w, eps);
                (spec.rho_inverse(&w)?, c)
            }
        };
        values.push(x);
        clamped.push(c);
    }
    Ok((
        SymMatrixPath::new(rho_path.times().to_vec(), values)?,
        clamped,
    ))
}

/// Full spot pipeline: coefficients, Féjer reconstruction on `t_j = jT/(2N)`, inversion.
pub fn estimate_spot_covariance<T: Scalar>(
    y: &SampledPath<T>,
    spec: &GFunctionSpec<T>,
    modes: usize,
    policy: ClampPolicy<T>,
) -> Result<SpotEstimate<T>> {
    if !spec.supports_inverse() {
        return Err(Error::Unsupported(format!(
            "{:?} has no closed-form inverse",
            spec.kind
        )));
    }
    let coeffs = fourier_coefficients(y, spec, modes)?;
    spot_from_coefficients(
        &coeffs,
        spec,
        &fejer_eval_times(modes, coeffs.horizon()),
        policy,
    )
}

/// Reconstruction and inversion at arbitrary times from precomputed coefficients.
pub fn spot_from_coefficients<T: Scalar>(
    coeffs: &FourierCoefficients<T>,
    spec: &GFunctionSpec<T>,
    eval_times: &[T],
    policy: ClampPolicy<T>,
) -> Result<SpotEstimate<T>> {
    let rho_path = fejer_reconstruct(coeffs, eval_times)?;
    let (x_path, clamped) = invert_rho_path(spec, &rho_path, policy)?;
    let clamp_count = clamped.iter().sum();
    Ok(SpotEstimate {
        rho_path,
        x_path,
        clamped,
        clamp_count,
    })
}

/// `N = round((n / K)^(1/gamma))`, at least one and at most `max_modes`.
pub fn select_mode_count(n: u64, gamma: f64, k: f64, max_modes: usize) -> Result<usize> {
    if !(gamma > 1.0) || !(k > 0.0) || !gamma.is_finite() || !k.is_finite() {
        return Err(Error::InvalidRate { gamma, k });
    }
    let raw = (n as f64 / k).powf(1.0 / gamma).round() as usize;
    Ok(raw.max(1).min(max_modes.max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TimeGrid;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_identities_match_coefficient_sums() {
        for n in [1usize, 2, 5, 10, 37] {
            let id = fejer_identities(n).unwrap();
            let parseval: f64 = (-(n as i64) + 1..n as i64)
                .map(|k| (1.0 - k.unsigned_abs() as f64 / n as f64).powi(2))
                .sum::<f64>()
                * std::f64::consts::TAU
                / n as f64;
            assert_relative_eq!(id.integral, std::f64::consts::TAU, max_relative = 1e-12);
            assert_relative_eq!(id.normalized_square, parseval, max_relative = 1e-12);
            assert_relative_eq!(id.normalized_square_exact, parseval, max_relative = 1e-14);
            assert!(id.max_at_zeros < 1e-12, "{n}: {}", id.max_at_zeros);
        }
        assert!(fejer_identities(0).is_err());
    }

    fn x0() -> SymMatrix<f64> {
        SymMatrix::from_packed(2, vec![0.09, -0.036, 0.09]).unwrap()
    }

    #[test]
    fn eval_g_examples() {
        let ones = SymMatrix::filled(2, 1.0);
        assert_eq!(GFunctionSpec::<f64>::cosine(2).eval(&[0.0, 0.0]), ones);
        let pv = GFunctionSpec::new(GKind::PowerVariation { r: 1.0, s: 1.0 }, 2);
        assert_eq!(
            pv.eval(&[2.0, -3.0]),
            SymMatrix::from_packed(2, vec![4.0, 6.0, 9.0]).unwrap()
        );
        let ge = GFunctionSpec::<f64>::gauss_exp(2).eval(&[1.0, 0.0]);
        assert_relative_eq!(ge.get(0, 1), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(ge.get(0, 0), (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn rho_examples() {
        let cos = GFunctionSpec::<f64>::cosine(2);
        assert_eq!(
            cos.rho(&SymMatrix::zeros(2)).unwrap(),
            SymMatrix::filled(2, 1.0)
        );
        let r = cos.rho(&x0()).unwrap();
        assert_relative_eq!(r.get(0, 0), (-0.045f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(r.get(0, 1), (-0.054f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(r.get(0, 0), 0.955997, epsilon = 1e-6);
        assert_relative_eq!(r.get(0, 1), 0.947432, epsilon = 1e-6);
        let ge = GFunctionSpec::<f64>::gauss_exp(2)
            .rho(&SymMatrix::identity(2))
            .unwrap();
        assert_relative_eq!(ge.get(0, 1), 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(ge.get(0, 0), 1.0 / 5f64.sqrt(), epsilon = 1e-15);
        let sq = GFunctionSpec::<f64>::squares()
            .rho(&SymMatrix::from_diag(&[0.09]))
            .unwrap();
        assert_relative_eq!(sq.get(0, 0), 0.09, epsilon = 1e-15);
    }

    #[test]
    fn inverse_round_trips() {
        for spec in [GFunctionSpec::<f64>::cosine(2), GFunctionSpec::gauss_exp(2)] {
            let back = spec.rho_inverse(&spec.rho(&x0()).unwrap()).unwrap();
            assert!(back.sub(&x0()).frobenius() < 1e-12);
        }
        let sq = GFunctionSpec::<f64>::squares();
        let back = sq
            .rho_inverse(&sq.rho(&SymMatrix::from_diag(&[0.3])).unwrap())
            .unwrap();
        assert_relative_eq!(back.get(0, 0), 0.3, epsilon = 1e-15);
        let cos = GFunctionSpec::<f64>::cosine(2);
        assert_eq!(
            cos.rho_inverse(&SymMatrix::filled(2, 1.0)).unwrap(),
            SymMatrix::zeros(2)
        );
    }

    #[test]
    fn inverse_domain_errors() {
        let cos = GFunctionSpec::<f64>::cosine(2);
        let mut v = SymMatrix::filled(2, 0.9);
        v.set(0, 0, 0.0);
        assert!(matches!(
            cos.rho_inverse(&v),
            Err(Error::OutOfDomain { row: 0, col: 0, .. })
        ));
        v.set(0, 0, 1.1);
        assert!(matches!(
            cos.rho_inverse(&v),
            Err(Error::OutOfDomain { .. })
        ));
        let pv = GFunctionSpec::new(GKind::PowerVariation { r: 1.0, s: 1.0 }, 2);
        assert!(matches!(pv.rho_inverse(&v), Err(Error::Unsupported(_))));
    }

    #[test]
    fn cosine_second_moment_oracle() {
        // E cos^2(a U) = (1 + exp(-2 a^2)) / 2
        let cos = GFunctionSpec::<f64>::cosine(1);
        let x = SymMatrix::from_diag(&[0.09]);
        let v = cos.rho_pair(&x, (0, 0), (0, 0)).unwrap();
        assert_relative_eq!(v, 0.5 * (1.0 + (-0.18f64).exp()), epsilon = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for spec in [GFunctionSpec::<f64>::cosine(2), GFunctionSpec::gauss_exp(2)] {
            let jac = spec.rho_jacobian(&x0()).unwrap();
            let h = 1e-6;
            for (b, &(k, l)) in upper_pairs(2).iter().enumerate() {
                let mut up = x0();
                up.set(k, l, up.get(k, l) + h);
                let mut dn = x0();
                dn.set(k, l, dn.get(k, l) - h);
                let (ru, rd) = (spec.rho(&up).unwrap(), spec.rho(&dn).unwrap());
                for (a, &(i, j)) in upper_pairs(2).iter().enumerate() {
                    let fd = (ru.get(i, j) - rd.get(i, j)) / (2.0 * h);
                    assert_relative_eq!(jac[a][b], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn constant_path_coefficients() {
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let y = SampledPath::new(grid, 1, vec![0.0; 11]).unwrap();
        let c = fourier_coefficients(&y, &GFunctionSpec::cosine(1), 3).unwrap();
        assert_eq!(c.get(0, 0, 0), Complex::new(1.0, 0.0));
        for k in [-3isize, -2, -1, 1, 2, 3] {
            assert!(
                c.get(k, 0, 0).norm() < 1e-15,
                "mode {k}: {}",
                c.get(k, 0, 0)
            );
        }
    }

    #[test]
    fn linear_path_has_vanishing_quadratic_variation() {
        let cst = 2.0;
        for n in [100u64, 1000] {
            let grid = TimeGrid::new(n, 1.0).unwrap();
            let y = SampledPath::new(
                grid,
                1,
                (0..=n).map(|m| cst * m as f64 / n as f64).collect(),
            )
            .unwrap();
            let c = fourier_coefficients(&y, &GFunctionSpec::squares(), 2).unwrap();
            assert_relative_eq!(
                c.get(0, 0, 0).re,
                cst * cst / n as f64,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn mode_count_guard() {
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let y = SampledPath::new(grid, 1, vec![0.0; 11]).unwrap();
        assert_eq!(
            fourier_coefficients(&y, &GFunctionSpec::cosine(1), 11).unwrap_err(),
            Error::ModeCountTooLarge {
                modes: 11,
                increments: 10
            }
        );
    }

    #[test]
    fn non_whole_grid_uses_direct_phases() {
        let grid = TimeGrid::new(10, 1.05).unwrap();
        let y =
            SampledPath::new(grid, 1, (0..=10).map(|m| (m as f64).sin() * 0.1).collect()).unwrap();
        let c = fourier_coefficients(&y, &GFunctionSpec::squares(), 2).unwrap();
        let mut expect = Complex::new(0.0, 0.0);
        for m in 1..=10 {
            let dy = (y.row(m)[0] - y.row(m - 1)[0]) * 10f64.sqrt();
            let t = (m - 1) as f64 / 10.0;
            expect +=
                Complex::from_polar(1.0, -std::f64::consts::TAU * 2.0 * t / 1.05) * dy * dy / 10.0;
        }
        assert!((c.get(2, 0, 0) - expect).norm() < 1e-14);
    }

    #[test]
    fn kernel_values() {
        assert_eq!(fejer_kernel(0.0f64, 4), 4.0);
        assert_eq!(fejer_kernel(std::f64::consts::TAU, 4), 4.0);
        for j in 1..4 {
            assert!(fejer_kernel(std::f64::consts::TAU * j as f64 / 4.0, 4).abs() < 1e-12);
        }
        // closed form equals the weighted cosine sum
        for &x in &[0.1, 1.3, -2.2, 3.0] {
            let n = 7;
            let direct: f64 = (-(n as i32) + 1..n as i32)
                .map(|k| (1.0 - (k.abs() as f64) / n as f64) * (k as f64 * x).cos())
                .sum();
            assert_relative_eq!(fejer_kernel(x, n), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn dc_only_spectrum_reconstructs_constant() {
        let modes = 5;
        let p = 3;
        let c = SymMatrix::from_packed(2, vec![0.7, 0.2, 0.5]).unwrap();
        let t = 2.0;
        let mut data = vec![Complex::new(0.0, 0.0); (2 * modes + 1) * p];
        for e in 0..p {
            data[modes * p + e] = Complex::new(t * c.packed()[e], 0.0);
        }
        let coeffs = FourierCoefficients::new(modes, t, 2, data).unwrap();
        let path = fejer_reconstruct(&coeffs, &fejer_eval_times(modes, t)).unwrap();
        assert_eq!(path.len(), 11);
        for v in path.values() {
            assert!(v.sub(&c).frobenius() < 1e-15);
        }
    }

    #[test]
    fn fejer_damps_first_mode() {
        let (a, b, modes) = (0.4, 0.1, 10usize);
        let mut data = vec![Complex::new(0.0, 0.0); 2 * modes + 1];
        data[modes] = Complex::new(a, 0.0);
        data[modes + 1] = Complex::new(b / 2.0, 0.0);
        data[modes - 1] = Complex::new(b / 2.0, 0.0);
        let coeffs = FourierCoefficients::new(modes, 1.0, 1, data).unwrap();
        let times = fejer_eval_times(modes, 1.0);
        let path = fejer_reconstruct(&coeffs, &times).unwrap();
        for (t, v) in times.iter().zip(path.values()) {
            let expect = a + b * 0.9 * (std::f64::consts::TAU * t).cos();
            assert_relative_eq!(v.get(0, 0), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn broken_symmetry_is_reported() {
        let modes = 2;
        let mut data = vec![Complex::new(0.0, 0.0); 5];
        data[3] = Complex::new(0.0, 1.0);
        let coeffs = FourierCoefficients::new(modes, 1.0, 1, data).unwrap();
        assert!(matches!(
            fejer_reconstruct(&coeffs, &[0.1]),
            Err(Error::ImaginaryResidue { .. })
        ));
    }

    #[test]
    fn mode_count_selection() {
        assert_eq!(select_mode_count(127_750, 2.0, 3.0, 127_750).unwrap(), 206);
        assert_eq!(select_mode_count(100, 2.0, 1.0, 100).unwrap(), 10);
        assert!(matches!(
            select_mode_count(100, 1.0, 1.0, 100),
            Err(Error::InvalidRate { .. })
        ));
        assert_eq!(select_mode_count(4, 1.5, 1e-9, 4).unwrap(), 4);
    }
}
