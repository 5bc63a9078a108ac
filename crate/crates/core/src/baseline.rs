//! Local realized-variance spot estimator and James–Stein shrinkage.

use crate::error::{Error, Result};
use crate::linalg::{SampledPath, SymMatrix, SymMatrixPath};
use crate::scalar::{CompensatedSum, Scalar};

/// Block-constant spot estimate; `values` are indexed by block start times `jT/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimate<T> {
    pub values: SymMatrixPath<T>,
    /// Increments per block (the last block also takes the remainder).
    pub block_size: usize,
    pub horizon: T,
}

impl<T: Scalar> LocalEstimate<T> {
    pub fn blocks(&self) -> usize {
        self.values.len()
    }

    /// Block value in force at time `t`.
    pub fn value_at(&self, t: T) -> &SymMatrix<T> {
        let n = self.blocks();
        let j = (t / self.horizon * T::count(n))
            .floor()
            .to_usize()
            .unwrap_or(0);
        &self.values.values()[j.min(n - 1)]
    }
}

/// `(N/T) sum_{m in block j} dY_m dY_m^T` for `N` consecutive blocks of increments.
pub fn local_spot_estimator<T: Scalar>(
    y: &SampledPath<T>,
    blocks: usize,
) -> Result<LocalEstimate<T>> {
    if y.len() < 2 {
        return Err(Error::EmptyPath);
    }
    let grid = y.grid();
    let increments = grid.increments();
    if blocks == 0 || blocks > increments {
        return Err(Error::BlockTooSmall { blocks, increments });
    }
    let d = y.dim();
    let block_size = increments / blocks;
    let horizon = grid.horizon();
    let scale = T::count(blocks) / horizon;
    let mut inc = vec![T::zero(); d];
    let mut times = Vec::with_capacity(blocks);
    let mut values = Vec::with_capacity(blocks);
    for j in 0..blocks {
        let start = j * block_size;
        let end = if j + 1 == blocks {
            increments
        } else {
            start + block_size
        };
        let mut sums = vec![CompensatedSum::<T>::new(); d * (d + 1) / 2];
        for m in start + 1..=end {
            y.increment_into(m, &mut inc);
            let mut k = 0;
            for a in 0..d {
                for b in a..d {
                    sums[k].add(inc[a] * inc[b]);
                    k += 1;
                }
            }
        }
        let packed = sums.iter().map(|s| s.value() * scale).collect();
        values.push(SymMatrix::from_packed(d, packed)?);
        times.push(T::count(j) * horizon / T::count(blocks));
    }
    Ok(LocalEstimate {
        values: SymMatrixPath::new(times, values)?,
        block_size,
        horizon,
    })
}

/// Shrinkage variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Shrinkage {
    /// The factor is used as computed, even when negative.
    #[default]
    Plain,
    /// The factor is floored at zero.
    PositivePart,
}

/// `mean + (1 - (M-2) noise_var / sum (x_i - mean)^2) (x - mean)`.
pub fn james_stein_shrink<T: Scalar>(spot: &[T], noise_var: T, mode: Shrinkage) -> Result<Vec<T>> {
    let m = spot.len();
    if m < 3 {
        return Err(Error::TooFewPoints(m));
    }
    if !(noise_var >= T::zero()) {
        return Err(Error::InvalidParams(format!(
            "noise variance {noise_var} must be nonnegative"
        )));
    }
    let mean = spot.iter().copied().collect::<CompensatedSum<T>>().value() / T::count(m);
    let ss = spot
        .iter()
        .map(|&x| (x - mean) * (x - mean))
        .collect::<CompensatedSum<T>>()
        .value();
    if ss == T::zero() || noise_var == T::zero() {
        return Ok(spot.to_vec());
    }
    let mut factor = T::one() - T::count(m - 2) * noise_var / ss;
    if mode == Shrinkage::PositivePart {
        factor = factor.max(T::zero());
    }
    Ok(spot.iter().map(|&x| mean + factor * (x - mean)).collect())
}

/// Plug-in noise variance `2 mean^2 N / (nT)` of a one-dimensional local estimate.
pub fn plug_in_noise_var<T: Scalar>(spot: &[T], blocks: usize, n: u64, horizon: T) -> T {
    let mean =
        spot.iter().copied().collect::<CompensatedSum<T>>().value() / T::count(spot.len().max(1));
    T::lit(2.0) * mean * mean * T::count(blocks) / (T::count(n as usize) * horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TimeGrid;
    use approx::assert_relative_eq;

    fn linear(n: u64, c: f64) -> SampledPath<f64> {
        let grid = TimeGrid::new(n, 1.0).unwrap();
        SampledPath::new(grid, 1, (0..=n).map(|m| c * m as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn single_block_of_deterministic_increments() {
        let est = local_spot_estimator(&linear(50, 3.0), 1).unwrap();
        assert_relative_eq!(
            est.values.values()[0].get(0, 0),
            9.0 / 50.0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn one_increment_per_block() {
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let y = SampledPath::new(grid, 1, vec![0.0, 0.5, 0.25, 1.25, 1.0]).unwrap();
        let est = local_spot_estimator(&y, 4).unwrap();
        let expect = [0.25, 0.0625, 1.0, 0.0625];
        for (v, e) in est.values.values().iter().zip(expect) {
            assert_relative_eq!(v.get(0, 0), 4.0 * e, max_relative = 1e-15);
        }
        assert_eq!(est.values.times(), &[0.0, 0.25, 0.5, 0.75]);
        assert!(matches!(
            local_spot_estimator(&y, 5),
            Err(Error::BlockTooSmall { .. })
        ));
    }

    #[test]
    fn remainder_goes_to_last_block() {
        let grid = TimeGrid::new(7, 1.0).unwrap();
        let y = SampledPath::new(grid, 1, (0..=7).map(|m| m as f64).collect()).unwrap();
        let est = local_spot_estimator(&y, 3).unwrap();
        assert_eq!(est.block_size, 2);
        let vals: Vec<f64> = est.values.values().iter().map(|v| v.get(0, 0)).collect();
        assert_eq!(vals, vec![6.0, 6.0, 9.0]);
        assert_eq!(est.value_at(0.99).get(0, 0), 9.0);
        assert_eq!(est.value_at(1.0).get(0, 0), 9.0);
    }

    #[test]
    fn bivariate_blocks_hold_outer_products() {
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let y = SampledPath::new(grid, 2, vec![0.0, 0.0, 1.0, 2.0, 0.0, 3.0]).unwrap();
        let est = local_spot_estimator(&y, 1).unwrap();
        let v = &est.values.values()[0];
        assert_eq!(v.packed(), &[2.0, 1.0, 5.0]);
    }

    #[test]
    fn shrinkage_edge_cases() {
        let flat = vec![0.3; 5];
        assert_eq!(
            james_stein_shrink(&flat, 1.0, Shrinkage::Plain).unwrap(),
            flat
        );
        let x = vec![0.1, 0.4, 0.2, 0.9];
        assert_eq!(james_stein_shrink(&x, 0.0, Shrinkage::Plain).unwrap(), x);
        assert_eq!(
            james_stein_shrink(&x[..2], 0.1, Shrinkage::Plain).unwrap_err(),
            Error::TooFewPoints(2)
        );
    }

    #[test]
    fn shrinkage_factor_and_mean() {
        let x = vec![1.0, 2.0, 3.0, 6.0];
        // mean 3, ss = 4 + 1 + 0 + 9 = 14, factor = 1 - 2 * 3.5 / 14 = 0.5
        let out = james_stein_shrink(&x, 3.5, Shrinkage::Plain).unwrap();
        assert_eq!(out, vec![2.0, 2.5, 3.0, 4.5]);
        let out = james_stein_shrink(&x, 14.0, Shrinkage::Plain).unwrap();
        assert_eq!(out, vec![5.0, 4.0, 3.0, 0.0]);
        let out = james_stein_shrink(&x, 14.0, Shrinkage::PositivePart).unwrap();
        assert_eq!(out, vec![3.0; 4]);
    }
}
