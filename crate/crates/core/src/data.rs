use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Binary observation pattern: `true` where the entry is observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    observed: DMatrix<bool>,
}

impl Mask {
    pub fn new(observed: DMatrix<bool>) -> Self {
        Self { observed }
    }

    /// Everything observed.
    pub fn full(p: usize, n: usize) -> Self {
        Self::new(DMatrix::from_element(p, n, true))
    }

    pub fn from_fn(p: usize, n: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        Self::new(DMatrix::from_fn(p, n, f))
    }

    /// Builds a mask from a 0/1 matrix; any other value is rejected.
    pub fn from_indicator(m: &DMatrix<f64>) -> Result<Self> {
        let mut out = DMatrix::from_element(m.nrows(), m.ncols(), false);
        for (dst, &v) in out.iter_mut().zip(m.iter()) {
            *dst = if v == 1.0 {
                true
            } else if v == 0.0 {
                false
            } else {
                return Err(crate::error::invalid("mask entries must be 0 or 1"));
            };
        }
        Ok(Self::new(out))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.observed.shape()
    }

    pub fn nrows(&self) -> usize {
        self.observed.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.observed.ncols()
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.observed[(i, j)] = observed;
    }

    pub fn as_matrix(&self) -> &DMatrix<bool> {
        &self.observed
    }

    /// 0/1 indicator matrix.
    pub fn to_indicator(&self) -> DMatrix<f64> {
        self.observed.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn count_missing(&self) -> usize {
        self.observed.len() - self.count_observed()
    }

    pub fn row_observed_count(&self, i: usize) -> usize {
        self.observed.row(i).iter().filter(|&&b| b).count()
    }

    pub fn col_observed_count(&self, j: usize) -> usize {
        self.observed.column(j).iter().filter(|&&b| b).count()
    }

    /// Ascending list of missing row indices in column `j`.
    pub fn missing_rows(&self, j: usize) -> Vec<usize> {
        (0..self.nrows()).filter(|&i| !self.is_observed(i, j)).collect()
    }

    /// Ascending list of observed row indices in column `j`.
    pub fn observed_rows(&self, j: usize) -> Vec<usize> {
        (0..self.nrows()).filter(|&i| self.is_observed(i, j)).collect()
    }
}

/// Observed/missing index split of one column, with the observed subvector.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSplit {
    pub observed_idx: Vec<usize>,
    pub missing_idx: Vec<usize>,
    pub x_o: DVector<f64>,
}

impl ColumnSplit {
    /// Split built from a full vector and an observation predicate.
    pub fn from_vector(x: &DVector<f64>, observed: impl Fn(usize) -> bool) -> Self {
        let (observed_idx, missing_idx): (Vec<usize>, Vec<usize>) =
            (0..x.len()).partition(|&i| observed(i));
        let x_o = DVector::from_iterator(observed_idx.len(), observed_idx.iter().map(|&i| x[i]));
        Self {
            observed_idx,
            missing_idx,
            x_o,
        }
    }

    pub fn dim(&self) -> usize {
        self.observed_idx.len() + self.missing_idx.len()
    }
}

/// A `p x n` real matrix with a binary observation mask.
///
/// Missing entries hold `NaN` in storage. They are never read: all access
/// goes through the mask, and [`IncompleteMatrix::value`] debug-asserts it.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteMatrix {
    values: DMatrix<f64>,
    mask: Mask,
}

impl IncompleteMatrix {
    /// Pairs values with a mask; masked positions are overwritten with `NaN`.
    pub fn new(mut values: DMatrix<f64>, mask: Mask) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Shape {
                expected: values.shape(),
                found: mask.shape(),
            });
        }
        if values.is_empty() {
            return Err(crate::error::invalid("matrix must have positive dimensions"));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !mask.is_observed(i, j) {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(Self { values, mask })
    }

    pub fn complete(values: DMatrix<f64>) -> Self {
        let (p, n) = values.shape();
        Self {
            values,
            mask: Mask::full(p, n),
        }
    }

    /// Builds from optional entries; `None` marks a missing value.
    pub fn from_options(p: usize, n: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Result<Self> {
        let mut mask = Mask::full(p, n);
        let values = DMatrix::from_fn(p, n, |i, j| match f(i, j) {
            Some(v) => v,
            None => {
                mask.set(i, j, false);
                f64::NAN
            }
        });
        Self::new(values, mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.is_observed(i, j)
    }

    /// Observed value at `(i, j)`. Reading a missing entry is a contract
    /// violation.
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.mask.is_observed(i, j), "read of missing entry ({i}, {j})");
        self.values[(i, j)]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask.is_observed(i, j).then(|| self.values[(i, j)])
    }

    /// Storage including the `NaN` sentinels, for serialization.
    pub fn raw_values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn count_missing(&self) -> usize {
        self.mask.count_missing()
    }

    pub fn split_column(&self, j: usize) -> Result<ColumnSplit> {
        if j >= self.ncols() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.ncols(),
            });
        }
        let (observed_idx, missing_idx): (Vec<usize>, Vec<usize>) =
            (0..self.nrows()).partition(|&i| self.is_observed(i, j));
        let x_o = DVector::from_iterator(
            observed_idx.len(),
            observed_idx.iter().map(|&i| self.value(i, j)),
        );
        Ok(ColumnSplit {
            observed_idx,
            missing_idx,
            x_o,
        })
    }

    /// Observed values of row `i` in column order.
    pub fn observed_row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols()).filter_map(|j| self.get(i, j)).collect()
    }

    /// Matrix equal to the observed data on observed entries and to `fill`
    /// elsewhere.
    pub fn pinned(&self, fill: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(fill.shape(), self.shape());
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| {
            if self.is_observed(i, j) {
                self.values[(i, j)]
            } else {
                fill[(i, j)]
            }
        })
    }

    /// Matrix with missing entries set to `v`.
    pub fn filled_with(&self, v: f64) -> DMatrix<f64> {
        self.values.map_with_location(|i, j, x| if self.is_observed(i, j) { x } else { v })
    }

    /// Observed row means. Errors on a fully missing row.
    pub fn row_means(&self) -> Result<DVector<f64>> {
        let mut means = DVector::zeros(self.nrows());
        for i in 0..self.nrows() {
            let row = self.observed_row(i);
            if row.is_empty() {
                return Err(Error::FullyMissingRow(i));
            }
            means[i] = row.iter().sum::<f64>() / row.len() as f64;
        }
        Ok(means)
    }
}
