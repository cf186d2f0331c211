//! Dense row-major arrays and the reverse-mode tape that differentiates them.

mod kernels;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// N-dimensional row-major array. All values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> TensorGrid<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("TensorGrid::new"));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], values: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    /// Construct without re-checking finiteness; callers must guarantee it.
    pub(crate) fn from_raw(shape: Vec<usize>, values: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable access for in-place updates; callers keep values finite.
    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Interprets the grid as `[C, H, W]`.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::Dimension(format!("expected [C,H,W], got {other:?}"))),
        }
    }

    /// Overwrites a single value; rejects non-finite input.
    pub fn set(&mut self, index: usize, value: T) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("TensorGrid::set"));
        }
        self.values[index] = value;
        Ok(())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.values)
    }

    /// Converts between precisions (rounding when narrowing).
    pub fn cast<U: Scalar>(&self) -> TensorGrid<U> {
        TensorGrid {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Channel slice `[c0, c1)` of a `[C,H,W]` grid.
    pub fn channels(&self, c0: usize, c1: usize) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        if c0 > c1 || c1 > c {
            return Err(Error::Dimension(format!("channel range {c0}..{c1} outside 0..{c}")));
        }
        Ok(Self::from_raw(vec![c1 - c0, h, w], self.values[c0 * h * w..c1 * h * w].to_vec()))
    }
}

#[cfg(test)]
mod tests;
