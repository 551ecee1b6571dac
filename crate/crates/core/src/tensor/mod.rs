//! Dense row-major tensors of rank 1 to 4.
//!
//! Feature maps use the `H x W x C` layout, so the channel axis is contiguous.
//! Data lives behind an `Arc`, which makes clones cheap and lets tensors be
//! shared across threads without copying.

mod gft;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use gft::{decode_gft, encode_gft, read_gft, write_gft, GFT_MAGIC};

/// Element type of a tensor. `f32` is the production type; `f64` runs the
/// same kernels for gradient checking.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Arc<[T]>,
}

impl<T: Scalar> Tensor<T> {
    pub const MAX_RANK: usize = 4;

    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        validate_shape(shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "data length {} does not match shape {:?} (expected {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: data.into(),
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        validate_shape(shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n].into(),
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        validate_shape(shape)?;
        let n: usize = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        })
    }

    /// A rank-1 tensor holding `values`.
    pub fn vector(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        Self::new(&[n], values)
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value].into(),
        }
    }

    /// Constructor for kernels that already guarantee a consistent shape.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(!shape.is_empty() && shape.len() <= Self::MAX_RANK);
        Tensor {
            shape,
            data: data.into(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.to_vec()
    }

    /// Extents of a rank-3 `H x W x C` tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::shape(op, "rank", 3, self.rank())),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::InvalidTensor(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len()).unwrap()
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(other.data.iter())
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }

    /// Bitwise equality of shapes and values.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64_lossy().to_bits() == b.to_f64_lossy().to_bits())
    }

    pub fn dot(&self, other: &Tensor<T>) -> T {
        self.data.iter().zip(other.data.iter()).map(|(&a, &b)| a * b).sum()
    }
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > Tensor::<f32>::MAX_RANK {
        return Err(Error::InvalidTensor(format!(
            "rank {} outside 1..={}",
            shape.len(),
            Tensor::<f32>::MAX_RANK
        )));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::InvalidTensor(format!("extent of axis {axis} is zero")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::zeros(&[2, 0]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0f32; 3]).is_err());
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::new(&[2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn cast_round_trips_f32_through_f64() {
        let t = Tensor::new(&[3], vec![0.1f32, -2.5, 1e-7]).unwrap();
        assert!(t.cast::<f64>().cast::<f32>().bit_eq(&t));
    }
}
