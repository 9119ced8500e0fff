//! Dense NHWC tensors with a tape-based reverse-mode differentiator.
//!
//! Feature maps are laid out as `(batch, height, width, channels)` where the
//! height axis runs over OFDM symbols and the width axis over subcarriers.
//! Parameters use their own shapes (`[K, K, C_in, C_out]` for dense kernels,
//! `[K, K, C_in, D_m]` for depthwise kernels, `[C]` for biases and norms).

pub mod gradcheck;
mod kernels;
mod optim;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use thiserror::Error;

pub use optim::{AdamW, AdamWConfig};
pub use tape::{Activation, Gradients, Tape, Var};

/// Floating point element type of a tensor.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass; reset it and re-run forward")]
    TapeConsumed,
    #[error("empty loss mask: no positions selected")]
    EmptyMask,
}

pub(crate) fn shape_err<S: Into<String>>(op: &'static str, detail: S) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn arg_err<S: Into<String>>(op: &'static str, detail: S) -> TensorError {
    TensorError::Argument {
        op,
        detail: detail.into(),
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "from_vec",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Uniform samples in `[-bound, bound)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Returns the single element of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Extents of a rank-4 feature map.
    pub fn dims4(&self) -> Option<[usize; 4]> {
        match self.shape[..] {
            [b, h, w, c] => Some([b, h, w, c]),
            _ => None,
        }
    }

    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

pub(crate) fn check_dims4<T: Real>(
    op: &'static str,
    t: &Tensor<T>,
) -> Result<[usize; 4], TensorError> {
    t.dims4().ok_or_else(|| {
        shape_err(
            op,
            format!(
                "expected (batch, height, width, channels), got {:?}",
                t.shape()
            ),
        )
    })
}

/// Channel permutation applied by a channel shuffle with `groups` groups.
///
/// Entry `i` of the result is the input channel that lands on output channel
/// `i`. Channels are viewed as a `(C/G, G)` grid, transposed to `(G, C/G)` and
/// flattened, so with `G = C/2` the two halves of the input are interleaved.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>, TensorError> {
    if groups == 0 || channels % groups != 0 {
        return Err(arg_err(
            "channel_shuffle",
            format!("groups {groups} must divide channel count {channels}"),
        ));
    }
    let per_group = channels / groups;
    let mut perm = vec![0; channels];
    for g in 0..groups {
        for j in 0..per_group {
            perm[g * per_group + j] = j * groups + g;
        }
    }
    Ok(perm)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_permutation_matches_hand_trace() {
        assert_eq!(shuffle_permutation(4, 2).unwrap(), vec![0, 2, 1, 3]);
        assert_eq!(
            shuffle_permutation(8, 4).unwrap(),
            vec![0, 4, 1, 5, 2, 6, 3, 7]
        );
    }

    #[test]
    fn shuffle_trivial_groups_are_identity() {
        for c in [1, 2, 6, 8, 128] {
            let id: Vec<usize> = (0..c).collect();
            assert_eq!(shuffle_permutation(c, 1).unwrap(), id);
            assert_eq!(shuffle_permutation(c, c).unwrap(), id);
        }
    }

    #[test]
    fn shuffle_rejects_non_divisor() {
        assert!(shuffle_permutation(6, 4).is_err());
        assert!(shuffle_permutation(6, 0).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.dims4(), Some([1, 1, 2, 2]));
        assert_eq!(t.channels(), 2);
    }
}
