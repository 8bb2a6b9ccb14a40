//! Dense row-major tensors, the differentiable kernels the network needs,
//! and a reverse-mode gradient tape.

mod gemm;
pub mod gradcheck;
pub mod kernels;
pub mod tape;

use std::fmt;

pub use gradcheck::{grad_check, Fragment};
pub use kernels::{Conv2dSpec, Padding};
pub use tape::{Gradients, Tape, Var};

/// Errors raised by tensor construction and the kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected} tensor, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} elements but {got} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} contains a zero dimension")]
    ZeroDimension(Vec<usize>),
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        op: &'static str,
        label: usize,
        classes: usize,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}

/// Scalar types a [`Tensor`] can hold. Kernels widen to `f64` internally.
pub trait Element: Copy + Send + Sync + PartialEq + PartialOrd + fmt::Debug + 'static {
    const ZERO: Self;
    const ONE: Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Rank-N array with row-major storage. Defaults to 32-bit floats; the
/// gradient checker instantiates it with `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::ZeroDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Panics if `shape` has a zero dimension.
    pub fn filled(shape: &[usize], value: T) -> Self {
        let len: usize = shape.iter().product();
        assert!(
            !shape.is_empty() && len > 0,
            "tensor shape {shape:?} must be non-empty"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, T::ONE)
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        assert!(!shape.is_empty() && len > 0);
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = T::from_f64(a.to_f64() + b.to_f64());
        }
    }

    /// Copies sample `index` of a batch (leading dimension) out as its own
    /// tensor with leading dimension 1.
    pub fn batch_item(&self, index: usize) -> Self {
        let n = self.shape[0];
        assert!(index < n, "batch index {index} out of range for {n}");
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Self {
            shape,
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::InvalidArgument {
            op: "stack",
            reason: "no tensors to stack".into(),
        })?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::InvalidArgument {
                    op: "stack",
                    reason: format!("shape {:?} differs from {:?}", t.shape, first.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Self::new(shape, data)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength {
                expected: 6,
                got: 5,
                ..
            })
        ));
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 0], vec![]),
            Err(TensorError::ZeroDimension(_))
        ));
    }

    #[test]
    fn stack_and_split() {
        let a = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 1, 2]);
        let s = s.reshape(vec![2, 2]).unwrap();
        assert_eq!(s.batch_item(1).data(), &[3.0, 4.0]);
    }
}
