//! Dense row-major `f32` tensors.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// A dense n-dimensional array of `f32` stored in row-major order.
///
/// Rank 0 is a scalar holding exactly one element. Every extent is positive.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let numel = checked_numel(&shape)?;
        if data.len() != numel {
            return Err(Error::shape(
                "tensor",
                format!(
                    "data length {} does not match shape {:?} ({} elements)",
                    data.len(),
                    shape,
                    numel
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let numel = checked_numel(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Self {
        let shape = shape.into();
        let numel = checked_numel(&shape).expect("invalid tensor shape");
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, low: f32, high: f32, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| rng.random_range(low..high))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1, "item() on a tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|v| v * factor)
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape("add", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f32 {
        self.sum() / self.data.len() as f32
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element, first occurrence on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Copies channel `index` of a `[C, ...]` tensor.
    pub fn channel(&self, index: usize) -> Result<Tensor> {
        let (&channels, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::shape("channel", "rank-0 tensor has no channels"))?;
        if index >= channels {
            return Err(Error::shape(
                "channel",
                format!("channel {index} out of range for extent {channels}"),
            ));
        }
        let stride: usize = rest.iter().product();
        Tensor::new(rest.to_vec(), self.data[index * stride..(index + 1) * stride].to_vec())
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, name: &str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::shape(
                op,
                format!("{name} must have rank {rank}, got shape {:?}", self.shape),
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    let mut numel: usize = 1;
    for &extent in shape {
        if extent == 0 {
            return Err(Error::shape("tensor", format!("zero extent in shape {shape:?}")));
        }
        numel = numel
            .checked_mul(extent)
            .ok_or_else(|| Error::ExtentOverflow(shape.iter().map(|&e| e as u64).collect()))?;
    }
    Ok(numel)
}
