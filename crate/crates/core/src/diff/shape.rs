use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a dense row-major array. An empty list is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Self(dims.into())
    }

    pub fn scalar() -> Self {
        Self(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.0.is_empty()
    }

    /// Last dimension, if any.
    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// All but the last dimension.
    pub fn leading(&self) -> Shape {
        match self.0.split_last() {
            Some((_, rest)) => Shape(rest.to_vec()),
            None => Shape::scalar(),
        }
    }

    /// This shape with `n` appended.
    pub fn with_last(&self, n: usize) -> Shape {
        let mut dims = self.0.clone();
        dims.push(n);
        Shape(dims)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Result shape of trailing-aligned broadcasting of `self` with `other`.
    pub fn broadcast_with(&self, other: &Shape, op: &'static str) -> Result<Shape> {
        let rank = self.rank().max(other.rank());
        let mut dims = vec![0; rank];
        for (k, slot) in dims.iter_mut().enumerate() {
            let a = dim_from_end(self, rank - 1 - k);
            let b = dim_from_end(other, rank - 1 - k);
            *slot = match (a, b) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: self.clone(),
                        rhs: other.clone(),
                    })
                }
            };
        }
        Ok(Shape(dims))
    }

    /// Checks that `self` can be expanded to `target`. On failure the error
    /// names the first conflicting target axis.
    pub fn check_expands_to(&self, target: &Shape) -> Result<()> {
        if self.rank() > target.rank() {
            return Err(Error::invalid(format!(
                "cannot broadcast {self} to lower-rank {target}"
            )));
        }
        let offset = target.rank() - self.rank();
        for (i, &d) in self.0.iter().enumerate() {
            let t = target.0[offset + i];
            if d != t && d != 1 {
                return Err(Error::invalid(format!(
                    "cannot broadcast {self} to {target}: axis {} has {d} vs {t}",
                    offset + i
                )));
            }
        }
        Ok(())
    }

    /// For each flat index of `out`, the flat index of `self` it reads under
    /// trailing-aligned broadcasting. `self` must expand to `out`.
    pub(crate) fn broadcast_index_map(&self, out: &Shape) -> Vec<usize> {
        let n = out.numel();
        if self == out {
            return (0..n).collect();
        }
        let offset = out.rank() - self.rank();
        let src_strides = self.strides();
        let mut eff = vec![0usize; out.rank()];
        for (i, &d) in self.0.iter().enumerate() {
            eff[offset + i] = if d == 1 { 0 } else { src_strides[i] };
        }
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; out.rank()];
        for _ in 0..n {
            map.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
            for k in (0..out.rank()).rev() {
                idx[k] += 1;
                if idx[k] < out.0[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        map
    }
}

fn dim_from_end(shape: &Shape, k_from_end: usize) -> usize {
    if k_from_end < shape.rank() {
        shape.0[shape.rank() - 1 - k_from_end]
    } else {
        1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        if self.0.len() == 1 {
            write!(f, ",")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    data: Vec<f64>,
    shape: Shape,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::invalid(format!(
                "{} values cannot fill shape {shape}",
                data.len()
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            data: vec![x],
            shape: Shape::scalar(),
        }
    }

    /// 1-d tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        let shape = Shape::new(vec![data.len()]);
        Self { data, shape }
    }

    pub fn full(shape: impl Into<Shape>, x: f64) -> Self {
        let shape = shape.into();
        Self {
            data: vec![x; shape.numel()],
            shape,
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub(crate) fn from_parts(data: Vec<f64>, shape: Shape) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Self { data, shape }
    }
}
