//! Boxes as differentiable values and the parameterizations that produce
//! them from free parameters.
//!
//! A [`BoxTensor`] is a pair of tape nodes holding min and max coordinates.
//! The coordinate axis is always the last one; everything before it is the
//! box shape, so a `(batch, n)` pair of arrays is `batch` boxes in `n`
//! dimensions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::{Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Map from `θ ∈ R^{2n}` to `(z, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// `z = θ[..n]`, `Z = θ[n..]`. No ordering constraint.
    Raw,
    /// `Z = z + softplus(θ[n..])`; sides strictly positive.
    MinDelta,
    /// Boxes inside the unit cube via the logistic sigmoid.
    Sigmoid,
    /// Unit-cube boxes via tanh. A negative `θ[n..]` gives `Z < z`.
    Tanh,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [ParamKind::Raw, ParamKind::MinDelta, ParamKind::Sigmoid, ParamKind::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Raw => "raw",
            ParamKind::MinDelta => "min_delta",
            ParamKind::Sigmoid => "sigmoid",
            ParamKind::Tanh => "tanh",
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown parameterization `{s}`")))
    }
}

/// A tensor of boxes living on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxTensor {
    /// Min coordinates, shape `box_shape + (n,)`.
    pub min: Var,
    /// Max coordinates, same shape as `min`.
    pub max: Var,
}

impl BoxTensor {
    /// Wraps existing nodes; they must have identical, non-scalar shapes.
    pub fn new(tape: &Tape, min: Var, max: Var) -> Result<Self> {
        let (a, b) = (tape.shape(min), tape.shape(max));
        if a != b || a.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "box",
                lhs: a.clone(),
                rhs: b.clone(),
            });
        }
        Ok(Self { min, max })
    }

    /// Constant boxes from coordinate arrays of shape `box_shape + (n,)`.
    pub fn constant(tape: &mut Tape, min: Tensor, max: Tensor) -> Result<Self> {
        let (min, max) = (tape.constant(min), tape.constant(max));
        Self::new(tape, min, max)
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.min).last().unwrap_or(0)
    }

    pub fn box_shape(&self, tape: &Tape) -> Shape {
        tape.shape(self.min).leading()
    }

    pub fn num_boxes(&self, tape: &Tape) -> usize {
        self.box_shape(tape).numel()
    }

    pub fn min_values<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        tape.value(self.min).data()
    }

    pub fn max_values<'t>(&self, tape: &'t Tape) -> &'t [f64] {
        tape.value(self.max).data()
    }

    /// True when `Z_i >= z_i` everywhere. Only meaningful as a check for the
    /// kinds that do not guarantee it (Raw, Tanh).
    pub fn is_valid(&self, tape: &Tape) -> bool {
        self.min_values(tape)
            .iter()
            .zip(self.max_values(tape))
            .all(|(lo, hi)| hi >= lo)
    }

    /// `Z - z`.
    pub fn sides(&self, tape: &mut Tape) -> Result<Var> {
        tape.sub(self.max, self.min)
    }

    /// `(z + Z) / 2`.
    pub fn center(&self, tape: &mut Tape) -> Result<Var> {
        let s = tape.add(self.min, self.max)?;
        tape.scale(s, 0.5)
    }

    /// Reshapes the box shape; the coordinate axis is untouched.
    pub fn reshape(&self, tape: &mut Tape, target: &Shape) -> Result<Self> {
        let current = self.box_shape(tape);
        if current.numel() != target.numel() {
            return Err(Error::ShapeMismatch {
                op: "box_reshape",
                lhs: current,
                rhs: target.clone(),
            });
        }
        let full = target.with_last(self.dim(tape));
        Ok(Self {
            min: tape.reshape(self.min, full.clone())?,
            max: tape.reshape(self.max, full)?,
        })
    }

    /// Expands the box shape to `target` with trailing alignment.
    pub fn broadcast(&self, tape: &mut Tape, target: &Shape) -> Result<Self> {
        self.box_shape(tape).check_expands_to(target)?;
        let full = target.with_last(self.dim(tape));
        Ok(Self {
            min: tape.broadcast_to(self.min, full.clone())?,
            max: tape.broadcast_to(self.max, full)?,
        })
    }

    /// Box at flat position `i` of the box shape, as a `(n,)` box.
    pub fn select(&self, tape: &mut Tape, i: usize) -> Result<Self> {
        let n = self.dim(tape);
        let count = self.num_boxes(tape);
        let flat = Shape::new(vec![count, n]);
        let min = tape.reshape(self.min, flat.clone())?;
        let max = tape.reshape(self.max, flat)?;
        let min = tape.index_select(min, 0, vec![i])?;
        let max = tape.index_select(max, 0, vec![i])?;
        Ok(Self {
            min: tape.reshape(min, vec![n])?,
            max: tape.reshape(max, vec![n])?,
        })
    }
}

/// Turns parameters whose last axis has size `2n` into boxes of dimension `n`.
pub fn realize(tape: &mut Tape, kind: ParamKind, theta: Var) -> Result<BoxTensor> {
    let shape = tape.shape(theta).clone();
    let width = shape
        .last()
        .ok_or_else(|| Error::invalid("realize: parameters must have at least one axis"))?;
    if width % 2 != 0 {
        return Err(Error::invalid(format!("realize: last dimension of {shape} is odd")));
    }
    let n = width / 2;
    let axis = shape.rank() - 1;
    let first = tape.index_select(theta, axis, (0..n).collect())?;
    let second = tape.index_select(theta, axis, (n..2 * n).collect())?;
    let (min, max) = match kind {
        ParamKind::Raw => (first, second),
        ParamKind::MinDelta => {
            let side = tape.softplus(second)?;
            (first, tape.add(first, side)?)
        }
        ParamKind::Sigmoid => {
            let z = tape.sigmoid(first)?;
            let room = one_minus(tape, z)?;
            let frac = tape.sigmoid(second)?;
            let side = tape.mul(room, frac)?;
            (z, tape.add(z, side)?)
        }
        ParamKind::Tanh => {
            let t1 = tape.tanh(first)?;
            let shifted = tape.add_scalar(t1, 1.0)?;
            let z = tape.scale(shifted, 0.5)?;
            let room = one_minus(tape, z)?;
            let t2 = tape.tanh(second)?;
            let prod = tape.mul(room, t2)?;
            let side = tape.scale(prod, 0.5)?;
            (z, tape.add(z, side)?)
        }
    };
    Ok(BoxTensor { min, max })
}

fn one_minus(tape: &mut Tape, x: Var) -> Result<Var> {
    let neg = tape.neg(x)?;
    tape.add_scalar(neg, 1.0)
}
