//! Minimal define-by-run reverse-mode differentiation over dense `f64`
//! arrays.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar node sweeps the tape in reverse creation
//! order (which is a topological order) and accumulates vector-Jacobian
//! products into every node that requires a gradient.

mod gradcheck;
pub mod kernels;
mod shape;
mod tape;

pub use gradcheck::{grad_check, grad_components, ComponentCheck, GradCheckReport};
pub use shape::{Shape, Tensor};
pub use tape::{Attrs, Gradients, Primitive, Tape, Var};
