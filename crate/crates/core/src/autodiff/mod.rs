//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records array-valued primitives eagerly; [`Tape::backward`]
//! sweeps it in reverse to produce adjoints for every differentiable leaf.
//! Dense layers are a single fused `Affine` node so an MLP forward pass costs
//! one node per layer rather than one per scalar multiply.

mod check;
mod params;
mod real;
mod tape;

pub use check::{grad_check, rel_error, GradCheckError, GradCheckReport};
pub use params::{ParamBlock, ParamKey, ParamRole, ParamVector};
pub use real::Real;
pub use tape::{Gradients, NodeId, OpKind, Tape, TapeError};
