//! Reverse-mode differentiation over dense f64 tensors.
//!
//! Forward passes record each primitive on a [`Tape`]; [`Tape::backward`]
//! sweeps the record in reverse and returns gradients for every leaf created
//! with `requires_grad`. Second-order quantities are obtained by central
//! differences of first-order gradients (see [`numeric`]), so the tape itself
//! only ever differentiates once.

pub mod numeric;
pub mod primitive;
pub mod tape;

pub use numeric::{finite_diff_grad, hessian_vector_product, FnObjective, Objective, DEFAULT_FD_STEP};
pub use primitive::{eval_primitive, Primitive};
pub use tape::{backward, Gradients, Tape, Var};
