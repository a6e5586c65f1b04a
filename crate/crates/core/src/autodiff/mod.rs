//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records primitive applications in execution order; the
//! reverse pass walks it backwards once. [`Graph`] binds a tape to a
//! [`ParamStore`] so parameters can be looked up by name and their
//! gradients collected into a [`GradStore`]. Frozen parameters are bound
//! as constants, so they never receive a gradient.
//!
//! Only the primitives the landmark network needs exist; there is no
//! general broadcasting.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::{Array, Real};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use params::{GradStore, Graph, Param, ParamKind, ParamStore};
pub use tape::{BatchStats, Gradients, Tape, Var};
