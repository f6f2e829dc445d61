//! Reverse-mode differentiation over the primitive op set and the central
//! finite-difference checker that serves as its oracle.

mod check;
mod tape;

pub use check::{grad_check, relative_error, GradCheckOptions, GradReport, ParamGrad};
pub use tape::{Gradients, NodeId, Tape};
