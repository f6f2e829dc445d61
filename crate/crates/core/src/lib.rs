//! Numerical kernels for fine-grained multi-scale dynamic selection (FMDS) and
//! adaptive gated multi-branch focus fusion (AGMF) feature-map modules.
//!
//! Everything here is `no_std` + `alloc`: dense NCHW tensors, grouped
//! convolution (an optimized path and a naive oracle), inference-style batch
//! normalization, gating activations, and a tape for reverse-mode gradients.
//! Modules are written once against the [`Graph`] trait and run either eagerly
//! ([`Eager`]) or recorded on a [`Tape`] for differentiation.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod activation;
pub mod agmf;
pub mod autodiff;
pub mod conv;
mod error;
pub mod fmds;
pub mod gate;
pub mod graph;
pub mod init;
pub mod norm;
mod real;
pub mod tensor;

pub use activation::{sigmoid, silu, zpool};
pub use agmf::{Agmf, AgmfConfig, BranchFlags, Variant};
pub use autodiff::{grad_check, GradCheckOptions, GradReport, Gradients, NodeId, ParamGrad, Tape};
pub use conv::{conv2d, conv2d_naive, flop_count, ConvGeometry, ConvSpec};
pub use error::{Error, Result};
pub use fmds::{Fmds, FmdsConfig};
pub use gate::{AttentionBranch, AttentionGate, GatedUnit, TripletAttention};
pub use graph::{Eager, Graph};
pub use norm::{batch_norm, BatchNormSpec};
pub use real::{DType, Real};
pub use tensor::{concat_channels, elementwise_add, elementwise_mul, Tensor};
