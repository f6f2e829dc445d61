//! Seeded parameter initialization.
//!
//! Weights are uniform on `(-b, b)` with `b = sqrt(6 / fan_in)` and
//! `fan_in = K_h·K_w·C_in/groups`. Biases start at zero and batch norms at
//! the identity (gamma 1, beta 0, mean 0, var 1).

use rand::Rng;

use crate::conv::{ConvGeometry, ConvSpec};
use crate::{Real, Result, Tensor};

pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Result<Tensor<T>> {
    Tensor::from_fn(shape, |_| T::real(rng.gen_range(-bound..bound)))
}

/// A convolution with `in_per_group` input channels per group.
pub fn conv<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    geometry: ConvGeometry,
    out_channels: usize,
    in_per_group: usize,
    kernel: (usize, usize),
    bias: bool,
) -> Result<ConvSpec<T>> {
    let fan_in = (kernel.0 * kernel.1 * in_per_group) as f64;
    let weight = uniform(rng, &[out_channels, in_per_group, kernel.0, kernel.1], num_traits::Float::sqrt(6.0 / fan_in))?;
    let bias = if bias {
        Some(Tensor::zeros(&[out_channels])?)
    } else {
        None
    };
    ConvSpec::new(geometry, weight, bias)
}

/// Depthwise `k×k` same-padded convolution over `channels`.
pub fn depthwise<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    channels: usize,
    kernel: usize,
    bias: bool,
) -> Result<ConvSpec<T>> {
    conv(rng, ConvGeometry::same(kernel, channels), channels, 1, (kernel, kernel), bias)
}

/// Dense 1×1 convolution.
pub fn pointwise<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    in_channels: usize,
    out_channels: usize,
    bias: bool,
) -> Result<ConvSpec<T>> {
    conv(rng, ConvGeometry::same(1, 1), out_channels, in_channels, (1, 1), bias)
}
