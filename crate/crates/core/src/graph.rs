//! The op vocabulary modules are written against.
//!
//! [`Eager`] evaluates immediately; [`Tape`](crate::Tape) records for
//! reverse-mode differentiation. Both route through the same kernels.

use alloc::string::String;
use alloc::vec::Vec;

use crate::conv::{conv2d_with, ConvGeometry, ConvSpec};
use crate::norm::{batch_norm_with, BatchNormSpec};
use crate::tensor::{self, mul_channel_broadcast};
use crate::{activation, Real, Result, Tensor};

pub trait Graph<T: Real> {
    type Var: Clone;

    /// Registers an input or trainable parameter.
    fn leaf(&mut self, name: &str, value: &Tensor<T>) -> Self::Var;

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::Var,
        weight: &Self::Var,
        bias: Option<&Self::Var>,
        geometry: ConvGeometry,
    ) -> Result<Self::Var>;

    /// Inference batch norm; `gamma`/`beta` are differentiable, the statistics are constants.
    fn batch_norm(
        &mut self,
        x: &Self::Var,
        gamma: &Self::Var,
        beta: &Self::Var,
        mean: &[T],
        var: &[T],
        epsilon: T,
    ) -> Result<Self::Var>;

    fn sigmoid(&mut self, x: &Self::Var) -> Self::Var;

    fn silu(&mut self, x: &Self::Var) -> Self::Var;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;

    /// `x (B,C,H,W) ⊙ g (B,1,H,W)`.
    fn mul_channel_broadcast(&mut self, x: &Self::Var, g: &Self::Var) -> Result<Self::Var>;

    fn scale(&mut self, x: &Self::Var, k: T) -> Self::Var;

    fn reshape(&mut self, x: &Self::Var, shape: &[usize]) -> Result<Self::Var>;

    fn permute(&mut self, x: &Self::Var, axes: &[usize]) -> Result<Self::Var>;

    fn concat_channels(&mut self, xs: &[Self::Var]) -> Result<Self::Var>;

    fn zpool(&mut self, x: &Self::Var) -> Result<Self::Var>;
}

/// Immediate evaluation; variables are the tensors themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Real> Graph<T> for Eager {
    type Var = Tensor<T>;

    fn leaf(&mut self, _name: &str, value: &Tensor<T>) -> Tensor<T> {
        value.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geometry: ConvGeometry,
    ) -> Result<Tensor<T>> {
        conv2d_with(x, weight, bias, &geometry)
    }

    fn batch_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mean: &[T],
        var: &[T],
        epsilon: T,
    ) -> Result<Tensor<T>> {
        batch_norm_with(x, gamma.data(), beta.data(), mean, var, epsilon)
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Tensor<T> {
        activation::sigmoid(x)
    }

    fn silu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        activation::silu(x)
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::elementwise_add(a, b)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::elementwise_mul(a, b)
    }

    fn mul_channel_broadcast(&mut self, x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        mul_channel_broadcast(x, g)
    }

    fn scale(&mut self, x: &Tensor<T>, k: T) -> Tensor<T> {
        x.scale(k)
    }

    fn reshape(&mut self, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.reshape_to(shape)
    }

    fn permute(&mut self, x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
        x.permute(axes)
    }

    fn concat_channels(&mut self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = xs.iter().collect();
        tensor::concat_channels(&refs)
    }

    fn zpool(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        activation::zpool(x)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + name.len() + 1);
    s.push_str(prefix);
    s.push('.');
    s.push_str(name);
    s
}

/// Applies a stored convolution, registering its weight and bias as leaves.
pub fn apply_conv<T: Real, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    spec: &ConvSpec<T>,
    x: &G::Var,
) -> Result<G::Var> {
    let w = g.leaf(&join(prefix, "weight"), &spec.weight);
    let b = spec.bias.as_ref().map(|b| g.leaf(&join(prefix, "bias"), b));
    g.conv2d(x, &w, b.as_ref(), spec.geometry)
}

/// Applies a stored batch norm, registering gamma and beta as leaves.
pub fn apply_batch_norm<T: Real, G: Graph<T>>(
    g: &mut G,
    prefix: &str,
    spec: &BatchNormSpec<T>,
    x: &G::Var,
) -> Result<G::Var> {
    spec.validate()?;
    let gamma = g.leaf(&join(prefix, "gamma"), &spec.gamma);
    let beta = g.leaf(&join(prefix, "beta"), &spec.beta);
    g.batch_norm(x, &gamma, &beta, &spec.mean, &spec.var, spec.epsilon)
}
