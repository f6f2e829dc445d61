//! Inference-style batch normalization over the channel axis.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// Per-channel affine parameters plus running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormSpec<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub epsilon: T,
}

impl<T: Real> BatchNormSpec<T> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    /// gamma 1, beta 0, mean 0, var 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]).expect("channels >= 1"),
            beta: Tensor::zeros(&[channels]).expect("channels >= 1"),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            epsilon: T::real(Self::DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Trainable scalars: gamma and beta.
    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mean.len();
        for (got, op) in [
            (self.gamma.len(), "batch_norm gamma"),
            (self.beta.len(), "batch_norm beta"),
            (self.var.len(), "batch_norm var"),
        ] {
            if got != c {
                return Err(Error::ParamLength { op, expected: c, got });
            }
        }
        if self.epsilon < T::zero() {
            return Err(Error::Config("batch norm epsilon must be >= 0".into()));
        }
        if self
            .var
            .iter()
            .any(|&v| v < T::zero() || v + self.epsilon <= T::zero())
        {
            return Err(Error::Config("batch norm var + epsilon must be positive".into()));
        }
        Ok(())
    }
}

pub fn batch_norm<T: Real>(t: &Tensor<T>, spec: &BatchNormSpec<T>) -> Result<Tensor<T>> {
    spec.validate()?;
    batch_norm_with(
        t,
        spec.gamma.data(),
        spec.beta.data(),
        &spec.mean,
        &spec.var,
        spec.epsilon,
    )
}

fn check_len<T>(op: &'static str, v: &[T], c: usize) -> Result<()> {
    if v.len() != c {
        return Err(Error::ParamLength {
            op,
            expected: c,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_all<T>(c: usize, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Result<()> {
    check_len("batch_norm gamma", gamma, c)?;
    check_len("batch_norm beta", beta, c)?;
    check_len("batch_norm mean", mean, c)?;
    check_len("batch_norm var", var, c)
}

pub fn batch_norm_with<T: Real>(
    t: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    epsilon: T,
) -> Result<Tensor<T>> {
    let [_, c, h, w] = t.dims4()?;
    check_all(c, gamma, beta, mean, var)?;
    let plane = h * w;
    let mut out = t.clone();
    for (i, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let ch = i % c;
        let scale = gamma[ch] / (var[ch] + epsilon).sqrt();
        let m = mean[ch];
        let b = beta[ch];
        chunk.iter_mut().for_each(|x| *x = scale * (*x - m) + b);
    }
    Ok(out)
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Real>(
    t: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    var: &[T],
    epsilon: T,
    d_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [_, c, h, w] = t.dims4()?;
    if d_out.shape() != t.shape() {
        return Err(Error::ShapeMismatch {
            op: "batch_norm_backward",
            lhs: t.shape().to_vec(),
            rhs: d_out.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut dx = d_out.clone();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (dchunk, xchunk)) in dx
        .data_mut()
        .chunks_exact_mut(plane)
        .zip(t.data().chunks_exact(plane))
        .enumerate()
    {
        let ch = i % c;
        let inv_std = T::one() / (var[ch] + epsilon).sqrt();
        let mut gsum = T::zero();
        let mut bsum = T::zero();
        for (d, &x) in dchunk.iter_mut().zip(xchunk) {
            gsum = gsum + *d * (x - mean[ch]) * inv_std;
            bsum = bsum + *d;
            *d = *d * gamma[ch] * inv_std;
        }
        dgamma[ch] = dgamma[ch] + gsum;
        dbeta[ch] = dbeta[ch] + bsum;
    }
    Ok((
        dx,
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_parameters() {
        let x = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64 * 0.1 - 1.0).unwrap();
        let mut spec = BatchNormSpec::identity(3);
        spec.epsilon = 1e-12;
        let y = batch_norm(&x, &spec).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn zero_input_zero_beta() {
        let x = Tensor::<f64>::zeros(&[1, 2, 3, 3]).unwrap();
        let mut spec = BatchNormSpec::identity(2);
        spec.gamma = Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap();
        let y = batch_norm(&x, &spec).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_value() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let spec = BatchNormSpec {
            gamma: Tensor::from_vec(&[1], vec![2.0]).unwrap(),
            beta: Tensor::from_vec(&[1], vec![1.0]).unwrap(),
            mean: vec![3.0],
            var: vec![4.0],
            epsilon: 0.0,
        };
        assert_eq!(batch_norm(&x, &spec).unwrap().data(), &[3.0]);
    }

    #[test]
    fn length_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]).unwrap();
        let spec = BatchNormSpec::identity(2);
        assert!(matches!(batch_norm(&x, &spec), Err(Error::ParamLength { .. })));
    }
}
