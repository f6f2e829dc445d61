//! Pointwise activations and the channel Z-pool.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// Logistic function, clamped into the open interval `(0, 1)`.
#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    // f64 rounds to 1.0 above ~37 and underflows to 0.0 below ~-745
    s.max(T::min_positive_value()).min(T::one() - T::epsilon())
}

pub fn sigmoid<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(d_out, "sigmoid_backward", |s, g| g * s * (T::one() - s))
}

/// `x · sigmoid(x)`.
pub fn silu<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|x| x * sigmoid_scalar(x))
}

pub fn silu_backward<T: Real>(x: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(d_out, "silu_backward", |x, g| {
        let s = sigmoid_scalar(x);
        g * (s + x * s * (T::one() - s))
    })
}

/// Channel reduction to `(B, 2, H, W)`: channel 0 is the max, channel 1 the mean.
pub fn zpool<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = t.dims4()?;
    let plane = h * w;
    let count = T::real(c as f64);
    let x = t.data();
    let mut out = vec![T::zero(); b * 2 * plane];
    for bi in 0..b {
        let base = bi * c * plane;
        let (maxes, means) = out[bi * 2 * plane..][..2 * plane].split_at_mut(plane);
        maxes.copy_from_slice(&x[base..base + plane]);
        means.copy_from_slice(&x[base..base + plane]);
        for ci in 1..c {
            let src = &x[base + ci * plane..][..plane];
            for ((m, s), &v) in maxes.iter_mut().zip(means.iter_mut()).zip(src) {
                if v > *m {
                    *m = v;
                }
                *s = *s + v;
            }
        }
        means.iter_mut().for_each(|s| *s = *s / count);
    }
    Ok(Tensor::from_parts(vec![b, 2, h, w], out))
}

/// Max routes to the first maximal channel in scan order; mean spreads `1/C`.
pub fn zpool_backward<T: Real>(t: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = t.dims4()?;
    if d_out.shape() != [b, 2, h, w] {
        return Err(Error::ShapeMismatch {
            op: "zpool_backward",
            lhs: vec![b, 2, h, w],
            rhs: d_out.shape().to_vec(),
        });
    }
    let plane = h * w;
    let inv_c = T::one() / T::real(c as f64);
    let x = t.data();
    let dy = d_out.data();
    let mut dx = vec![T::zero(); t.len()];
    for bi in 0..b {
        let base = bi * c * plane;
        let dmax = &dy[bi * 2 * plane..][..plane];
        let dmean = &dy[bi * 2 * plane + plane..][..plane];
        for p in 0..plane {
            let mut arg = 0;
            for ci in 1..c {
                if x[base + ci * plane + p] > x[base + arg * plane + p] {
                    arg = ci;
                }
            }
            for ci in 0..c {
                dx[base + ci * plane + p] = dmean[p] * inv_c;
            }
            let i = base + arg * plane + p;
            dx[i] = dx[i] + dmax[p];
        }
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), dx))
}

/// Smallest gap between the largest and second-largest channel value over all
/// positions, or `None` for single-channel input.
pub fn zpool_tie_margin<T: Real>(t: &Tensor<T>) -> Result<Option<T>> {
    let [b, c, h, w] = t.dims4()?;
    if c < 2 {
        return Ok(None);
    }
    let plane = h * w;
    let x = t.data();
    let mut margin = T::infinity();
    let mut column: Vec<T> = Vec::with_capacity(c);
    for bi in 0..b {
        for p in 0..plane {
            column.clear();
            column.extend((0..c).map(|ci| x[(bi * c + ci) * plane + p]));
            let (mut first, mut second) = (T::neg_infinity(), T::neg_infinity());
            for &v in &column {
                if v > first {
                    second = first;
                    first = v;
                } else if v > second {
                    second = v;
                }
            }
            margin = margin.min(first - second);
        }
    }
    Ok(Some(margin))
}
