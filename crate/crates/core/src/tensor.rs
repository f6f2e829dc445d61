//! Dense row-major tensors and the shape-only primitives (reshape, permute,
//! channel concat/split) plus elementwise arithmetic.
//!
//! Feature maps are rank 4 in batch, channel, height, width order. Reshape and
//! permute accept other ranks so the 6-D intermediates of the block partition
//! can be expressed directly.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

pub const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let expected = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ElementCount {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        })
    }

    /// Builds a tensor from shapes the caller has already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The four extents of a feature map.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::Rank {
                op: "dims4",
                expected: 4,
                got: self.rank(),
            }),
        }
    }

    /// Element at `(b, c, h, w)` of a rank-4 tensor.
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.dims4().expect("rank-4 tensor");
        self.data[((b * cs + c) * hs + h) * ws + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Same shape and identical bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::real(x.as_f64())).collect(),
        }
    }

    /// Reinterprets the data under a new shape. One extent may be `-1`, in
    /// which case it is inferred from the element count.
    pub fn reshape(&self, new_shape: &[isize]) -> Result<Self> {
        let shape = resolve_shape(self.len(), new_shape)?;
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    /// Reshape to fully specified extents.
    pub fn reshape_to(&self, new_shape: &[usize]) -> Result<Self> {
        check_shape(new_shape)?;
        let expected: usize = new_shape.iter().product();
        if expected != self.len() {
            return Err(Error::ElementCount {
                shape: new_shape.to_vec(),
                expected,
                got: self.len(),
            });
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Output axis `i` is input axis `axes[i]`; the result is contiguous.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        check_permutation(axes, self.rank())?;
        let rank = self.rank();
        let mut in_strides = [0usize; MAX_RANK];
        let mut stride = 1;
        for d in (0..rank).rev() {
            in_strides[d] = stride;
            stride *= self.shape[d];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let mut src_strides = [0usize; MAX_RANK];
        for (i, &a) in axes.iter().enumerate() {
            src_strides[i] = in_strides[a];
        }

        let mut data = Vec::with_capacity(self.len());
        let mut index = [0usize; MAX_RANK];
        let mut offset = 0usize;
        let inner = rank - 1;
        let inner_len = out_shape[inner];
        let inner_stride = src_strides[inner];
        loop {
            let mut o = offset;
            for _ in 0..inner_len {
                data.push(self.data[o]);
                o += inner_stride;
            }
            // advance the outer multi-index
            let mut d = inner;
            loop {
                if d == 0 {
                    return Ok(Self::from_parts(out_shape, data));
                }
                d -= 1;
                index[d] += 1;
                offset += src_strides[d];
                if index[d] < out_shape[d] {
                    break;
                }
                offset -= src_strides[d] * out_shape[d];
                index[d] = 0;
            }
        }
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
        return Err(Error::ZeroExtent(shape.to_vec()));
    }
    Ok(())
}

pub(crate) fn check_permutation(axes: &[usize], rank: usize) -> Result<()> {
    let mut seen = [false; MAX_RANK];
    if axes.len() != rank {
        return Err(Error::NotAPermutation(axes.to_vec()));
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(Error::NotAPermutation(axes.to_vec()));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Inverse of a permutation: `inverse[axes[i]] = i`.
pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn resolve_shape(count: usize, new_shape: &[isize]) -> Result<Vec<usize>> {
    let mut infer = None;
    let mut known = 1usize;
    for (i, &e) in new_shape.iter().enumerate() {
        match e {
            -1 if infer.is_some() => return Err(Error::MultipleInferMarkers),
            -1 => infer = Some(i),
            e if e >= 1 => known *= e as usize,
            e => return Err(Error::InvalidReshapeExtent(e)),
        }
    }
    let mut shape: Vec<usize> = new_shape.iter().map(|&e| e.max(0) as usize).collect();
    if let Some(i) = infer {
        if !count.is_multiple_of(known) || count / known == 0 {
            return Err(Error::ElementCount {
                shape: shape.clone(),
                expected: known,
                got: count,
            });
        }
        shape[i] = count / known;
    }
    check_shape(&shape)?;
    let expected: usize = shape.iter().product();
    if expected != count {
        return Err(Error::ElementCount {
            shape,
            expected,
            got: count,
        });
    }
    Ok(shape)
}

/// Concatenates rank-4 tensors along the channel axis, in argument order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or(Error::BranchCount {
        expected: 1,
        got: 0,
    })?;
    let [b, _, h, w] = first.dims4()?;
    let mut channels = 0;
    for t in inputs {
        let [tb, tc, th, tw] = t.dims4()?;
        if (tb, th, tw) != (b, h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape.clone(),
                rhs: t.shape.clone(),
            });
        }
        channels += tc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(b * channels * plane);
    for bi in 0..b {
        for t in inputs {
            let slab = t.shape[1] * plane;
            data.extend_from_slice(&t.data[bi * slab..(bi + 1) * slab]);
        }
    }
    Ok(Tensor::from_parts(vec![b, channels, h, w], data))
}

/// Splits a rank-4 tensor into channel slabs of the given sizes.
pub fn split_channels<T: Real>(t: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [b, c, h, w] = t.dims4()?;
    let total: usize = sizes.iter().sum();
    if total != c {
        return Err(Error::ChannelMismatch {
            op: "split_channels",
            expected: total,
            got: c,
        });
    }
    let plane = h * w;
    let mut parts: Vec<Vec<T>> = sizes
        .iter()
        .map(|&s| Vec::with_capacity(b * s * plane))
        .collect();
    for bi in 0..b {
        let mut start = bi * c * plane;
        for (part, &s) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&t.data[start..start + s * plane]);
            start += s * plane;
        }
    }
    Ok(parts
        .into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::from_parts(vec![b, s, h, w], d))
        .collect())
}

pub fn elementwise_add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "elementwise_add", |x, y| x + y)
}

pub fn elementwise_mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, "elementwise_mul", |x, y| x * y)
}

/// `x (B,C,H,W) * g (B,1,H,W)` with `g` broadcast over channels.
pub fn mul_channel_broadcast<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4()?;
    if g.dims4()? != [b, 1, h, w] {
        return Err(Error::ShapeMismatch {
            op: "mul_channel_broadcast",
            lhs: x.shape.clone(),
            rhs: g.shape.clone(),
        });
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(x.len());
    for bi in 0..b {
        let gate = &g.data[bi * plane..(bi + 1) * plane];
        for ci in 0..c {
            let start = (bi * c + ci) * plane;
            data.extend(x.data[start..start + plane].iter().zip(gate).map(|(&v, &s)| v * s));
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), data))
}
