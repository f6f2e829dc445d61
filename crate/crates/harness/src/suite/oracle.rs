//! Loop-based references the suites compare against.

use msfuse_core::activation::sigmoid_scalar;
use msfuse_core::fmds::DepthwiseSeparable;
use msfuse_core::gate::AttentionGate;
use msfuse_core::{
    batch_norm, conv2d_naive, elementwise_add, elementwise_mul, Fmds, GatedUnit, Real, Result, Tensor,
    TripletAttention,
};

/// Quadrant `q` of image `b`, channel-major.
pub fn block<T: Real>(x: &Tensor<T>, b: usize, q: usize) -> Vec<T> {
    let [_, c, h, w] = x.dims4().expect("rank 4");
    let (hh, hw) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * hh * hw);
    for ch in 0..c {
        for y in 0..hh {
            for xx in 0..hw {
                out.push(x.at(b, ch, (q / 2) * hh + y, (q % 2) * hw + xx));
            }
        }
    }
    out
}

pub fn partition<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.dims4().expect("rank 4");
    let mut data = Vec::with_capacity(x.len());
    for bi in 0..b {
        for q in 0..4 {
            data.extend(block(x, bi, q));
        }
    }
    Tensor::from_vec(&[4 * b, c, h / 2, w / 2], data).expect("same count")
}

pub fn reassemble<T: Real>(blocks: &Tensor<T>) -> Tensor<T> {
    let [n, c, hh, hw] = blocks.dims4().expect("rank 4");
    let (b, h, w) = (n / 4, 2 * hh, 2 * hw);
    let mut data = vec![T::zero(); blocks.len()];
    for bi in 0..b {
        for q in 0..4 {
            for ch in 0..c {
                for y in 0..hh {
                    for xx in 0..hw {
                        let dst = ((bi * c + ch) * h + (q / 2) * hh + y) * w + (q % 2) * hw + xx;
                        data[dst] = blocks.at(4 * bi + q, ch, y, xx);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, c, h, w], data).expect("same count")
}

pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let [b, _, h, w] = parts[0].dims4().expect("rank 4");
    let c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut data = Vec::new();
    for bi in 0..b {
        for p in parts {
            for ch in 0..p.shape()[1] {
                for y in 0..h {
                    for x in 0..w {
                        data.push(p.at(bi, ch, y, x));
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, c, h, w], data).expect("same count")
}

pub fn zpool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.dims4().expect("rank 4");
    let mut out = vec![T::zero(); b * 2 * h * w];
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let mut max = T::neg_infinity();
                let mut sum = T::zero();
                for ch in 0..c {
                    let v = x.at(bi, ch, y, xx);
                    max = max.max(v);
                    sum = sum + v;
                }
                out[((bi * 2) * h + y) * w + xx] = max;
                out[((bi * 2 + 1) * h + y) * w + xx] = sum / T::real(c as f64);
            }
        }
    }
    Tensor::from_vec(&[b, 2, h, w], out).expect("same count")
}

pub fn permute4<T: Real>(x: &Tensor<T>, axes: [usize; 4]) -> Tensor<T> {
    let s = x.dims4().expect("rank 4");
    let os = [s[axes[0]], s[axes[1]], s[axes[2]], s[axes[3]]];
    let mut data = Vec::with_capacity(x.len());
    for i0 in 0..os[0] {
        for i1 in 0..os[1] {
            for i2 in 0..os[2] {
                for i3 in 0..os[3] {
                    let oi = [i0, i1, i2, i3];
                    let mut ii = [0; 4];
                    for k in 0..4 {
                        ii[axes[k]] = oi[k];
                    }
                    data.push(x.at(ii[0], ii[1], ii[2], ii[3]));
                }
            }
        }
    }
    Tensor::from_vec(&os, data).expect("same count")
}

/// `x ⊙ g` with `g` of shape `(B, 1, H, W)`.
pub fn broadcast_gate<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let [_, c, h, w] = x.dims4().expect("rank 4");
    Tensor::from_fn(x.shape(), |i| {
        let b = i / (c * h * w);
        x.data()[i] * g.data()[b * h * w + i % (h * w)]
    })
    .expect("non-empty")
}

pub fn naive_ds<T: Real>(ds: &DepthwiseSeparable<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d_naive(&conv2d_naive(x, &ds.depthwise)?, &ds.pointwise)
}

pub fn branch_sum<T: Real>(m: &Fmds<T>, blocks: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc = naive_ds(&m.branches[0], blocks)?;
    for br in &m.branches[1..] {
        acc = elementwise_add(&acc, &naive_ds(br, blocks)?)?;
    }
    Ok(acc)
}

pub fn fmds<T: Real>(m: &Fmds<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let blocks = partition(x);
    let re = reassemble(&branch_sum(m, &blocks)?);
    naive_ds(&m.select, &concat(&[x, &re]))
}

fn sigmoid_map<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(sigmoid_scalar)
}

pub fn gated_unit<T: Real>(gu: &GatedUnit<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    let z = batch_norm(&conv2d_naive(y, &gu.conv)?, &gu.bn)?;
    elementwise_mul(y, &sigmoid_map(&z))
}

pub fn attention_gate<T: Real>(gate: &AttentionGate<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let z = batch_norm(&conv2d_naive(&zpool(x), &gate.conv)?, &gate.bn)?;
    Ok(sigmoid_map(&z))
}

pub const ROTATIONS: [[usize; 4]; 3] = [[0, 1, 2, 3], [0, 2, 1, 3], [0, 3, 2, 1]];

pub fn triplet_branch<T: Real>(ta: &TripletAttention<T>, x: &Tensor<T>, i: usize) -> Result<Tensor<T>> {
    let rot = permute4(x, ROTATIONS[i]);
    let gated = broadcast_gate(&rot, &attention_gate(&ta.gates[i], &rot)?);
    Ok(permute4(&gated, ROTATIONS[i]))
}

pub fn triplet<T: Real>(ta: &TripletAttention<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc = triplet_branch(ta, x, 0)?;
    for i in 1..3 {
        acc = elementwise_add(&acc, &triplet_branch(ta, x, i)?)?;
    }
    Ok(acc.scale(T::one() / T::real(3.0)))
}
