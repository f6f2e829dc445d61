#![allow(dead_code)]

use msfuse_core::fmds::DepthwiseSeparable;
use msfuse_core::gate::AttentionGate;
use msfuse_core::{conv2d_naive, BatchNormSpec, Fmds, GatedUnit, Tensor, TripletAttention};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).unwrap()
}

/// Non-trivial running statistics and affine parameters.
pub fn randomize_bn(bn: &mut BatchNormSpec<f64>, rng: &mut impl Rng) {
    let c = bn.channels();
    bn.gamma = uniform(rng, &[c], 0.5, 1.5);
    bn.beta = uniform(rng, &[c], -0.5, 0.5);
    bn.mean = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    bn.var = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
}

/// Quadrant `q` of image `b` by direct index arithmetic.
pub fn block_by_index(x: &Tensor<f64>, b: usize, q: usize) -> Vec<f64> {
    let [_, c, h, w] = x.dims4().unwrap();
    let (hh, hw) = (h / 2, w / 2);
    let (qi, qj) = (q / 2, q % 2);
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..hh {
            for xx in 0..hw {
                out.push(x.at(b, ch, qi * hh + y, qj * hw + xx));
            }
        }
    }
    out
}

/// Partition by index arithmetic only.
pub fn partition_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let [b, c, h, w] = x.dims4().unwrap();
    let mut data = Vec::new();
    for bi in 0..b {
        for q in 0..4 {
            data.extend(block_by_index(x, bi, q));
        }
    }
    Tensor::from_vec(&[4 * b, c, h / 2, w / 2], data).unwrap()
}

/// Reassembly by index arithmetic only.
pub fn reassemble_oracle(blocks: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, hh, hw] = blocks.dims4().unwrap();
    let b = n / 4;
    let mut out = Tensor::zeros(&[b, c, 2 * hh, 2 * hw]).unwrap();
    let (h, w) = (2 * hh, 2 * hw);
    for bi in 0..b {
        for q in 0..4 {
            for ch in 0..c {
                for y in 0..hh {
                    for xx in 0..hw {
                        let dst = ((bi * c + ch) * h + (q / 2) * hh + y) * w + (q % 2) * hw + xx;
                        out.data_mut()[dst] = blocks.at(4 * bi + q, ch, y, xx);
                    }
                }
            }
        }
    }
    out
}

/// Channel concat by index arithmetic.
pub fn concat_oracle(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    let [b, _, h, w] = parts[0].dims4().unwrap();
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
    Tensor::from_vec(&[b, c, h, w], data).unwrap()
}

/// Max and mean over channels with plain loops.
pub fn zpool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let [b, c, h, w] = x.dims4().unwrap();
    let mut out = Tensor::zeros(&[b, 2, h, w]).unwrap();
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let vals: Vec<f64> = (0..c).map(|ch| x.at(bi, ch, y, xx)).collect();
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mean = vals.iter().sum::<f64>() / c as f64;
                out.data_mut()[((bi * 2) * h + y) * w + xx] = max;
                out.data_mut()[((bi * 2 + 1) * h + y) * w + xx] = mean;
            }
        }
    }
    out
}

/// Permute a rank-4 tensor by index enumeration.
pub fn permute4_oracle(x: &Tensor<f64>, axes: [usize; 4]) -> Tensor<f64> {
    let s = x.dims4().unwrap();
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
    Tensor::from_vec(&os, data).unwrap()
}

pub fn sigmoid_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x ⊙ g` with `g` broadcast over channels, by loops.
pub fn gate_oracle(x: &Tensor<f64>, g: &Tensor<f64>) -> Tensor<f64> {
    let [b, c, h, w] = x.dims4().unwrap();
    Tensor::from_fn(&[b, c, h, w], |i| {
        let bi = i / (c * h * w);
        let p = i % (h * w);
        x.data()[i] * g.data()[bi * h * w + p]
    })
    .unwrap()
}

pub fn naive_ds(ds: &DepthwiseSeparable<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let d = conv2d_naive(x, &ds.depthwise).unwrap();
    conv2d_naive(&d, &ds.pointwise).unwrap()
}

pub fn naive_add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i]).unwrap()
}

/// The whole pipeline rebuilt from naive convolutions and index oracles.
pub fn fmds_oracle(m: &Fmds<f64>, x: &Tensor<f64>) -> [Tensor<f64>; 5] {
    let blocks = partition_oracle(x);
    let mut sum = naive_ds(&m.branches[0], &blocks);
    for br in &m.branches[1..] {
        sum = naive_add(&sum, &naive_ds(br, &blocks));
    }
    let re = reassemble_oracle(&sum);
    let cat = concat_oracle(&[x, &re]);
    let out = naive_ds(&m.select, &cat);
    [blocks, sum, re, cat, out]
}

pub fn bn_oracle(x: &Tensor<f64>, bn: &BatchNormSpec<f64>) -> Tensor<f64> {
    let [_, c, h, w] = x.dims4().unwrap();
    Tensor::from_fn(x.shape(), |i| {
        let ch = (i / (h * w)) % c;
        let inv = 1.0 / (bn.var[ch] + bn.epsilon).sqrt();
        bn.gamma.data()[ch] * (x.data()[i] - bn.mean[ch]) * inv + bn.beta.data()[ch]
    })
    .unwrap()
}

pub fn gu_oracle(gu: &GatedUnit<f64>, y: &Tensor<f64>) -> Tensor<f64> {
    let z = bn_oracle(&conv2d_naive(y, &gu.conv).unwrap(), &gu.bn);
    Tensor::from_fn(y.shape(), |i| y.data()[i] * sigmoid_ref(z.data()[i])).unwrap()
}

pub fn gate_map_oracle(gate: &AttentionGate<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let z = bn_oracle(&conv2d_naive(&zpool_oracle(x), &gate.conv).unwrap(), &gate.bn);
    z.map(sigmoid_ref)
}

pub fn branch_oracle(ta: &TripletAttention<f64>, x: &Tensor<f64>, i: usize) -> Tensor<f64> {
    let axes = [[0, 1, 2, 3], [0, 2, 1, 3], [0, 3, 2, 1]][i];
    let rot = permute4_oracle(x, axes);
    let gated = gate_oracle(&rot, &gate_map_oracle(&ta.gates[i], &rot));
    permute4_oracle(&gated, axes)
}

pub fn ta_oracle(ta: &TripletAttention<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let b: Vec<_> = (0..3).map(|i| branch_oracle(ta, x, i)).collect();
    Tensor::from_fn(x.shape(), |i| (b[0].data()[i] + b[1].data()[i] + b[2].data()[i]) / 3.0).unwrap()
}
