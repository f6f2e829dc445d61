//! Fine-grained multi-scale dynamic selection.
//!
//! The input map is cut into its four spatial quadrants, which are stacked
//! along the batch axis. Every quadrant goes through three depthwise-separable
//! branches of increasing kernel size whose outputs are summed. The quadrants
//! are then stitched back, concatenated with the original map, and projected
//! by a depthwise-separable selection convolution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::{flop_count, ConvGeometry, ConvSpec};
use crate::graph::{apply_conv, join, Eager, Graph};
use crate::{init, Error, Real, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FmdsConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Branch kernel sizes, each odd; padding is `(k - 1) / 2`, stride 1.
    pub kernels: [usize; 3],
    /// Whether every convolution carries a bias.
    pub bias: bool,
}

impl FmdsConfig {
    pub const DEFAULT_KERNELS: [usize; 3] = [3, 5, 7];
    pub const SELECT_KERNEL: usize = 3;

    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernels: Self::DEFAULT_KERNELS,
            bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("FMDS channel counts must be >= 1".into()));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "FMDS branch kernels must be odd, got {:?}",
                self.kernels
            )));
        }
        Ok(())
    }
}

/// Closed-form scalar count: three branches, then the selection stage.
pub fn fmds_param_count(cfg: &FmdsConfig) -> usize {
    let c = cfg.in_channels;
    let out = cfg.out_channels;
    let b = usize::from(cfg.bias);
    let branches: usize = cfg.kernels.iter().map(|k| k * k * c + b * c + c * c + b * c).sum();
    let k = FmdsConfig::SELECT_KERNEL;
    let select = k * k * 2 * c + b * 2 * c + 2 * c * out + b * out;
    branches + select
}

/// Depthwise convolution followed by a pointwise projection.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseSeparable<T> {
    pub depthwise: ConvSpec<T>,
    pub pointwise: ConvSpec<T>,
}

impl<T: Real> DepthwiseSeparable<T> {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        Ok(Self {
            depthwise: init::depthwise(rng, in_channels, kernel, bias)?,
            pointwise: init::pointwise(rng, in_channels, out_channels, bias)?,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            depthwise: ConvSpec::zeros(
                ConvGeometry::same(kernel, in_channels),
                in_channels,
                1,
                (kernel, kernel),
                bias,
            )?,
            pointwise: ConvSpec::zeros(ConvGeometry::same(1, 1), out_channels, in_channels, (1, 1), bias)?,
        })
    }

    pub fn forward_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
        let d = apply_conv(g, &join(prefix, "dw"), &self.depthwise, x)?;
        apply_conv(g, &join(prefix, "pw"), &self.pointwise, &d)
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (name, spec) in [("dw", &self.depthwise), ("pw", &self.pointwise)] {
            out.push((format!("{prefix}.{name}.weight"), &spec.weight));
            if let Some(b) = &spec.bias {
                out.push((format!("{prefix}.{name}.bias"), b));
            }
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (name, spec) in [("dw", &mut self.depthwise), ("pw", &mut self.pointwise)] {
            out.push((format!("{prefix}.{name}.weight"), &mut spec.weight));
            if let Some(b) = &mut spec.bias {
                out.push((format!("{prefix}.{name}.bias"), b));
            }
        }
    }
}

/// Every intermediate map of one forward pass.
#[derive(Clone, Debug)]
pub struct FmdsStages<V> {
    pub blocks: V,
    pub branch_sum: V,
    pub reassembled: V,
    pub concat: V,
    pub output: V,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fmds<T> {
    pub config: FmdsConfig,
    pub branches: [DepthwiseSeparable<T>; 3],
    pub select: DepthwiseSeparable<T>,
}

impl<T: Real> Fmds<T> {
    pub fn init<R: Rng + ?Sized>(config: &FmdsConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.in_channels;
        let [k0, k1, k2] = config.kernels;
        Ok(Self {
            branches: [
                DepthwiseSeparable::init(rng, c, c, k0, config.bias)?,
                DepthwiseSeparable::init(rng, c, c, k1, config.bias)?,
                DepthwiseSeparable::init(rng, c, c, k2, config.bias)?,
            ],
            select: DepthwiseSeparable::init(
                rng,
                2 * c,
                config.out_channels,
                FmdsConfig::SELECT_KERNEL,
                config.bias,
            )?,
            config: config.clone(),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: &FmdsConfig) -> Result<Self> {
        config.validate()?;
        let c = config.in_channels;
        let [k0, k1, k2] = config.kernels;
        Ok(Self {
            branches: [
                DepthwiseSeparable::zeros(c, c, k0, config.bias)?,
                DepthwiseSeparable::zeros(c, c, k1, config.bias)?,
                DepthwiseSeparable::zeros(c, c, k2, config.bias)?,
            ],
            select: DepthwiseSeparable::zeros(
                2 * c,
                config.out_channels,
                FmdsConfig::SELECT_KERNEL,
                config.bias,
            )?,
            config: config.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_in(&mut Eager, "fmds", x)
    }

    pub fn forward_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
        Ok(self.stages_in(g, prefix, x)?.output)
    }

    pub fn stages_in<G: Graph<T>>(
        &self,
        g: &mut G,
        prefix: &str,
        x: &G::Var,
    ) -> Result<FmdsStages<G::Var>> {
        let [batch, c, _, _] = g.value(x).dims4()?;
        if c != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                op: "fmds_forward",
                expected: self.config.in_channels,
                got: c,
            });
        }
        let blocks = partition_blocks(g, x)?;
        let branch_sum = self.branch_sum_in(g, prefix, &blocks)?;
        let reassembled = reassemble_blocks(g, &branch_sum, batch)?;
        let concat = concat_original(g, x, &reassembled)?;
        let output = self.select_in(g, prefix, &concat)?;
        Ok(FmdsStages {
            blocks,
            branch_sum,
            reassembled,
            concat,
            output,
        })
    }

    /// Sum of the three depthwise-separable branches, accumulated in branch order.
    pub fn branch_sum_in<G: Graph<T>>(
        &self,
        g: &mut G,
        prefix: &str,
        blocks: &G::Var,
    ) -> Result<G::Var> {
        let c = g.value(blocks).dims4()?[1];
        if c != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                op: "multiscale_branch_sum",
                expected: self.config.in_channels,
                got: c,
            });
        }
        let mut acc: Option<G::Var> = None;
        for (i, branch) in self.branches.iter().enumerate() {
            let y = branch.forward_in(g, &format!("{prefix}.branch{i}"), blocks)?;
            acc = Some(match acc {
                Some(a) => g.add(&a, &y)?,
                None => y,
            });
        }
        Ok(acc.expect("three branches"))
    }

    /// Depthwise 3×3 then pointwise projection from `2C` to `out_channels`.
    pub fn select_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x_concat: &G::Var) -> Result<G::Var> {
        let c = g.value(x_concat).dims4()?[1];
        if c != 2 * self.config.in_channels {
            return Err(Error::ChannelMismatch {
                op: "adaptive_select",
                expected: 2 * self.config.in_channels,
                got: c,
            });
        }
        self.select.forward_in(g, &join(prefix, "select"), x_concat)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            b.collect(&format!("branch{i}"), &mut out);
        }
        self.select.collect("select", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.collect_mut(&format!("branch{i}"), &mut out);
        }
        self.select.collect_mut("select", &mut out);
        out
    }

    /// Scalars held by the module, counted by enumeration.
    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Per-convolution FLOPs for an input of the given shape.
    pub fn flops(&self, input_shape: &[usize]) -> Result<Vec<(String, u64)>> {
        let [b, c, h, w] = match *input_shape {
            [b, c, h, w] => [b, c, h, w],
            _ => {
                return Err(Error::Rank {
                    op: "fmds flops",
                    expected: 4,
                    got: input_shape.len(),
                })
            }
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::OddSpatial { height: h, width: w });
        }
        let block = [4 * b, c, h / 2, w / 2];
        let mut rows = Vec::new();
        for (i, br) in self.branches.iter().enumerate() {
            rows.push((format!("branch{i}.dw"), flop_count(&br.depthwise, &block)?));
            rows.push((format!("branch{i}.pw"), flop_count(&br.pointwise, &block)?));
        }
        let cat = [b, 2 * c, h, w];
        rows.push(("select.dw".into(), flop_count(&self.select.depthwise, &cat)?));
        rows.push(("select.pw".into(), flop_count(&self.select.pointwise, &cat)?));
        Ok(rows)
    }
}

/// `(B, C, H, W) -> (4B, C, H/2, W/2)`; image `b` yields blocks `4b..4b+3`
/// in the order top-left, top-right, bottom-left, bottom-right.
pub fn partition_blocks<T: Real, G: Graph<T>>(g: &mut G, x: &G::Var) -> Result<G::Var> {
    let [b, c, h, w] = g.value(x).dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatial { height: h, width: w });
    }
    let split = g.reshape(x, &[b, c, 2, h / 2, 2, w / 2])?;
    let moved = g.permute(&split, &[0, 2, 4, 1, 3, 5])?;
    g.reshape(&moved, &[4 * b, c, h / 2, w / 2])
}

/// Inverse of [`partition_blocks`] for `batch` source images.
pub fn reassemble_blocks<T: Real, G: Graph<T>>(g: &mut G, blocks: &G::Var, batch: usize) -> Result<G::Var> {
    let [n, c, h, w] = g.value(blocks).dims4()?;
    if n % 4 != 0 || n != 4 * batch {
        return Err(Error::BlockBatch { batch: n, images: batch });
    }
    let split = g.reshape(blocks, &[batch, 2, 2, c, h, w])?;
    let moved = g.permute(&split, &[0, 3, 1, 4, 2, 5])?;
    g.reshape(&moved, &[batch, c, 2 * h, 2 * w])
}

/// Original map first, processed map second.
pub fn concat_original<T: Real, G: Graph<T>>(g: &mut G, x: &G::Var, x_prime: &G::Var) -> Result<G::Var> {
    let (a, b) = (g.value(x).shape(), g.value(x_prime).shape());
    if a != b {
        return Err(Error::ShapeMismatch {
            op: "concat_original",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    g.concat_channels(&[x.clone(), x_prime.clone()])
}

/// Eager [`partition_blocks`].
pub fn partition<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    partition_blocks(&mut Eager, x)
}

/// Eager [`reassemble_blocks`].
pub fn reassemble<T: Real>(blocks: &Tensor<T>, batch: usize) -> Result<Tensor<T>> {
    reassemble_blocks(&mut Eager, blocks, batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64).unwrap()
    }

    #[test]
    fn quadrant_order() {
        let blocks = partition(&iota(&[1, 1, 4, 4])).unwrap();
        assert_eq!(blocks.shape(), &[4, 1, 2, 2]);
        assert_eq!(
            blocks.data(),
            &[0., 1., 4., 5., 2., 3., 6., 7., 8., 9., 12., 13., 10., 11., 14., 15.]
        );
        let back = reassemble(&blocks, 1).unwrap();
        assert_eq!(back.data(), iota(&[1, 1, 4, 4]).data());
    }

    #[test]
    fn minimal_blocks_are_pixels() {
        let x = iota(&[2, 3, 2, 2]);
        let blocks = partition(&x).unwrap();
        assert_eq!(blocks.shape(), &[8, 3, 1, 1]);
        for b in 0..2 {
            for q in 0..4 {
                for c in 0..3 {
                    assert_eq!(blocks.at(4 * b + q, c, 0, 0), x.at(b, c, q / 2, q % 2));
                }
            }
        }
    }

    #[test]
    fn odd_extent_rejected() {
        let x = iota(&[1, 1, 7, 4]);
        assert_eq!(
            partition(&x).unwrap_err(),
            Error::OddSpatial { height: 7, width: 4 }
        );
        let blocks = iota(&[6, 1, 2, 2]);
        assert!(matches!(reassemble(&blocks, 1), Err(Error::BlockBatch { .. })));
        assert!(matches!(
            reassemble(&iota(&[4, 1, 2, 2]), 2),
            Err(Error::BlockBatch { .. })
        ));
    }

    #[test]
    fn param_count_closed_form() {
        assert_eq!(fmds_param_count(&FmdsConfig::new(4, 4)), 484);
        assert_eq!(fmds_param_count(&FmdsConfig::new(1, 1)), 106);
        let with_bias = FmdsConfig {
            bias: true,
            ..FmdsConfig::new(4, 4)
        };
        // 6 branch convs with C biases, select dw 2C, select pw out
        assert_eq!(fmds_param_count(&with_bias), 484 + 6 * 4 + 8 + 4);
        for cfg in [FmdsConfig::new(4, 4), with_bias, FmdsConfig::new(3, 5)] {
            let m = Fmds::<f64>::zeros(&cfg).unwrap();
            assert_eq!(m.num_scalars(), fmds_param_count(&cfg));
        }
    }

    #[test]
    fn channel_mismatch_surfaces() {
        let m = Fmds::<f64>::zeros(&FmdsConfig::new(4, 4)).unwrap();
        assert!(matches!(
            m.forward(&iota(&[1, 3, 4, 4])),
            Err(Error::ChannelMismatch { .. })
        ));
        assert!(matches!(
            m.select_in(&mut Eager, "fmds", &iota(&[1, 4, 4, 4])),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn even_kernels_rejected() {
        let cfg = FmdsConfig {
            kernels: [3, 4, 7],
            ..FmdsConfig::new(2, 2)
        };
        assert!(Fmds::<f64>::zeros(&cfg).is_err());
    }
}
