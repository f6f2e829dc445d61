//! Adaptive gated multi-branch focus fusion.
//!
//! Up to three parallel branches (Gated Unit, FMDS, triplet attention) run on
//! the same input. Their outputs are concatenated in that fixed order and fused
//! by a 1×1 convolution, batch norm and SiLU back to `C` channels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::{flop_count, ConvGeometry, ConvSpec};
use crate::fmds::{fmds_param_count, Fmds, FmdsConfig};
use crate::gate::{AttentionGate, GatedUnit, TripletAttention};
use crate::graph::{apply_batch_norm, apply_conv, join, Eager, Graph};
use crate::norm::BatchNormSpec;
use crate::{init, Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BranchFlags {
    pub gated_unit: bool,
    pub fmds: bool,
    pub triplet: bool,
}

impl BranchFlags {
    pub const ALL: BranchFlags = BranchFlags {
        gated_unit: true,
        fmds: true,
        triplet: true,
    };

    pub fn count(self) -> usize {
        usize::from(self.gated_unit) + usize::from(self.fmds) + usize::from(self.triplet)
    }
}

/// Named branch selections. `NoFmds` is the ablation that drops the FMDS
/// branch and keeps the other two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Variant {
    Full,
    NoFmds,
    Custom(BranchFlags),
}

impl Variant {
    pub fn branches(self) -> BranchFlags {
        match self {
            Variant::Full => BranchFlags::ALL,
            Variant::NoFmds => BranchFlags {
                fmds: false,
                ..BranchFlags::ALL
            },
            Variant::Custom(flags) => flags,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgmfConfig {
    pub channels: usize,
    pub variant: Variant,
    /// Kernel triple of the embedded FMDS branch.
    pub fmds_kernels: [usize; 3],
    pub fmds_bias: bool,
    /// Apply SiLU after the fusion batch norm.
    pub fusion_activation: bool,
}

impl AgmfConfig {
    pub fn new(channels: usize, variant: Variant) -> Self {
        Self {
            channels,
            variant,
            fmds_kernels: FmdsConfig::DEFAULT_KERNELS,
            fmds_bias: false,
            fusion_activation: true,
        }
    }

    pub fn branches(&self) -> BranchFlags {
        self.variant.branches()
    }

    /// The FMDS branch config; output channels equal input channels.
    pub fn fmds_config(&self) -> FmdsConfig {
        FmdsConfig {
            in_channels: self.channels,
            out_channels: self.channels,
            kernels: self.fmds_kernels,
            bias: self.fmds_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("AGMF channels must be >= 1".into()));
        }
        if self.branches().count() == 0 {
            return Err(Error::NoBranches);
        }
        if self.branches().fmds {
            self.fmds_config().validate()?;
        }
        Ok(())
    }
}

/// Closed-form scalar count of enabled branches plus the fusion layer.
pub fn agmf_param_count(cfg: &AgmfConfig) -> Result<usize> {
    cfg.validate()?;
    let c = cfg.channels;
    let flags = cfg.branches();
    let mut total = 0;
    if flags.gated_unit {
        total += c * c + c + 2 * c;
    }
    if flags.fmds {
        total += fmds_param_count(&cfg.fmds_config());
    }
    if flags.triplet {
        let k = AttentionGate::<f64>::KERNEL;
        total += 3 * (2 * k * k + 2);
    }
    total += flags.count() * c * c + 2 * c;
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agmf<T> {
    pub config: AgmfConfig,
    pub gated_unit: Option<GatedUnit<T>>,
    pub fmds: Option<Fmds<T>>,
    pub triplet: Option<TripletAttention<T>>,
    pub fusion_conv: ConvSpec<T>,
    pub fusion_bn: BatchNormSpec<T>,
}

impl<T: Real> Agmf<T> {
    /// Branches are initialized in concat order, then the fusion layer.
    pub fn init<R: Rng + ?Sized>(config: &AgmfConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let flags = config.branches();
        let gated_unit = flags.gated_unit.then(|| GatedUnit::init(rng, c)).transpose()?;
        let fmds = flags
            .fmds
            .then(|| Fmds::init(&config.fmds_config(), rng))
            .transpose()?;
        let triplet = flags.triplet.then(|| TripletAttention::init(rng)).transpose()?;
        Ok(Self {
            config: config.clone(),
            gated_unit,
            fmds,
            triplet,
            fusion_conv: init::pointwise(rng, flags.count() * c, c, false)?,
            fusion_bn: BatchNormSpec::identity(c),
        })
    }

    /// All weights and biases zero, every batch norm the identity.
    pub fn zeros(config: &AgmfConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let flags = config.branches();
        Ok(Self {
            config: config.clone(),
            gated_unit: flags.gated_unit.then(|| GatedUnit::zeros(c)).transpose()?,
            fmds: flags
                .fmds
                .then(|| Fmds::zeros(&config.fmds_config()))
                .transpose()?,
            triplet: flags.triplet.then(TripletAttention::zeros).transpose()?,
            fusion_conv: ConvSpec::zeros(
                ConvGeometry::same(1, 1),
                c,
                flags.count() * c,
                (1, 1),
                false,
            )?,
            fusion_bn: BatchNormSpec::identity(c),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_in(&mut Eager, "agmf", x)
    }

    pub fn forward_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
        let outputs = self.branch_outputs_in(g, prefix, x)?;
        self.fuse_in(g, prefix, &outputs)
    }

    /// Enabled branch outputs in concat order.
    pub fn branch_outputs_in<G: Graph<T>>(
        &self,
        g: &mut G,
        prefix: &str,
        x: &G::Var,
    ) -> Result<Vec<G::Var>> {
        let [_, c, h, w] = g.value(x).dims4()?;
        if c != self.config.channels {
            return Err(Error::ChannelMismatch {
                op: "agmf_forward",
                expected: self.config.channels,
                got: c,
            });
        }
        if self.fmds.is_some() && (h % 2 != 0 || w % 2 != 0) {
            return Err(Error::OddSpatial { height: h, width: w });
        }
        let mut outputs = Vec::with_capacity(3);
        if let Some(gu) = &self.gated_unit {
            outputs.push(gu.forward_in(g, &join(prefix, "gu"), x)?);
        }
        if let Some(fmds) = &self.fmds {
            outputs.push(fmds.forward_in(g, &join(prefix, "fmds"), x)?);
        }
        if let Some(ta) = &self.triplet {
            outputs.push(ta.forward_in(g, &join(prefix, "ta"), x)?);
        }
        if outputs.is_empty() {
            return Err(Error::NoBranches);
        }
        Ok(outputs)
    }

    /// Concat, 1×1 projection to `C`, batch norm, optional SiLU.
    pub fn fuse_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, outputs: &[G::Var]) -> Result<G::Var> {
        let expected = self.config.branches().count();
        if outputs.len() != expected {
            return Err(Error::BranchCount {
                expected,
                got: outputs.len(),
            });
        }
        let first = g.value(&outputs[0]).dims4()?;
        if first[1] != self.config.channels {
            return Err(Error::ChannelMismatch {
                op: "fuse_branches",
                expected: self.config.channels,
                got: first[1],
            });
        }
        for o in &outputs[1..] {
            let s = g.value(o).shape();
            if s != first {
                return Err(Error::ShapeMismatch {
                    op: "fuse_branches",
                    lhs: first.to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let cat = g.concat_channels(outputs)?;
        let z = apply_conv(g, &join(prefix, "fusion.conv"), &self.fusion_conv, &cat)?;
        let n = apply_batch_norm(g, &join(prefix, "fusion.bn"), &self.fusion_bn, &z)?;
        Ok(if self.config.fusion_activation {
            g.silu(&n)
        } else {
            n
        })
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(gu) = &self.gated_unit {
            out.extend(gu.params().into_iter().map(|(n, t)| (format!("gu.{n}"), t)));
        }
        if let Some(f) = &self.fmds {
            out.extend(f.params().into_iter().map(|(n, t)| (format!("fmds.{n}"), t)));
        }
        if let Some(ta) = &self.triplet {
            out.extend(ta.params().into_iter().map(|(n, t)| (format!("ta.{n}"), t)));
        }
        out.push(("fusion.conv.weight".into(), &self.fusion_conv.weight));
        if let Some(b) = &self.fusion_conv.bias {
            out.push(("fusion.conv.bias".into(), b));
        }
        out.push(("fusion.bn.gamma".into(), &self.fusion_bn.gamma));
        out.push(("fusion.bn.beta".into(), &self.fusion_bn.beta));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(gu) = &mut self.gated_unit {
            out.extend(gu.params_mut().into_iter().map(|(n, t)| (format!("gu.{n}"), t)));
        }
        if let Some(f) = &mut self.fmds {
            out.extend(f.params_mut().into_iter().map(|(n, t)| (format!("fmds.{n}"), t)));
        }
        if let Some(ta) = &mut self.triplet {
            out.extend(ta.params_mut().into_iter().map(|(n, t)| (format!("ta.{n}"), t)));
        }
        out.push(("fusion.conv.weight".into(), &mut self.fusion_conv.weight));
        if let Some(b) = &mut self.fusion_conv.bias {
            out.push(("fusion.conv.bias".into(), b));
        }
        out.push(("fusion.bn.gamma".into(), &mut self.fusion_bn.gamma));
        out.push(("fusion.bn.beta".into(), &mut self.fusion_bn.beta));
        out
    }

    /// Every batch norm in the module, for statistics overrides.
    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormSpec<T>> {
        let mut out = Vec::new();
        if let Some(gu) = &mut self.gated_unit {
            out.push(&mut gu.bn);
        }
        if let Some(ta) = &mut self.triplet {
            out.extend(ta.gates.iter_mut().map(|g| &mut g.bn));
        }
        out.push(&mut self.fusion_bn);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Convolution FLOPs per stage. Triplet-attention convolutions run on the
    /// rotated layouts.
    pub fn flops(&self, input_shape: &[usize]) -> Result<Vec<(String, u64)>> {
        let [b, c, h, w] = match *input_shape {
            [b, c, h, w] => [b, c, h, w],
            _ => {
                return Err(Error::Rank {
                    op: "agmf flops",
                    expected: 4,
                    got: input_shape.len(),
                })
            }
        };
        let mut rows = Vec::new();
        if let Some(gu) = &self.gated_unit {
            rows.push(("gu.conv".into(), flop_count(&gu.conv, input_shape)?));
        }
        if let Some(f) = &self.fmds {
            rows.extend(f.flops(input_shape)?.into_iter().map(|(n, v)| (format!("fmds.{n}"), v)));
        }
        if let Some(ta) = &self.triplet {
            let layouts = [[b, 2, h, w], [b, 2, c, w], [b, 2, h, c]];
            for ((gate, name), shape) in ta.gates.iter().zip(["hw", "cw", "ch"]).zip(layouts) {
                rows.push((format!("ta.{name}.conv"), flop_count(&gate.conv, &shape)?));
            }
        }
        let k = self.config.branches().count();
        rows.push((
            "fusion.conv".into(),
            flop_count(&self.fusion_conv, &[b, k * c, h, w])?,
        ));
        Ok(rows)
    }
}
