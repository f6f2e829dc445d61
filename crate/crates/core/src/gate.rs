//! Gated Unit and triplet attention branches.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::conv::{ConvGeometry, ConvSpec};
use crate::graph::{apply_batch_norm, apply_conv, join, Eager, Graph};
use crate::norm::BatchNormSpec;
use crate::{init, Error, Real, Result, Tensor};

/// `y ⊙ sigmoid(bn(conv1x1(y)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedUnit<T> {
    pub conv: ConvSpec<T>,
    pub bn: BatchNormSpec<T>,
}

impl<T: Real> GatedUnit<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: init::pointwise(rng, channels, channels, true)?,
            bn: BatchNormSpec::identity(channels),
        })
    }

    /// Zero conv weight and bias, identity batch norm.
    pub fn zeros(channels: usize) -> Result<Self> {
        Ok(Self {
            conv: ConvSpec::zeros(ConvGeometry::same(1, 1), channels, channels, (1, 1), true)?,
            bn: BatchNormSpec::identity(channels),
        })
    }

    pub fn channels(&self) -> usize {
        self.conv.out_channels()
    }

    pub fn forward(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_in(&mut Eager, "gu", y)
    }

    /// The gate weight map, each entry in `(0, 1)`.
    pub fn gate_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, y: &G::Var) -> Result<G::Var> {
        let c = g.value(y).dims4()?[1];
        if c != self.channels() {
            return Err(Error::ChannelMismatch {
                op: "gated_unit_forward",
                expected: self.channels(),
                got: c,
            });
        }
        let z = apply_conv(g, &join(prefix, "conv"), &self.conv, y)?;
        let n = apply_batch_norm(g, &join(prefix, "bn"), &self.bn, &z)?;
        Ok(g.sigmoid(&n))
    }

    pub fn forward_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, y: &G::Var) -> Result<G::Var> {
        let w = self.gate_in(g, prefix, y)?;
        g.mul(y, &w)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        conv_bn_params(&self.conv, &self.bn, "", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        conv_bn_params_mut(&mut self.conv, &mut self.bn, "", &mut out);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

fn conv_bn_params<'a, T: Real>(
    conv: &'a ConvSpec<T>,
    bn: &'a BatchNormSpec<T>,
    prefix: &str,
    out: &mut Vec<(String, &'a Tensor<T>)>,
) {
    out.push((format!("{prefix}conv.weight"), &conv.weight));
    if let Some(b) = &conv.bias {
        out.push((format!("{prefix}conv.bias"), b));
    }
    out.push((format!("{prefix}bn.gamma"), &bn.gamma));
    out.push((format!("{prefix}bn.beta"), &bn.beta));
}

fn conv_bn_params_mut<'a, T: Real>(
    conv: &'a mut ConvSpec<T>,
    bn: &'a mut BatchNormSpec<T>,
    prefix: &str,
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
) {
    out.push((format!("{prefix}conv.weight"), &mut conv.weight));
    if let Some(b) = &mut conv.bias {
        out.push((format!("{prefix}conv.bias"), b));
    }
    out.push((format!("{prefix}bn.gamma"), &mut bn.gamma));
    out.push((format!("{prefix}bn.beta"), &mut bn.beta));
}

/// Which pair of axes an attention branch gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionBranch {
    /// Pool over channels, gate the `(H, W)` plane.
    HeightWidth,
    /// Rotate to `(B, H, C, W)`, pool over `H`, gate `(C, W)`.
    ChannelWidth,
    /// Rotate to `(B, W, H, C)`, pool over `W`, gate `(H, C)`.
    ChannelHeight,
}

impl AttentionBranch {
    pub const ALL: [AttentionBranch; 3] = [
        AttentionBranch::HeightWidth,
        AttentionBranch::ChannelWidth,
        AttentionBranch::ChannelHeight,
    ];

    /// Axis permutation into the branch layout; each is its own inverse.
    pub fn rotation(self) -> Option<[usize; 4]> {
        match self {
            AttentionBranch::HeightWidth => None,
            AttentionBranch::ChannelWidth => Some([0, 2, 1, 3]),
            AttentionBranch::ChannelHeight => Some([0, 3, 2, 1]),
        }
    }

    fn name(self) -> &'static str {
        match self {
            AttentionBranch::HeightWidth => "hw",
            AttentionBranch::ChannelWidth => "cw",
            AttentionBranch::ChannelHeight => "ch",
        }
    }
}

/// Z-pool, 7×7 conv `2 -> 1`, batch norm, sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGate<T> {
    pub conv: ConvSpec<T>,
    pub bn: BatchNormSpec<T>,
}

impl<T: Real> AttentionGate<T> {
    pub const KERNEL: usize = 7;

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let k = Self::KERNEL;
        Ok(Self {
            conv: init::conv(rng, ConvGeometry::same(k, 1), 1, 2, (k, k), false)?,
            bn: BatchNormSpec::identity(1),
        })
    }

    pub fn zeros() -> Result<Self> {
        let k = Self::KERNEL;
        Ok(Self {
            conv: ConvSpec::zeros(ConvGeometry::same(k, 1), 1, 2, (k, k), false)?,
            bn: BatchNormSpec::identity(1),
        })
    }

    /// Gate map `(B, 1, H', W')` for a tensor already in the branch layout.
    pub fn gate_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
        let pooled = g.zpool(x)?;
        let z = apply_conv(g, &join(prefix, "conv"), &self.conv, &pooled)?;
        let n = apply_batch_norm(g, &join(prefix, "bn"), &self.bn, &z)?;
        Ok(g.sigmoid(&n))
    }

    /// `x ⊙ gate(x)` in the branch layout.
    pub fn apply_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
        let gate = self.gate_in(g, prefix, x)?;
        g.mul_channel_broadcast(x, &gate)
    }

    pub fn num_scalars(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

/// Equal-weight average of three rotated attention branches.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletAttention<T> {
    /// In [`AttentionBranch::ALL`] order.
    pub gates: [AttentionGate<T>; 3],
}

impl<T: Real> TripletAttention<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        Ok(Self {
            gates: [
                AttentionGate::init(rng)?,
                AttentionGate::init(rng)?,
                AttentionGate::init(rng)?,
            ],
        })
    }

    pub fn zeros() -> Result<Self> {
        Ok(Self {
            gates: [AttentionGate::zeros()?, AttentionGate::zeros()?, AttentionGate::zeros()?],
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_in(&mut Eager, "ta", x)
    }

    /// One gated branch, rotated in and back out; output has `x`'s shape.
    pub fn branch_in<G: Graph<T>>(
        &self,
        g: &mut G,
        prefix: &str,
        x: &G::Var,
        branch: AttentionBranch,
    ) -> Result<G::Var> {
        let gate = &self.gates[branch as usize];
        let prefix = join(prefix, branch.name());
        match branch.rotation() {
            None => gate.apply_in(g, &prefix, x),
            Some(axes) => {
                let rotated = g.permute(x, &axes)?;
                let gated = gate.apply_in(g, &prefix, &rotated)?;
                g.permute(&gated, &axes)
            }
        }
    }

    pub fn forward_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<G::Var> {
        g.value(x).dims4()?;
        let mut acc: Option<G::Var> = None;
        for branch in AttentionBranch::ALL {
            let y = self.branch_in(g, prefix, x, branch)?;
            acc = Some(match acc {
                Some(a) => g.add(&a, &y)?,
                None => y,
            });
        }
        let sum = acc.expect("three branches");
        Ok(g.scale(&sum, T::one() / T::real(3.0)))
    }

    /// Gate maps of all three branches, each in its branch layout.
    pub fn gates_in<G: Graph<T>>(&self, g: &mut G, prefix: &str, x: &G::Var) -> Result<Vec<G::Var>> {
        let mut out = Vec::with_capacity(3);
        for branch in AttentionBranch::ALL {
            let gate = &self.gates[branch as usize];
            let prefix = join(prefix, branch.name());
            let input = match branch.rotation() {
                None => x.clone(),
                Some(axes) => g.permute(x, &axes)?,
            };
            out.push(gate.gate_in(g, &prefix, &input)?);
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (gate, branch) in self.gates.iter().zip(AttentionBranch::ALL) {
            conv_bn_params(&gate.conv, &gate.bn, &format!("{}.", branch.name()), &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (gate, branch) in self.gates.iter_mut().zip(AttentionBranch::ALL) {
            conv_bn_params_mut(&mut gate.conv, &mut gate.bn, &format!("{}.", branch.name()), &mut out);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.gates.iter().map(AttentionGate::num_scalars).sum()
    }
}
