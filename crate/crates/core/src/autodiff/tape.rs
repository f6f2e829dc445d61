use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{self, sigmoid_backward, silu_backward, zpool_backward};
use crate::conv::{conv2d_backward, conv2d_with, ConvGeometry};
use crate::graph::Graph;
use crate::norm::{batch_norm_backward, batch_norm_with};
use crate::tensor::{self, inverse_permutation, split_channels};
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf { name: String },
    Conv2d { geometry: ConvGeometry },
    BatchNorm { mean: Vec<T>, var: Vec<T>, epsilon: T },
    Sigmoid,
    Silu,
    Add,
    Mul,
    MulChannelBroadcast,
    Scale(T),
    Reshape(Vec<usize>),
    Permute(Vec<usize>),
    Concat,
    ZPool,
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct Perturbation<T> {
    leaf: usize,
    element: usize,
    delta: T,
}

/// Recorded computation. Nodes are appended in evaluation order, so inputs
/// always precede their consumers.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaves: Vec<NodeId>,
    output: Option<NodeId>,
    perturbation: Option<Perturbation<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaves: Vec::new(),
            output: None,
            perturbation: None,
        }
    }

    /// A tape whose `leaf`-th registered leaf has `delta` added to one element.
    pub fn with_perturbation(leaf: usize, element: usize, delta: T) -> Self {
        Self {
            perturbation: Some(Perturbation {
                leaf,
                element,
                delta,
            }),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf_name(&self, leaf: usize) -> &str {
        match &self.nodes[self.leaves[leaf].0].op {
            Op::Leaf { name } => name,
            _ => unreachable!("leaf list only holds leaves"),
        }
    }

    pub fn leaf_value(&self, leaf: usize) -> &Tensor<T> {
        &self.nodes[self.leaves[leaf].0].value
    }

    pub fn node_value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn mark_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>) -> Result<NodeId> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let value = eval(&op, &values)?;
        Ok(self.push_value(op, inputs, value))
    }

    fn push_value(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Re-evaluates every recorded op from the stored leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf { .. } => node.value.clone(),
                _ => {
                    let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &values[i.0]).collect();
                    eval(&node.op, &inputs)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Whether [`replay`](Self::replay) reproduces every recorded value bitwise.
    pub fn replay_matches(&self) -> Result<bool> {
        Ok(self
            .replay()?
            .iter()
            .zip(&self.nodes)
            .all(|(r, n)| r.bitwise_eq(&n.value)))
    }

    /// Smallest top-1/top-2 channel gap over every Z-pool input on the tape.
    pub fn zpool_tie_margin(&self) -> Result<Option<T>> {
        let mut margin: Option<T> = None;
        for node in self.nodes.iter().filter(|n| matches!(n.op, Op::ZPool)) {
            if let Some(m) = activation::zpool_tie_margin(&self.nodes[node.inputs[0].0].value)? {
                margin = Some(margin.map_or(m, |cur| cur.min(m)));
            }
        }
        Ok(margin)
    }

    /// Reverse sweep from the marked output with the given cotangent.
    pub fn backward(&self, cotangent: &Tensor<T>) -> Result<Gradients<T>> {
        let out = self.output.ok_or(Error::NoOutput)?;
        let out_shape = self.nodes[out.0].value.shape();
        if cotangent.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: out_shape.to_vec(),
                rhs: cotangent.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(cotangent.clone());
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let contributions = self.vjp(node, &g)?;
            for (input, d) in node.inputs.iter().zip(contributions) {
                let Some(d) = d else { continue };
                let slot = &mut grads[input.0];
                *slot = Some(match slot.take() {
                    Some(acc) => tensor::elementwise_add(&acc, &d)?,
                    None => d,
                });
            }
            grads[idx] = Some(g);
        }
        let leaves = self
            .leaves
            .iter()
            .map(|id| match grads[id.0].take() {
                Some(g) => Ok(g),
                None => Tensor::zeros(self.nodes[id.0].value.shape()),
            })
            .collect::<Result<Vec<_>>>()?;
        let names = (0..self.leaves.len())
            .map(|i| String::from(self.leaf_name(i)))
            .collect();
        Ok(Gradients { names, leaves })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        Ok(match &node.op {
            Op::Leaf { .. } => Vec::new(),
            Op::Conv2d { geometry } => {
                let has_bias = node.inputs.len() == 3;
                let (dx, dw, db) = conv2d_backward(input(0), input(1), geometry, g, has_bias)?;
                let mut v = vec![Some(dx), Some(dw)];
                if has_bias {
                    v.push(db);
                }
                v
            }
            Op::BatchNorm { mean, var, epsilon } => {
                let (dx, dgamma, dbeta) =
                    batch_norm_backward(input(0), input(1).data(), mean, var, *epsilon, g)?;
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }
            Op::Sigmoid => vec![Some(sigmoid_backward(&node.value, g)?)],
            Op::Silu => vec![Some(silu_backward(input(0), g)?)],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Mul => vec![
                Some(tensor::elementwise_mul(g, input(1))?),
                Some(tensor::elementwise_mul(g, input(0))?),
            ],
            Op::MulChannelBroadcast => {
                let x = input(0);
                let gate = input(1);
                let dx = tensor::mul_channel_broadcast(g, gate)?;
                let [b, c, h, w] = x.dims4()?;
                let plane = h * w;
                let mut dgate = vec![T::zero(); b * plane];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        for p in 0..plane {
                            dgate[bi * plane + p] =
                                dgate[bi * plane + p] + g.data()[off + p] * x.data()[off + p];
                        }
                    }
                }
                vec![Some(dx), Some(Tensor::from_parts(vec![b, 1, h, w], dgate))]
            }
            Op::Scale(k) => vec![Some(g.scale(*k))],
            Op::Reshape(_) => vec![Some(g.reshape_to(input(0).shape())?)],
            Op::Permute(axes) => vec![Some(g.permute(&inverse_permutation(axes))?)],
            Op::Concat => {
                let sizes: Vec<usize> = node
                    .inputs
                    .iter()
                    .map(|i| self.nodes[i.0].value.shape()[1])
                    .collect();
                split_channels(g, &sizes)?.into_iter().map(Some).collect()
            }
            Op::ZPool => vec![Some(zpool_backward(input(0), g)?)],
        })
    }
}

fn eval<T: Real>(op: &Op<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    match op {
        Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
        Op::Conv2d { geometry } => conv2d_with(inputs[0], inputs[1], inputs.get(2).copied(), geometry),
        Op::BatchNorm { mean, var, epsilon } => batch_norm_with(
            inputs[0],
            inputs[1].data(),
            inputs[2].data(),
            mean,
            var,
            *epsilon,
        ),
        Op::Sigmoid => Ok(activation::sigmoid(inputs[0])),
        Op::Silu => Ok(activation::silu(inputs[0])),
        Op::Add => tensor::elementwise_add(inputs[0], inputs[1]),
        Op::Mul => tensor::elementwise_mul(inputs[0], inputs[1]),
        Op::MulChannelBroadcast => tensor::mul_channel_broadcast(inputs[0], inputs[1]),
        Op::Scale(k) => Ok(inputs[0].scale(*k)),
        Op::Reshape(shape) => inputs[0].reshape_to(shape),
        Op::Permute(axes) => inputs[0].permute(axes),
        Op::Concat => tensor::concat_channels(inputs),
        Op::ZPool => activation::zpool(inputs[0]),
    }
}

impl<T: Real> Graph<T> for Tape<T> {
    type Var = NodeId;

    fn leaf(&mut self, name: &str, value: &Tensor<T>) -> NodeId {
        let leaf = self.leaves.len();
        let mut value = value.clone();
        if let Some(p) = self.perturbation.filter(|p| p.leaf == leaf) {
            let v = &mut value.data_mut()[p.element];
            *v = *v + p.delta;
        }
        let id = self.push_value(
            Op::Leaf {
                name: String::from(name),
            },
            Vec::new(),
            value,
        );
        self.leaves.push(id);
        id
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn conv2d(
        &mut self,
        x: &NodeId,
        weight: &NodeId,
        bias: Option<&NodeId>,
        geometry: ConvGeometry,
    ) -> Result<NodeId> {
        let mut inputs = vec![*x, *weight];
        inputs.extend(bias.copied());
        self.push(Op::Conv2d { geometry }, inputs)
    }

    fn batch_norm(
        &mut self,
        x: &NodeId,
        gamma: &NodeId,
        beta: &NodeId,
        mean: &[T],
        var: &[T],
        epsilon: T,
    ) -> Result<NodeId> {
        self.push(
            Op::BatchNorm {
                mean: mean.to_vec(),
                var: var.to_vec(),
                epsilon,
            },
            vec![*x, *gamma, *beta],
        )
    }

    fn sigmoid(&mut self, x: &NodeId) -> NodeId {
        self.push(Op::Sigmoid, vec![*x]).expect("sigmoid is infallible")
    }

    fn silu(&mut self, x: &NodeId) -> NodeId {
        self.push(Op::Silu, vec![*x]).expect("silu is infallible")
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.push(Op::Add, vec![*a, *b])
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.push(Op::Mul, vec![*a, *b])
    }

    fn mul_channel_broadcast(&mut self, x: &NodeId, g: &NodeId) -> Result<NodeId> {
        self.push(Op::MulChannelBroadcast, vec![*x, *g])
    }

    fn scale(&mut self, x: &NodeId, k: T) -> NodeId {
        self.push(Op::Scale(k), vec![*x]).expect("scale is infallible")
    }

    fn reshape(&mut self, x: &NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape(shape.to_vec()), vec![*x])
    }

    fn permute(&mut self, x: &NodeId, axes: &[usize]) -> Result<NodeId> {
        self.push(Op::Permute(axes.to_vec()), vec![*x])
    }

    fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Concat, xs.to_vec())
    }

    fn zpool(&mut self, x: &NodeId) -> Result<NodeId> {
        self.push(Op::ZPool, vec![*x])
    }
}

/// Gradients of every leaf, in registration order.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    names: Vec<String>,
    leaves: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, index: usize) -> &Tensor<T> {
        &self.leaves[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// First leaf registered under `name`.
    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.leaves[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.leaves)
    }
}
