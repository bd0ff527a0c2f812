//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node whose inputs already exist on the tape,
//! so node order is a topological order and the backward sweep is a single
//! reverse pass. Gradients are available for every node, including
//! intermediate feature maps, which is what gradient-based saliency needs.
//!
//! ReLU backward behaviour is a tape-level switch: [`ReluMode::Guided`]
//! passes gradient only where the activation was positive *and* the incoming
//! gradient is positive. The forward graph is identical in both modes.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::ops;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReluMode {
    #[default]
    Standard,
    Guided,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        geo: ConvGeometry,
    },
    Relu(usize),
    MaxPool2 {
        input: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(usize),
    Linear {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Softmax(usize),
    CrossEntropy {
        probs: usize,
        label: usize,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Sum(usize),
    AbsSum(usize),
    SumSquares(usize),
    L2Norm(usize),
    Select {
        input: usize,
        index: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    relu_mode: ReluMode,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_relu_mode(ReluMode::Standard)
    }

    pub fn with_relu_mode(relu_mode: ReluMode) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            relu_mode,
        }
    }

    pub fn relu_mode(&self) -> ReluMode {
        self.relu_mode
    }

    pub fn set_relu_mode(&mut self, mode: ReluMode) {
        self.relu_mode = mode;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, node: NodeId) -> Result<usize> {
        if node.tape != self.id || node.index >= self.nodes.len() {
            return Err(Error::UnknownNode { index: node.index });
        }
        Ok(node.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op });
        NodeId { tape: self.id, index }
    }

    pub fn value(&self, node: NodeId) -> Result<&Tensor> {
        Ok(&self.nodes[self.check(node)?].value)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (i, k, b) = (self.check(input)?, self.check(kernel)?, self.check(bias)?);
        let (x, w, bb) = (&self.nodes[i].value, &self.nodes[k].value, &self.nodes[b].value);
        let geo = ops::conv_geometry(x, w, bb, stride, padding)?;
        let data = kernels::conv2d_forward(&geo, x.data(), w.data(), bb.data());
        let value = Tensor::new([geo.out_channels, geo.out_h(), geo.out_w()], data)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input: i,
                kernel: k,
                bias: b,
                geo,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = ops::relu(&self.nodes[i].value);
        Ok(self.push(value, Op::Relu(i)))
    }

    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let x = &self.nodes[i].value;
        let (c, h, w) = ops::pool_extents(x)?;
        let (data, argmax) = kernels::maxpool2_forward(c, h, w, x.data());
        let value = Tensor::new([c, h / 2, w / 2], data)?;
        Ok(self.push(value, Op::MaxPool2 { input: i, argmax }))
    }

    /// Per-channel spatial mean, `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = ops::global_avg_pool(&self.nodes[i].value)?;
        Ok(self.push(value, Op::GlobalAvgPool(i)))
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (i, w, b) = (self.check(input)?, self.check(weight)?, self.check(bias)?);
        let value = ops::linear(&self.nodes[i].value, &self.nodes[w].value, &self.nodes[b].value)?;
        Ok(self.push(
            value,
            Op::Linear {
                input: i,
                weight: w,
                bias: b,
            },
        ))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = ops::softmax(&self.nodes[i].value)?;
        Ok(self.push(value, Op::Softmax(i)))
    }

    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId> {
        let p = self.check(probs)?;
        let loss = ops::cross_entropy(&self.nodes[p].value, label)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs: p, label }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let mut value = self.nodes[ia].value.clone();
        value.add_assign(&self.nodes[ib].value)?;
        Ok(self.push(value, Op::Add(ia, ib)))
    }

    /// Elementwise product of two equally shaped nodes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        va.expect_same_shape("mul", vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = self.nodes[i].value.scale(factor);
        Ok(self.push(value, Op::Scale(i, factor)))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = Tensor::scalar(self.nodes[i].value.sum());
        Ok(self.push(value, Op::Sum(i)))
    }

    /// `Σ |x|`
    pub fn abs_sum(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = Tensor::scalar(self.nodes[i].value.data().iter().map(|v| v.abs()).sum());
        Ok(self.push(value, Op::AbsSum(i)))
    }

    /// `Σ x²`
    pub fn sum_squares(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let value = Tensor::scalar(self.nodes[i].value.data().iter().map(|v| v * v).sum());
        Ok(self.push(value, Op::SumSquares(i)))
    }

    /// Euclidean norm `sqrt(Σ x²)`; its gradient at the origin is taken as zero.
    pub fn l2_norm(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.check(input)?;
        let ss: f32 = self.nodes[i].value.data().iter().map(|v| v * v).sum();
        Ok(self.push(Tensor::scalar(ss.sqrt()), Op::L2Norm(i)))
    }

    /// Element `index` of a rank-1 node, as a scalar.
    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let i = self.check(input)?;
        let x = &self.nodes[i].value;
        x.expect_rank("select", "input", 1)?;
        if index >= x.numel() {
            return Err(Error::InvalidArgument(format!(
                "select index {index} out of range for length {}",
                x.numel()
            )));
        }
        let value = Tensor::scalar(x.data()[index]);
        Ok(self.push(value, Op::Select { input: i, index }))
    }

    /// Reverse sweep from a scalar `output`, seeding its gradient with 1.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = self.check(output)?;
        if self.nodes[out].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got shape {:?}", self.nodes[out].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; out + 1];
        grads[out] = Some(vec![1.0]);

        for index in (0..=out).rev() {
            let Some(g) = grads[index].take() else {
                continue;
            };
            self.propagate(index, &g, &mut grads);
            grads[index] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|data| Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("gradient shape")))
            .collect();
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn propagate(&self, index: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[index];
        let val = |i: usize| self.nodes[i].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geo,
            } => {
                let cg = kernels::conv2d_backward(geo, val(*input), val(*kernel), g);
                accumulate(grads, *input, cg.input);
                accumulate(grads, *kernel, cg.kernel);
                accumulate(grads, *bias, cg.bias);
            }
            Op::Relu(input) => {
                let x = val(*input);
                let gi = match self.relu_mode {
                    ReluMode::Standard => x
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                    ReluMode::Guided => x
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| if x > 0.0 && g > 0.0 { g } else { 0.0 })
                        .collect(),
                };
                accumulate(grads, *input, gi);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gi = vec![0.0f32; val(*input).len()];
                for (&src, &go) in argmax.iter().zip(g) {
                    gi[src] += go;
                }
                accumulate(grads, *input, gi);
            }
            Op::GlobalAvgPool(input) => {
                let plane = val(*input).len() / g.len();
                let inv = 1.0 / plane as f32;
                let gi = g
                    .iter()
                    .flat_map(|&gc| std::iter::repeat_n(gc * inv, plane))
                    .collect();
                accumulate(grads, *input, gi);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (val(*input), val(*weight));
                let fan_in = x.len();
                let mut gx = vec![0.0f32; fan_in];
                let mut gw = Vec::with_capacity(w.len());
                for (row, &go) in w.chunks_exact(fan_in).zip(g) {
                    for (gxi, &wij) in gx.iter_mut().zip(row) {
                        *gxi += go * wij;
                    }
                    gw.extend(x.iter().map(|&xj| go * xj));
                }
                accumulate(grads, *input, gx);
                accumulate(grads, *weight, gw);
                accumulate(grads, *bias, g.to_vec());
            }
            Op::Softmax(input) => {
                let s = node.value.data();
                let dot: f32 = s.iter().zip(g).map(|(s, g)| s * g).sum();
                let gi = s.iter().zip(g).map(|(&s, &g)| s * (g - dot)).collect();
                accumulate(grads, *input, gi);
            }
            Op::CrossEntropy { probs, label } => {
                let p = val(*probs);
                let mut gi = vec![0.0f32; p.len()];
                if p[*label] >= kernels::PROB_FLOOR {
                    gi[*label] = -g[0] / p[*label];
                }
                accumulate(grads, *probs, gi);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                accumulate(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(input, factor) => {
                accumulate(grads, *input, g.iter().map(|g| g * factor).collect());
            }
            Op::Sum(input) => {
                accumulate(grads, *input, vec![g[0]; val(*input).len()]);
            }
            Op::AbsSum(input) => {
                let gi = val(*input).iter().map(|&x| g[0] * sign(x)).collect();
                accumulate(grads, *input, gi);
            }
            Op::SumSquares(input) => {
                let gi = val(*input).iter().map(|&x| 2.0 * g[0] * x).collect();
                accumulate(grads, *input, gi);
            }
            Op::L2Norm(input) => {
                let norm = node.value.item();
                let gi = if norm > 0.0 {
                    val(*input).iter().map(|&x| g[0] * x / norm).collect()
                } else {
                    vec![0.0; val(*input).len()]
                };
                accumulate(grads, *input, gi);
            }
            Op::Select { input, index } => {
                let mut gi = vec![0.0f32; val(*input).len()];
                gi[*index] = g[0];
                accumulate(grads, *input, gi);
            }
        }
    }
}

fn sign(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], target: usize, contribution: Vec<f32>) {
    match &mut grads[target] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(&contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Gradients of one scalar with respect to every node of the tape it came from.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `node`, or `None` when the output does not depend on it.
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        if node.tape != self.tape {
            return None;
        }
        self.grads.get(node.index).and_then(Option::as_ref)
    }

    /// Gradient of `node`, zero-filled when the output does not depend on it.
    pub fn wrt(&self, node: NodeId) -> Result<Tensor> {
        if node.tape != self.tape || node.index >= self.shapes.len() {
            return Err(Error::UnknownNode { index: node.index });
        }
        Ok(self
            .get(node)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[node.index].clone())))
    }
}
