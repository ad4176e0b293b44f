//! Static computation graph with a reverse-mode gradient pass.
//!
//! A [`Network`] is a DAG of layer nodes in topological order. `forward` keeps
//! every node's activation; `backward` walks the nodes in reverse, pushing
//! output gradients into inputs and into the parameter registry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{col2im, gemm, im2col, ConvGeometry, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A layer operation; parameters are referenced by index into the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Input,
    Conv2d {
        weight: usize,
        bias: Option<usize>,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    UpsampleNearest {
        factor: usize,
    },
    /// Channel-wise concatenation of all inputs (skip connections).
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    /// Per-sample output extents `(C, H, W)`.
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Serializable description of the graph, without parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<Node>,
    pub output: usize,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    params: Vec<Param>,
    output: usize,
    activations: Option<Vec<Tensor>>,
}

/// Handle to a node while a graph is being built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Incremental graph builder. Node 0 is the input.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Param>,
}

impl GraphBuilder {
    pub fn new(in_channels: usize, height: usize, width: usize) -> Self {
        Self {
            nodes: vec![Node {
                op: Op::Input,
                inputs: vec![],
                shape: [in_channels, height, width],
            }],
            params: Vec::new(),
        }
    }

    pub fn input(&self) -> NodeId {
        NodeId(0)
    }

    pub fn shape(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id.0].shape
    }

    fn add_param(&mut self, name: String, shape: &[usize]) -> Result<usize> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param {
            name,
            tensor: Tensor::zeros(shape),
        });
        Ok(self.params.len() - 1)
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, shape: [usize; 3]) -> NodeId {
        self.nodes.push(Node { op, inputs, shape });
        NodeId(self.nodes.len() - 1)
    }

    /// Square convolution with zero padding `kernel / 2`; parameters start at zero.
    pub fn conv(
        &mut self,
        name: &str,
        input: NodeId,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<NodeId> {
        if kernel == 0 || stride == 0 || out_channels == 0 {
            return Err(Error::invalid("convolution extents must be positive"));
        }
        let [c, h, w] = self.shape(input);
        let padding = kernel / 2;
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::invalid(format!("{name}: kernel larger than input")));
        }
        let weight = self.add_param(format!("{name}.weight"), &[out_channels, c, kernel, kernel])?;
        let bias = if bias {
            Some(self.add_param(format!("{name}.bias"), &[out_channels])?)
        } else {
            None
        };
        let g = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel,
            stride,
            padding,
        };
        Ok(self.push(
            Op::Conv2d {
                weight,
                bias,
                kernel,
                stride,
                padding,
            },
            vec![input.0],
            [out_channels, g.out_height(), g.out_width()],
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let shape = self.shape(input);
        self.push(Op::Relu, vec![input.0], shape)
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> NodeId {
        let shape = self.shape(input);
        self.push(Op::LeakyRelu { slope }, vec![input.0], shape)
    }

    pub fn upsample(&mut self, input: NodeId, factor: usize) -> NodeId {
        let [c, h, w] = self.shape(input);
        self.push(
            Op::UpsampleNearest { factor },
            vec![input.0],
            [c, h * factor, w * factor],
        )
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("concat needs at least one input"))?;
        let [_, h, w] = self.shape(*first);
        let mut channels = 0;
        for id in inputs {
            let [c, hh, ww] = self.shape(*id);
            if (hh, ww) != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: vec![h, w],
                    actual: vec![hh, ww],
                });
            }
            channels += c;
        }
        Ok(self.push(
            Op::Concat,
            inputs.iter().map(|id| id.0).collect(),
            [channels, h, w],
        ))
    }

    pub fn build(self, output: NodeId) -> Network {
        Network {
            nodes: self.nodes,
            params: self.params,
            output: output.0,
            activations: None,
        }
    }
}

impl Network {
    /// Rebuilds a network from its graph description with zeroed parameters.
    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        if spec.nodes.is_empty() || spec.output >= spec.nodes.len() {
            return Err(Error::Checkpoint("graph has no valid output node".into()));
        }
        for (i, node) in spec.nodes.iter().enumerate() {
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(Error::Checkpoint(format!("node {i} is not topologically ordered")));
            }
            if let Op::Conv2d { weight, bias, .. } = node.op {
                if weight >= spec.params.len() || bias.is_some_and(|b| b >= spec.params.len()) {
                    return Err(Error::Checkpoint(format!("node {i} references a missing parameter")));
                }
            }
        }
        let mut names: Vec<&str> = spec.params.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Checkpoint("duplicate parameter names".into()));
        }
        Ok(Self {
            nodes: spec.nodes.clone(),
            params: spec
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: Tensor::zeros(&p.shape),
                })
                .collect(),
            output: spec.output,
            activations: None,
        })
    }

    pub fn spec(&self) -> GraphSpec {
        GraphSpec {
            nodes: self.nodes.clone(),
            output: self.output,
            params: self
                .params
                .iter()
                .map(|p| ParamSpec {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                })
                .collect(),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.nodes[0].shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.nodes[self.output].shape
    }

    /// Weight tensors of every convolution, in graph order.
    pub fn conv_weights(&self) -> impl Iterator<Item = &Param> {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Conv2d { weight, .. } => Some(&self.params[weight]),
            _ => None,
        })
    }

    /// Uniform fan-in scaled weights, `U(-b, b)` with `b = sqrt(6 / fan_in)`; biases zero.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for node in &self.nodes {
            if let Op::Conv2d { weight, bias, .. } = node.op {
                let w = &mut self.params[weight].tensor;
                let fan_in: usize = w.shape()[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                for v in w.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
                if let Some(b) = bias {
                    self.params[b].tensor.data_mut().fill(0.0);
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// Drops the activations retained by the last forward pass.
    pub fn release_activations(&mut self) {
        self.activations = None;
    }

    /// Runs the batch `(N, C_in, H, W)` through the graph and returns `(N, C_out, H_out, W_out)`.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let acts = self.evaluate(batch)?;
        let out = acts[self.output].clone();
        self.activations = Some(acts);
        Ok(out)
    }

    /// Forward pass without retaining intermediates.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut acts = self.evaluate(batch)?;
        Ok(acts.swap_remove(self.output))
    }

    fn evaluate(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        let [c, h, w] = self.input_shape();
        let n = match batch.shape() {
            [n, cc, hh, ww] if (*cc, *hh, *ww) == (c, h, w) && *n > 0 => *n,
            other => {
                return Err(Error::ShapeMismatch {
                    expected: vec![0, c, h, w],
                    actual: other.to_vec(),
                })
            }
        };
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let [oc, oh, ow] = node.shape;
            let out = match &node.op {
                Op::Input => batch.clone(),
                Op::Conv2d {
                    weight,
                    bias,
                    kernel,
                    stride,
                    padding,
                } => {
                    let x = &acts[node.inputs[0]];
                    let [ic, ih, iw] = self.nodes[node.inputs[0]].shape;
                    let g = ConvGeometry {
                        channels: ic,
                        height: ih,
                        width: iw,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    };
                    let wt = self.params[*weight].tensor.data();
                    let b = bias.map(|b| self.params[b].tensor.data());
                    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
                    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
                    for s in 0..n {
                        im2col(x.outer(s), &g, &mut cols);
                        let dst = out.outer_mut(s);
                        gemm(
                            MatRef::new(wt, oc, g.col_rows()),
                            MatRef::new(&cols, g.col_rows(), g.col_cols()),
                            0.0,
                            dst,
                        );
                        if let Some(b) = b {
                            for (plane, bv) in dst.chunks_exact_mut(oh * ow).zip(b) {
                                plane.iter_mut().for_each(|v| *v += bv);
                            }
                        }
                    }
                    out
                }
                Op::Relu => {
                    let x = &acts[node.inputs[0]];
                    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                    Tensor::from_vec(x.shape(), data)?
                }
                Op::LeakyRelu { slope } => {
                    let x = &acts[node.inputs[0]];
                    let data = x
                        .data()
                        .iter()
                        .map(|&v| if v > 0.0 { v } else { v * slope })
                        .collect();
                    Tensor::from_vec(x.shape(), data)?
                }
                Op::UpsampleNearest { factor } => {
                    let x = &acts[node.inputs[0]];
                    let [_, ih, iw] = self.nodes[node.inputs[0]].shape;
                    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
                    for s in 0..n {
                        let src = x.outer(s);
                        let dst = out.outer_mut(s);
                        for ch in 0..oc {
                            for y in 0..oh {
                                let srow = &src[(ch * ih + y / factor) * iw..][..iw];
                                let drow = &mut dst[(ch * oh + y) * ow..][..ow];
                                for (xx, v) in drow.iter_mut().enumerate() {
                                    *v = srow[xx / factor];
                                }
                            }
                        }
                    }
                    out
                }
                Op::Concat => {
                    let mut out = Tensor::zeros(&[n, oc, oh, ow]);
                    for s in 0..n {
                        let dst = out.outer_mut(s);
                        let mut offset = 0;
                        for &i in &node.inputs {
                            let src = acts[i].outer(s);
                            dst[offset..offset + src.len()].copy_from_slice(src);
                            offset += src.len();
                        }
                    }
                    out
                }
            };
            acts.push(out);
        }
        Ok(acts)
    }

    /// Back-propagates `loss_grad` (shaped like the last forward output) and
    /// overwrites every parameter's gradient buffer.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<()> {
        let acts = self.activations.as_ref().ok_or(Error::BackwardBeforeForward)?;
        loss_grad.check_shape(acts[self.output].shape())?;
        let n = loss_grad.shape()[0];

        let mut param_grads: Vec<Vec<f64>> =
            self.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(loss_grad.data().to_vec());

        for idx in (1..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let [oc, oh, ow] = node.shape;
            match &node.op {
                Op::Input => {}
                Op::Conv2d {
                    weight,
                    bias,
                    kernel,
                    stride,
                    padding,
                } => {
                    let src = node.inputs[0];
                    let [ic, ih, iw] = self.nodes[src].shape;
                    let g = ConvGeometry {
                        channels: ic,
                        height: ih,
                        width: iw,
                        kernel: *kernel,
                        stride: *stride,
                        padding: *padding,
                    };
                    let x = &acts[src];
                    let wt = self.params[*weight].tensor.data();
                    let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
                    let mut dcols = vec![0.0; cols.len()];
                    let needs_input_grad = src != 0;
                    let mut dx = needs_input_grad.then(|| vec![0.0; x.len()]);
                    let per_out = oc * oh * ow;
                    let per_in = ic * ih * iw;
                    for s in 0..n {
                        let go = &gout[s * per_out..(s + 1) * per_out];
                        im2col(x.outer(s), &g, &mut cols);
                        gemm(
                            MatRef::new(go, oc, oh * ow),
                            MatRef::new(&cols, g.col_rows(), g.col_cols()).t(),
                            1.0,
                            &mut param_grads[*weight],
                        );
                        if let Some(b) = bias {
                            for (gb, plane) in param_grads[*b].iter_mut().zip(go.chunks_exact(oh * ow)) {
                                *gb += plane.iter().sum::<f64>();
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            gemm(
                                MatRef::new(wt, oc, g.col_rows()).t(),
                                MatRef::new(go, oc, oh * ow),
                                0.0,
                                &mut dcols,
                            );
                            col2im(&dcols, &g, &mut dx[s * per_in..(s + 1) * per_in]);
                        }
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads[src], dx);
                    }
                }
                Op::Relu | Op::LeakyRelu { .. } => {
                    let slope = match node.op {
                        Op::LeakyRelu { slope } => slope,
                        _ => 0.0,
                    };
                    let src = node.inputs[0];
                    let x = acts[src].data();
                    let dx = gout
                        .iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > 0.0 { g } else { g * slope })
                        .collect();
                    accumulate(&mut grads[src], dx);
                }
                Op::UpsampleNearest { factor } => {
                    let src = node.inputs[0];
                    let [ic, ih, iw] = self.nodes[src].shape;
                    let mut dx = vec![0.0; n * ic * ih * iw];
                    for s in 0..n {
                        let go = &gout[s * oc * oh * ow..(s + 1) * oc * oh * ow];
                        let d = &mut dx[s * ic * ih * iw..(s + 1) * ic * ih * iw];
                        for ch in 0..oc {
                            for y in 0..oh {
                                let grow = &go[(ch * oh + y) * ow..][..ow];
                                let drow = &mut d[(ch * ih + y / factor) * iw..][..iw];
                                for (xx, g) in grow.iter().enumerate() {
                                    drow[xx / factor] += g;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[src], dx);
                }
                Op::Concat => {
                    let per_out = oc * oh * ow;
                    let mut offset = 0;
                    for &src in &node.inputs {
                        let [ic, ih, iw] = self.nodes[src].shape;
                        let per_in = ic * ih * iw;
                        let mut dx = vec![0.0; n * per_in];
                        for s in 0..n {
                            dx[s * per_in..(s + 1) * per_in].copy_from_slice(
                                &gout[s * per_out + offset..s * per_out + offset + per_in],
                            );
                        }
                        offset += per_in;
                        accumulate(&mut grads[src], dx);
                    }
                }
            }
        }

        for (p, g) in self.params.iter_mut().zip(param_grads) {
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }

    /// Sign pattern of every rectifier input from the last forward pass.
    ///
    /// Finite-difference checks compare patterns at `θ ± h` to detect when a
    /// perturbation crosses a rectifier kink.
    pub fn rectifier_pattern(&self) -> Option<Vec<bool>> {
        let acts = self.activations.as_ref()?;
        let mut out = Vec::new();
        for node in &self.nodes {
            if matches!(node.op, Op::Relu | Op::LeakyRelu { .. }) {
                out.extend(acts[node.inputs[0]].data().iter().map(|&v| v > 0.0));
            }
        }
        Some(out)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, incoming: Vec<f64>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(incoming).for_each(|(a, b)| *a += b),
        None => *slot = Some(incoming),
    }
}
