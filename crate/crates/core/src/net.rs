//! SNAPNet assembly: a stem convolution, blocks compiled from one SNAP
//! repeated on either side of a stride-2 pooling stage, and a global-pool
//! regression head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{he_uniform, Activation, BatchNormState, DenseParams};
use crate::scalar::Scalar;
use crate::snap::{build_block_graph, BlockGraph, NodeKind, SnapError, SnapSequence};
use crate::tensor::{ConvMode, Graph, ParamId, ParamSet, Tensor, TensorError, Var};

/// Number of pose landmarks regressed by the head (two coordinates each).
pub const LANDMARKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroConfig {
    /// Even; half the blocks sit before the center pooling stage.
    pub blocks_total: usize,
    pub width_pre: usize,
    pub width_post: usize,
    /// Side length of the square single-channel input.
    pub input_size: usize,
    pub landmark_count: usize,
}

impl MacroConfig {
    /// Four blocks at 24/48 channels, used while searching.
    pub fn search() -> Self {
        Self::new(4, 24, 48)
    }

    pub fn snapnet_a() -> Self {
        Self::new(8, 24, 48)
    }

    pub fn snapnet_b() -> Self {
        Self::new(8, 56, 112)
    }

    pub fn new(blocks_total: usize, width_pre: usize, width_post: usize) -> Self {
        Self {
            blocks_total,
            width_pre,
            width_post,
            input_size: 32,
            landmark_count: LANDMARKS,
        }
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn check(&self) -> Result<(), NetError> {
        if self.blocks_total == 0 || self.blocks_total % 2 != 0 {
            return Err(NetError::Config(format!("blocks_total {} must be even and positive", self.blocks_total)));
        }
        if self.width_pre == 0 || self.width_post < self.width_pre {
            return Err(NetError::Config(format!(
                "widths {}/{} must satisfy 0 < pre <= post",
                self.width_pre, self.width_post
            )));
        }
        if self.input_size < 2 || self.landmark_count == 0 {
            return Err(NetError::Config("input size and landmark count must be positive".into()));
        }
        Ok(())
    }

    pub fn outputs(&self) -> usize {
        2 * self.landmark_count
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Snap(#[from] SnapError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bad network config: {0}")]
    Config(String),
}

/// One stage of the macro-architecture. Stage outputs are referred to by
/// their position in [`NetworkSpec::stages`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// 3x3 convolution from the single input channel, with bias.
    Stem { width: usize },
    /// One copy of the block; `inputs` = (input0, input1) stage indices.
    Block { width: usize, inputs: (usize, usize) },
    /// Stride-2 max pooling, then BN + ReLU + 1x1 convolution to the new width.
    Center { width_in: usize, width_out: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub cfg: MacroConfig,
    pub block: BlockGraph,
    pub stages: Vec<Stage>,
}

/// Each block reads the two most recent stage outputs at its resolution.
/// The first block after the stem and the first after the center stage have
/// only one such output, which then feeds both inputs.
pub fn assemble(block: &BlockGraph, cfg: &MacroConfig) -> Result<NetworkSpec, NetError> {
    cfg.check()?;
    let mut stages = vec![Stage::Stem { width: cfg.width_pre }];
    let half = cfg.blocks_total / 2;
    let side = |stages: &mut Vec<Stage>, width: usize| {
        let mut prev2 = stages.len() - 1;
        let mut prev1 = prev2;
        for _ in 0..half {
            stages.push(Stage::Block {
                width,
                inputs: (prev2, prev1),
            });
            prev2 = prev1;
            prev1 = stages.len() - 1;
        }
    };
    side(&mut stages, cfg.width_pre);
    stages.push(Stage::Center {
        width_in: cfg.width_pre,
        width_out: cfg.width_post,
    });
    side(&mut stages, cfg.width_post);
    Ok(NetworkSpec {
        cfg: *cfg,
        block: block.clone(),
        stages,
    })
}

/// Trainable parameters of one block node at width `w`.
pub fn node_param_count(kind: NodeKind, w: usize) -> usize {
    let bn = 2 * w;
    match kind {
        NodeKind::Input0 | NodeKind::Input1 | NodeKind::Maxpool3 | NodeKind::Add => 0,
        NodeKind::BnReluConv1 => bn + w * w + w,
        NodeKind::BnReluConv3 => bn + 9 * w * w + w,
        NodeKind::BnReluDwconv3 => bn + 9 * w + w,
        NodeKind::BnReluDwsconv3 => bn + 9 * w + w * w + w,
        NodeKind::ConcatProj => 2 * bn + 2 * w * w + w,
    }
}

impl NetworkSpec {
    pub fn from_snap(seq: &SnapSequence, cfg: &MacroConfig) -> Result<Self, NetError> {
        assemble(&build_block_graph(seq)?, cfg)
    }

    pub fn final_width(&self) -> usize {
        self.cfg.width_post
    }

    /// Exact trainable parameter count, without instantiating anything.
    pub fn param_count(&self) -> usize {
        let block = |w: usize| -> usize { self.block.nodes.iter().map(|n| node_param_count(n.kind, w)).sum() };
        let body: usize = self
            .stages
            .iter()
            .map(|s| match s {
                Stage::Stem { width } => width * 9 + width,
                Stage::Block { width, .. } => block(*width),
                Stage::Center { width_in, width_out } => 2 * width_in + width_in * width_out + width_out,
            })
            .sum();
        let head = self.final_width() * self.cfg.outputs() + self.cfg.outputs();
        body + head
    }
}

#[derive(Debug, Clone)]
enum NodeLayer {
    Passthrough,
    Conv {
        bn: usize,
        kernel: ParamId,
        bias: ParamId,
        mode: ConvMode,
    },
    Separable {
        bn: usize,
        depthwise: ParamId,
        pointwise: ParamId,
        bias: ParamId,
    },
    Pool,
    Proj {
        bn: usize,
        kernel: ParamId,
        bias: ParamId,
    },
    Add,
}

#[derive(Debug, Clone)]
enum StageLayers {
    Stem { kernel: ParamId, bias: ParamId },
    Block { nodes: Vec<NodeLayer> },
    Center { bn: usize, kernel: ParamId, bias: ParamId },
}

/// An instantiated SNAPNet with its parameters and batch-norm statistics.
#[derive(Debug, Clone)]
pub struct SnapNet<T: Scalar> {
    pub spec: NetworkSpec,
    pub params: ParamSet<T>,
    bn: Vec<BatchNormState<T>>,
    stages: Vec<StageLayers>,
    head: DenseParams,
}

fn conv_kernel<T: Scalar, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    name: String,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> ParamId {
    params.add(name, he_uniform(rng, &[c_out, c_in, k, k], c_in * k * k))
}

impl<T: Scalar> SnapNet<T> {
    /// He-uniform kernels, zero biases, unit BN scale. Parameters are created
    /// in a fixed order, so equal seeds give identical networks.
    pub fn instantiate<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut bn = Vec::new();
        let mut stages = Vec::new();
        for (si, stage) in spec.stages.iter().enumerate() {
            match *stage {
                Stage::Stem { width } => {
                    let kernel = conv_kernel(&mut params, rng, "stem.k".into(), width, 1, 3);
                    let bias = params.add("stem.b", Tensor::zeros(&[width]));
                    stages.push(StageLayers::Stem { kernel, bias });
                }
                Stage::Center { width_in, width_out } => {
                    bn.push(BatchNormState::new(&mut params, "center.bn", width_in));
                    let kernel = conv_kernel(&mut params, rng, "center.k".into(), width_out, width_in, 1);
                    let bias = params.add("center.b", Tensor::zeros(&[width_out]));
                    stages.push(StageLayers::Center {
                        bn: bn.len() - 1,
                        kernel,
                        bias,
                    });
                }
                Stage::Block { width: w, .. } => {
                    let mut nodes = Vec::new();
                    for node in &spec.block.nodes {
                        let p = format!("s{si}.n{}", node.id);
                        let mut new_bn = |params: &mut ParamSet<T>, c: usize| {
                            bn.push(BatchNormState::new(params, &format!("{p}.bn"), c));
                            bn.len() - 1
                        };
                        let layer = match node.kind {
                            NodeKind::Input0 | NodeKind::Input1 => NodeLayer::Passthrough,
                            NodeKind::Maxpool3 => NodeLayer::Pool,
                            NodeKind::Add => NodeLayer::Add,
                            NodeKind::BnReluConv1 | NodeKind::BnReluConv3 => {
                                let k = if node.kind == NodeKind::BnReluConv1 { 1 } else { 3 };
                                let bn = new_bn(&mut params, w);
                                let kernel = conv_kernel(&mut params, rng, format!("{p}.k"), w, w, k);
                                let bias = params.add(format!("{p}.b"), Tensor::zeros(&[w]));
                                NodeLayer::Conv {
                                    bn,
                                    kernel,
                                    bias,
                                    mode: ConvMode::Standard,
                                }
                            }
                            NodeKind::BnReluDwconv3 => {
                                let bn = new_bn(&mut params, w);
                                let kernel = params.add(format!("{p}.k"), he_uniform(rng, &[w, 1, 3, 3], 9));
                                let bias = params.add(format!("{p}.b"), Tensor::zeros(&[w]));
                                NodeLayer::Conv {
                                    bn,
                                    kernel,
                                    bias,
                                    mode: ConvMode::Depthwise,
                                }
                            }
                            NodeKind::BnReluDwsconv3 => {
                                let bn = new_bn(&mut params, w);
                                let depthwise = params.add(format!("{p}.dw"), he_uniform(rng, &[w, 1, 3, 3], 9));
                                let pointwise = conv_kernel(&mut params, rng, format!("{p}.pw"), w, w, 1);
                                let bias = params.add(format!("{p}.b"), Tensor::zeros(&[w]));
                                NodeLayer::Separable {
                                    bn,
                                    depthwise,
                                    pointwise,
                                    bias,
                                }
                            }
                            NodeKind::ConcatProj => {
                                let bn = new_bn(&mut params, 2 * w);
                                let kernel = conv_kernel(&mut params, rng, format!("{p}.k"), w, 2 * w, 1);
                                let bias = params.add(format!("{p}.b"), Tensor::zeros(&[w]));
                                NodeLayer::Proj { bn, kernel, bias }
                            }
                        };
                        nodes.push(layer);
                    }
                    stages.push(StageLayers::Block { nodes });
                }
            }
        }
        let head = DenseParams::new(&mut params, rng, "head", spec.final_width(), spec.cfg.outputs());
        Self {
            spec: spec.clone(),
            params,
            bn,
            stages,
            head,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Parameter ids belonging to each block, in block order.
    pub fn block_params(&self) -> Vec<Vec<ParamId>> {
        let mut out = Vec::new();
        for s in &self.stages {
            if let StageLayers::Block { nodes, .. } = s {
                let mut ids = Vec::new();
                for n in nodes {
                    match n {
                        NodeLayer::Conv { bn, kernel, bias, .. } | NodeLayer::Proj { bn, kernel, bias } => {
                            ids.extend([self.bn[*bn].gamma, self.bn[*bn].beta, *kernel, *bias]);
                        }
                        NodeLayer::Separable {
                            bn,
                            depthwise,
                            pointwise,
                            bias,
                        } => ids.extend([self.bn[*bn].gamma, self.bn[*bn].beta, *depthwise, *pointwise, *bias]),
                        _ => {}
                    }
                }
                out.push(ids);
            }
        }
        out
    }

    /// Maps `x [B, 1, S, S]` to landmark coordinates `[B, 2·landmarks]`.
    /// `vars` must come from `self.params.bind(g)`. Training mode uses batch
    /// statistics and updates the running averages.
    pub fn forward(&mut self, g: &mut Graph<T>, vars: &[Var], x: Var, train: bool) -> Result<Var, TensorError> {
        let mut outs: Vec<Var> = Vec::with_capacity(self.stages.len());
        for si in 0..self.stages.len() {
            let out = match &self.stages[si] {
                StageLayers::Stem { kernel, bias } => {
                    g.conv2d(x, vars[kernel.0], Some(vars[bias.0]), ConvMode::Standard)?
                }
                StageLayers::Center { bn, kernel, bias } => {
                    let (kernel, bias, bn) = (*kernel, *bias, *bn);
                    let prev = *outs.last().expect("center follows a block");
                    let pooled = g.maxpool3(prev, 2)?;
                    let a = self.bn[bn].apply_relu(g, vars, pooled, train)?;
                    g.conv2d(a, vars[kernel.0], Some(vars[bias.0]), ConvMode::Standard)?
                }
                StageLayers::Block { .. } => {
                    let Stage::Block { inputs, .. } = self.spec.stages[si] else {
                        unreachable!("stage layout mirrors spec")
                    };
                    self.block_forward(g, vars, si, (outs[inputs.0], outs[inputs.1]), train)?
                }
            };
            outs.push(out);
        }
        let pooled = g.global_avg_pool(*outs.last().expect("non-empty"))?;
        self.head.apply(g, vars, pooled, Activation::None)
    }

    fn block_forward(
        &mut self,
        g: &mut Graph<T>,
        vars: &[Var],
        si: usize,
        inputs: (Var, Var),
        train: bool,
    ) -> Result<Var, TensorError> {
        let StageLayers::Block { nodes, .. } = &self.stages[si] else {
            unreachable!("called on a block stage")
        };
        let nodes = nodes.clone();
        let graph = &self.spec.block;
        let mut vals: Vec<Var> = Vec::with_capacity(nodes.len());
        for (node, layer) in graph.nodes.iter().zip(&nodes) {
            let pred = |i: usize| vals[node.predecessors[i]];
            let v = match layer {
                NodeLayer::Passthrough => {
                    if node.kind == NodeKind::Input0 {
                        inputs.0
                    } else {
                        inputs.1
                    }
                }
                NodeLayer::Pool => g.maxpool3(pred(0), 1)?,
                NodeLayer::Add => g.add(pred(0), pred(1))?,
                NodeLayer::Conv { bn, kernel, bias, mode } => {
                    let a = self.bn[*bn].apply_relu(g, vars, pred(0), train)?;
                    g.conv2d(a, vars[kernel.0], Some(vars[bias.0]), *mode)?
                }
                NodeLayer::Separable {
                    bn,
                    depthwise,
                    pointwise,
                    bias,
                } => {
                    let a = self.bn[*bn].apply_relu(g, vars, pred(0), train)?;
                    g.conv2d_separable(a, vars[depthwise.0], vars[pointwise.0], Some(vars[bias.0]))?
                }
                NodeLayer::Proj { bn, kernel, bias } => {
                    let cat = g.concat(&[pred(0), pred(1)], 1)?;
                    let a = self.bn[*bn].apply_relu(g, vars, cat, train)?;
                    g.conv2d(a, vars[kernel.0], Some(vars[bias.0]), ConvMode::Standard)?
                }
            };
            vals.push(v);
        }
        Ok(vals[graph.output_id])
    }

    /// Inference on a batch `[B, 1, S, S]` using running BN statistics.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| g.input(t.clone())).collect();
        let xv = g.input(x.clone());
        let y = self.forward(&mut g, &vars, xv, false)?;
        Ok(g.value(y).clone())
    }

    /// Running batch-norm statistics, flattened in layer order (for checkpoints).
    pub fn bn_stats(&self) -> Vec<(Vec<T>, Vec<T>)> {
        self.bn
            .iter()
            .map(|b| (b.running_mean.clone(), b.running_var.clone()))
            .collect()
    }

    pub fn set_bn_stats(&mut self, stats: Vec<(Vec<T>, Vec<T>)>) -> Result<(), NetError> {
        if stats.len() != self.bn.len() {
            return Err(NetError::Config(format!(
                "{} batch-norm layers in checkpoint, {} in network",
                stats.len(),
                self.bn.len()
            )));
        }
        for (b, (m, v)) in self.bn.iter_mut().zip(stats) {
            b.running_mean = m;
            b.running_var = v;
        }
        Ok(())
    }
}

/// Serialized architecture: enough to rebuild the network given a seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureJson {
    pub snap: String,
    pub blocks_total: usize,
    pub width_pre: usize,
    pub width_post: usize,
}
