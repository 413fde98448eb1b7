//! Layer graphs: construction, forward/backward execution and weight files.
//!
//! A [`ModelGraph`] is a list of nodes in topological order (every node only
//! references earlier nodes) plus a named parameter store. Forward caches
//! whatever the backward pass needs; backward walks the nodes in reverse and
//! accumulates parameter gradients into each parameter's grad slot.

mod arch;
mod builder;
mod check;
mod weights;

pub use arch::{
    assemble_boundary_segmenter, build_fcn_style, build_boundary_detector, build_multiscale_seg,
    build_scale_branch, build_segmenter, ArchConfig, ModelKind,
};
pub use builder::GraphBuilder;
pub use weights::{
    load_weights, load_weights_partial, save_weights, transfer_params, LoadReport, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
pub(crate) use weights::{read_file, write_file, Reader};
pub use check::{graph_grad_check, GraphCheckConfig};

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{
    add_elementwise, avgpool2, avgpool2_backward, batchnorm, batchnorm_backward, concat_channels,
    conv2d, conv2d_backward, dropout, dropout_backward, loss_softmax_xent, loss_weighted_l2,
    maxpool2, maxpool2_backward, relu, relu_backward, softmax_backward, softmax_channels,
    split_channels, unpool2, unpool2_backward, upsample_tconv, upsample_tconv_backward,
    BatchNormCache, DropoutMask, Mode, PoolIndices, RunningStats, Scalar, Shape, Tensor,
};
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

pub type NodeId = usize;

/// Which supervision a loss attach point receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Weighted Euclidean loss against a soft boundary target.
    BoundaryL2,
    /// Softmax cross-entropy against a label map.
    SegmentationXent,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input {
        name: String,
    },
    Conv {
        weight: String,
        bias: String,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool,
    Unpool {
        pool: NodeId,
    },
    AvgPool,
    Upsample {
        weight: String,
        factor: usize,
    },
    Concat,
    Add,
    Softmax,
    BatchNorm {
        gamma: String,
        beta: String,
        mean: String,
        var: String,
    },
    Dropout {
        rate: f64,
    },
    Loss {
        kind: LossKind,
        weight: f64,
    },
}

/// Coarse layer category, as listed in architecture summaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Input,
    Conv,
    Conv1x1,
    Relu,
    MaxPool,
    Unpool,
    AvgPool,
    TConv,
    Concat,
    Add,
    Softmax,
    BatchNorm,
    Dropout,
    LossAttach,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Output channel count.
    pub channels: usize,
}

/// A named tensor owned by the graph.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    /// Declared dimensions (rank 1 for vectors, rank 4 for kernels).
    pub dims: Vec<usize>,
    pub value: Tensor<S>,
    /// False for buffers such as batch-norm running statistics.
    pub trainable: bool,
    /// Excluded from gradient computation and updates.
    pub frozen: bool,
}

impl<S: Scalar> Param<S> {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn learns(&self) -> bool {
        self.trainable && !self.frozen
    }
}

pub fn dims_to_shape(dims: &[usize]) -> Shape {
    match *dims {
        [a] => Shape::new(a, 1, 1, 1),
        [a, b] => Shape::new(a, b, 1, 1),
        [a, b, c] => Shape::new(a, b, c, 1),
        [a, b, c, d] => Shape::new(a, b, c, d),
        _ => panic!("parameter rank must be 1..=4, got {dims:?}"),
    }
}

#[derive(Clone, Debug)]
enum Cache<S> {
    Empty,
    Pool(PoolIndices),
    BatchNorm(BatchNormCache<S>),
    Dropout(Option<DropoutMask>),
}

/// Per-term and total loss of one evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `(loss node name, weighted value)`.
    pub terms: Vec<(String, f64)>,
}

/// Supervision for the loss attach points. Absent targets switch the
/// corresponding losses off.
#[derive(Clone, Debug, Default)]
pub struct Targets<'a, S> {
    pub labels: Option<Vec<&'a LabelMap>>,
    pub ignore_label: Option<u8>,
    /// `(target scores, per-pixel weights)`, both `(n, 1, h, w)`.
    pub boundary: Option<(&'a Tensor<S>, &'a Tensor<S>)>,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<S = f32> {
    nodes: Vec<Node>,
    params: Vec<Param<S>>,
    param_index: BTreeMap<String, usize>,
    outputs: BTreeMap<String, NodeId>,
    roles: BTreeMap<String, NodeId>,
    config: ArchConfig,
    acts: Vec<Option<Tensor<S>>>,
    caches: Vec<Cache<S>>,
    last_mode: Option<Mode>,
}

impl<S: Scalar> ModelGraph<S> {
    pub(crate) fn from_parts(
        nodes: Vec<Node>,
        params: Vec<Param<S>>,
        outputs: BTreeMap<String, NodeId>,
        roles: BTreeMap<String, NodeId>,
        config: ArchConfig,
    ) -> Result<Self> {
        let mut param_index = BTreeMap::new();
        for (i, p) in params.iter().enumerate() {
            if param_index.insert(p.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        let g = ModelGraph {
            acts: vec![None; nodes.len()],
            caches: vec![Cache::Empty; nodes.len()],
            nodes,
            params,
            param_index,
            outputs,
            roles,
            config,
            last_mode: None,
        };
        g.validate()?;
        Ok(g)
    }

    /// Structural checks: topological references, unpool/pool pairing,
    /// parameter presence and output existence.
    pub fn validate(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(&bad) = node.inputs.iter().find(|&&i| i >= id) {
                return Err(Error::Config(format!(
                    "node `{}` ({id}) references node {bad} which does not precede it",
                    node.name
                )));
            }
            let arity_ok = match &node.op {
                Op::Input { .. } => node.inputs.is_empty(),
                Op::Concat => !node.inputs.is_empty(),
                Op::Add => node.inputs.len() == 2,
                _ => node.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(Error::Config(format!("node `{}` has the wrong number of inputs", node.name)));
            }
            if let Op::Unpool { pool } = node.op {
                if !matches!(self.nodes.get(pool).map(|n| &n.op), Some(Op::MaxPool)) || pool >= id {
                    return Err(Error::Config(format!(
                        "unpool node `{}` must reference a preceding max-pool node",
                        node.name
                    )));
                }
            }
            for name in node_param_names(&node.op) {
                if !self.param_index.contains_key(name) {
                    return Err(Error::Config(format!("node `{}` uses unknown parameter `{name}`", node.name)));
                }
            }
        }
        for (name, &id) in self.outputs.iter().chain(self.roles.iter()) {
            if id >= self.nodes.len() {
                return Err(Error::Config(format!("output `{name}` refers to missing node {id}")));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.param_index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.param_index.get(name).map(|&i| &mut self.params[i])
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }

    pub fn outputs(&self) -> &BTreeMap<String, NodeId> {
        &self.outputs
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    pub fn role(&self, name: &str) -> Option<NodeId> {
        self.roles.get(name).copied()
    }

    /// `(name, channels)` of every graph input.
    pub fn inputs(&self) -> Vec<(String, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input { name } => Some((name.clone(), n.channels)),
                _ => None,
            })
            .collect()
    }

    pub fn input_channels(&self, name: &str) -> Option<usize> {
        self.inputs().into_iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Loss attach points: `(node id, kind, weight)`.
    pub fn loss_points(&self) -> Vec<(NodeId, LossKind, f64)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| match n.op {
                Op::Loss { kind, weight } => Some((id, kind, weight)),
                _ => None,
            })
            .collect()
    }

    /// Sets the weight of every loss point of the given kind.
    pub fn set_loss_weight(&mut self, kind: LossKind, weight: f64, name_filter: impl Fn(&str) -> bool) {
        for n in &mut self.nodes {
            if let Op::Loss { kind: k, weight: w } = &mut n.op {
                if *k == kind && name_filter(&n.name) {
                    *w = weight;
                }
            }
        }
    }

    /// Spatial dims must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (id, n) in self.nodes.iter().enumerate() {
            let d = n.inputs.iter().map(|&i| depth[i]).max().unwrap_or(0);
            depth[id] = match n.op {
                Op::MaxPool | Op::AvgPool => d + 1,
                _ => d,
            };
            max = max.max(depth[id]);
        }
        1 << max
    }

    /// Freezes (or unfreezes) every trainable parameter whose name starts
    /// with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for p in &mut self.params {
            if p.trainable && p.name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Converts parameters to another precision. Runtime caches are dropped.
    pub fn cast<T: Scalar>(&self) -> ModelGraph<T> {
        ModelGraph {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                    frozen: p.frozen,
                })
                .collect(),
            param_index: self.param_index.clone(),
            outputs: self.outputs.clone(),
            roles: self.roles.clone(),
            config: self.config.clone(),
            acts: vec![None; self.nodes.len()],
            caches: vec![Cache::Empty; self.nodes.len()],
            last_mode: None,
        }
    }

    pub(crate) fn into_parts(self) -> (Vec<Node>, Vec<Param<S>>, BTreeMap<String, NodeId>, BTreeMap<String, NodeId>, ArchConfig) {
        (self.nodes, self.params, self.outputs, self.roles, self.config)
    }

    fn p(&self, name: &str) -> &Tensor<S> {
        &self.params[self.param_index[name]].value
    }

    fn act(&self, id: NodeId) -> Result<&Tensor<S>> {
        self.acts[id]
            .as_ref()
            .ok_or_else(|| Error::State(format!("activation of node `{}` is not available", self.nodes[id].name)))
    }

    /// Evaluates the graph in topological order and returns the named
    /// outputs. In train mode everything backward needs is cached.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        inputs: &[(&str, &Tensor<S>)],
        mode: Mode,
        rng: &mut R,
    ) -> Result<BTreeMap<String, Tensor<S>>> {
        let multiple = self.spatial_multiple();
        for (name, t) in inputs {
            let s = t.shape();
            if s.h % multiple != 0 {
                return Err(Error::Data(format!(
                    "input `{name}` height {} is not a multiple of {multiple}",
                    s.h
                )));
            }
            if s.w % multiple != 0 {
                return Err(Error::Data(format!(
                    "input `{name}` width {} is not a multiple of {multiple}",
                    s.w
                )));
            }
        }
        let n = self.nodes.len();
        self.acts = vec![None; n];
        self.caches = vec![Cache::Empty; n];
        self.last_mode = None;

        // In inference, activations are released after their last consumer.
        let mut last_use = vec![0usize; n];
        for (id, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = id;
            }
        }
        let keep: Vec<bool> = (0..n)
            .map(|id| mode == Mode::Train || self.outputs.values().any(|&o| o == id))
            .collect();

        for id in 0..n {
            let node = &self.nodes[id];
            let (out, cache) = match &node.op {
                Op::Input { name } => {
                    let t = inputs
                        .iter()
                        .find(|(k, _)| k == name)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| Error::Data(format!("missing graph input `{name}`")))?;
                    if t.shape().c != node.channels {
                        return Err(Error::shape("forward (input)", "c", node.channels, t.shape().c));
                    }
                    let mut t = t.clone();
                    t.clear_grad();
                    (t, Cache::Empty)
                }
                Op::Conv { weight, bias, stride, pad } => {
                    let x = self.act(node.inputs[0])?;
                    (conv2d(x, self.p(weight), self.p(bias).data(), *stride, *pad)?, Cache::Empty)
                }
                Op::Relu => (relu(self.act(node.inputs[0])?), Cache::Empty),
                Op::MaxPool => {
                    let (y, idx) = maxpool2(self.act(node.inputs[0])?)?;
                    (y, Cache::Pool(idx))
                }
                Op::Unpool { pool } => {
                    let Cache::Pool(idx) = &self.caches[*pool] else {
                        return Err(Error::State(format!("pool indices for `{}` missing", node.name)));
                    };
                    (unpool2(self.act(node.inputs[0])?, idx, idx.source_hw)?, Cache::Empty)
                }
                Op::AvgPool => (avgpool2(self.act(node.inputs[0])?)?, Cache::Empty),
                Op::Upsample { weight, factor } => (
                    upsample_tconv(self.act(node.inputs[0])?, self.p(weight), *factor)?,
                    Cache::Empty,
                ),
                Op::Concat => {
                    let xs = node
                        .inputs
                        .iter()
                        .map(|&i| self.act(i))
                        .collect::<Result<Vec<_>>>()?;
                    (concat_channels(&xs)?, Cache::Empty)
                }
                Op::Add => (
                    add_elementwise(self.act(node.inputs[0])?, self.act(node.inputs[1])?)?,
                    Cache::Empty,
                ),
                Op::Softmax => (softmax_channels(self.act(node.inputs[0])?)?, Cache::Empty),
                Op::BatchNorm { gamma, beta, mean, var } => {
                    let mut stats = RunningStats {
                        mean: self.p(mean).data().to_vec(),
                        var: self.p(var).data().to_vec(),
                    };
                    let (y, cache) = batchnorm(
                        self.act(node.inputs[0])?,
                        self.p(gamma).data(),
                        self.p(beta).data(),
                        mode,
                        &mut stats,
                    )?;
                    if mode == Mode::Train {
                        let (mean, var) = (mean.clone(), var.clone());
                        self.params[self.param_index[&mean]].value.data_mut().copy_from_slice(&stats.mean);
                        self.params[self.param_index[&var]].value.data_mut().copy_from_slice(&stats.var);
                    }
                    (y, cache.map_or(Cache::Empty, Cache::BatchNorm))
                }
                Op::Dropout { rate } => {
                    let (y, mask) = dropout(self.act(node.inputs[0])?, *rate, mode, rng)?;
                    (y, Cache::Dropout(mask))
                }
                Op::Loss { .. } => {
                    // Loss points evaluate lazily against targets.
                    self.caches[id] = Cache::Empty;
                    continue;
                }
            };
            self.acts[id] = Some(out);
            self.caches[id] = cache;
            if mode == Mode::Infer {
                for &i in &self.nodes[id].inputs {
                    if last_use[i] == id && !keep[i] {
                        self.acts[i] = None;
                    }
                }
            }
        }
        self.last_mode = Some(mode);
        let mut out = BTreeMap::new();
        for (name, &id) in &self.outputs {
            out.insert(name.clone(), self.act(id)?.clone());
        }
        Ok(out)
    }

    /// Evaluates the attached losses against `targets` using the cached
    /// forward activations. Returns the breakdown and the gradient seeds.
    pub fn evaluate_losses(&self, targets: &Targets<'_, S>) -> Result<(LossBreakdown, Vec<(NodeId, Tensor<S>)>)> {
        if self.last_mode.is_none() {
            return Err(Error::State("losses requested before forward".into()));
        }
        let mut breakdown = LossBreakdown::default();
        let mut seeds = Vec::new();
        for (id, kind, weight) in self.loss_points() {
            if weight == 0.0 {
                continue;
            }
            let pred = self.act(self.nodes[id].inputs[0])?;
            let (value, grad) = match kind {
                LossKind::SegmentationXent => {
                    let Some(labels) = &targets.labels else { continue };
                    loss_softmax_xent(pred, labels, targets.ignore_label)?
                }
                LossKind::BoundaryL2 => {
                    let Some((target, weights)) = targets.boundary else { continue };
                    if weights.data().iter().all(|&w| w == S::zero()) {
                        continue;
                    }
                    loss_weighted_l2(pred, target, weights)?
                }
            };
            let w = S::cast_from(weight);
            let v = value.as_f64() * weight;
            breakdown.total += v;
            breakdown.terms.push((self.nodes[id].name.clone(), v));
            seeds.push((self.nodes[id].inputs[0], grad.map(|g| g * w)));
        }
        Ok((breakdown, seeds))
    }

    /// Evaluates the losses and backpropagates them.
    pub fn loss_and_backward(&mut self, targets: &Targets<'_, S>) -> Result<LossBreakdown> {
        let (breakdown, seeds) = self.evaluate_losses(targets)?;
        self.backward(seeds)?;
        Ok(breakdown)
    }

    /// Reverse-mode pass from the given output gradients. Parameter
    /// gradients accumulate; call [`ModelGraph::zero_grad`] between steps.
    pub fn backward(&mut self, seeds: Vec<(NodeId, Tensor<S>)>) -> Result<()> {
        match self.last_mode {
            Some(Mode::Train) => {}
            Some(Mode::Infer) => return Err(Error::State("backward after an inference-mode forward".into())),
            None => return Err(Error::State("backward without a preceding forward".into())),
        }
        let n = self.nodes.len();
        let mut requires = vec![false; n];
        for (id, node) in self.nodes.iter().enumerate() {
            requires[id] = node.inputs.iter().any(|&i| requires[i])
                || node_param_names(&node.op)
                    .iter()
                    .any(|name| self.params[self.param_index[*name]].learns());
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; n];
        for (id, g) in seeds {
            accumulate(&mut grads[id], g)?;
        }
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !requires[id] {
                continue;
            }
            let node = self.nodes[id].clone();
            let inp = |k: usize| node.inputs[k];
            match &node.op {
                Op::Input { .. } | Op::Loss { .. } => {}
                Op::Conv { weight, bias, stride, pad } => {
                    let want_input = requires[inp(0)];
                    let cg = conv2d_backward(self.act(inp(0))?, self.p(weight), *stride, *pad, &g, want_input)?;
                    self.add_param_grad(weight, cg.kernel.data());
                    self.add_param_grad(bias, &cg.bias);
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[inp(0)], gi)?;
                    }
                }
                Op::Relu => {
                    let gi = relu_backward(self.act(inp(0))?, &g);
                    accumulate(&mut grads[inp(0)], gi)?;
                }
                Op::MaxPool => {
                    let Cache::Pool(idx) = &self.caches[id] else {
                        return Err(Error::State("max-pool cache missing".into()));
                    };
                    let gi = maxpool2_backward(&g, idx)?;
                    accumulate(&mut grads[inp(0)], gi)?;
                }
                Op::Unpool { pool } => {
                    let Cache::Pool(idx) = &self.caches[*pool] else {
                        return Err(Error::State("unpool indices missing".into()));
                    };
                    let gi = unpool2_backward(&g, idx)?;
                    accumulate(&mut grads[inp(0)], gi)?;
                }
                Op::AvgPool => accumulate(&mut grads[inp(0)], avgpool2_backward(&g))?,
                Op::Upsample { weight, factor } => {
                    let ug = upsample_tconv_backward(self.act(inp(0))?, self.p(weight), *factor, &g)?;
                    self.add_param_grad(weight, ug.kernel.data());
                    accumulate(&mut grads[inp(0)], ug.input)?;
                }
                Op::Concat => {
                    let sizes: Vec<usize> = node.inputs.iter().map(|&i| self.nodes[i].channels).collect();
                    for (&i, part) in node.inputs.iter().zip(split_channels(&g, &sizes)?) {
                        if requires[i] {
                            accumulate(&mut grads[i], part)?;
                        }
                    }
                }
                Op::Add => {
                    accumulate(&mut grads[inp(1)], g.clone())?;
                    accumulate(&mut grads[inp(0)], g)?;
                }
                Op::Softmax => {
                    let gi = softmax_backward(self.act(id)?, &g);
                    accumulate(&mut grads[inp(0)], gi)?;
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    let Cache::BatchNorm(cache) = &self.caches[id] else {
                        return Err(Error::State("batch-norm cache missing".into()));
                    };
                    let bg = batchnorm_backward(cache, self.p(gamma).data(), &g);
                    self.add_param_grad(gamma, &bg.gamma);
                    self.add_param_grad(beta, &bg.beta);
                    accumulate(&mut grads[inp(0)], bg.input)?;
                }
                Op::Dropout { .. } => {
                    let Cache::Dropout(mask) = &self.caches[id] else {
                        return Err(Error::State("dropout mask missing".into()));
                    };
                    let gi = dropout_backward(&g, mask.as_ref());
                    accumulate(&mut grads[inp(0)], gi)?;
                }
            }
        }
        Ok(())
    }

    fn add_param_grad(&mut self, name: &str, g: &[S]) {
        let p = &mut self.params[self.param_index[name]];
        if !p.learns() {
            return;
        }
        for (a, &b) in p.value.grad_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Inference on inputs of any size: reflect-pads to the required
    /// spatial multiple, runs in infer mode and crops the outputs back.
    pub fn infer(&mut self, inputs: &[(&str, &Tensor<S>)]) -> Result<BTreeMap<String, Tensor<S>>> {
        let multiple = self.spatial_multiple();
        let Some((_, first)) = inputs.first() else {
            return Err(Error::Data("no graph inputs given".into()));
        };
        let (h, w) = (first.shape().h, first.shape().w);
        let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        if (ph, pw) == (h, w) {
            return self.forward(inputs, Mode::Infer, &mut rng);
        }
        let padded: Vec<(&str, Tensor<S>)> = inputs.iter().map(|(k, t)| (*k, reflect_pad(t, ph, pw))).collect();
        let refs: Vec<(&str, &Tensor<S>)> = padded.iter().map(|(k, t)| (*k, t)).collect();
        let out = self.forward(&refs, Mode::Infer, &mut rng)?;
        Ok(out.into_iter().map(|(k, t)| (k, crop(&t, h, w))).collect())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            if acc.shape() != g.shape() {
                return Err(Error::shape("backward (accumulate)", "numel", acc.len(), g.len()));
            }
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    Ok(())
}

pub(crate) fn node_param_names(op: &Op) -> Vec<&str> {
    match op {
        Op::Conv { weight, bias, .. } => vec![weight, bias],
        Op::Upsample { weight, .. } => vec![weight],
        Op::BatchNorm { gamma, beta, mean, var } => vec![gamma, beta, mean, var],
        _ => vec![],
    }
}

impl Node {
    pub fn kind<S: Scalar>(&self, graph: &ModelGraph<S>) -> LayerKind {
        match &self.op {
            Op::Input { .. } => LayerKind::Input,
            Op::Conv { weight, .. } => {
                let s = graph.p(weight).shape();
                if s.h == 1 && s.w == 1 {
                    LayerKind::Conv1x1
                } else {
                    LayerKind::Conv
                }
            }
            Op::Relu => LayerKind::Relu,
            Op::MaxPool => LayerKind::MaxPool,
            Op::Unpool { .. } => LayerKind::Unpool,
            Op::AvgPool => LayerKind::AvgPool,
            Op::Upsample { .. } => LayerKind::TConv,
            Op::Concat => LayerKind::Concat,
            Op::Add => LayerKind::Add,
            Op::Softmax => LayerKind::Softmax,
            Op::BatchNorm { .. } => LayerKind::BatchNorm,
            Op::Dropout { .. } => LayerKind::Dropout,
            Op::Loss { .. } => LayerKind::LossAttach,
        }
    }
}

/// Mirror index for reflect padding (edge pixel not repeated).
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

pub(crate) fn reflect_pad<S: Scalar>(t: &Tensor<S>, h: usize, w: usize) -> Tensor<S> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        t.at(n, c, reflect_index(y as isize, s.h), reflect_index(x as isize, s.w))
    })
}

pub(crate) fn crop<S: Scalar>(t: &Tensor<S>, h: usize, w: usize) -> Tensor<S> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| t.at(n, c, y, x))
}
