use super::{dims_to_shape, ArchConfig, LossKind, ModelGraph, Node, NodeId, Op, Param};
use crate::error::{Error, Result};
use crate::tensor::{bilinear_kernel, upsample_kernel_size, Tensor};
use crate::train::xavier_init;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Incremental graph construction. Parameters are initialized as they are
/// declared; each one draws from an RNG seeded by the graph seed and its
/// own name, so a layer gets the same initial weights in every graph that
/// contains it.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Param<f32>>,
    outputs: BTreeMap<String, NodeId>,
    roles: BTreeMap<String, NodeId>,
    seed: u64,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl GraphBuilder {
    pub fn new(seed: u64) -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            params: Vec::new(),
            outputs: BTreeMap::new(),
            roles: BTreeMap::new(),
            seed,
        }
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    pub fn node(&mut self, name: impl Into<String>, op: Op, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            inputs,
            channels,
        });
        self.nodes.len() - 1
    }

    pub fn add_param(&mut self, name: &str, dims: &[usize], value: Tensor<f32>, trainable: bool) {
        self.params.push(Param {
            name: name.to_string(),
            dims: dims.to_vec(),
            value,
            trainable,
            frozen: false,
        });
    }

    pub fn input(&mut self, name: &str, channels: usize) -> NodeId {
        self.node(name, Op::Input { name: name.into() }, vec![], channels)
    }

    /// Square convolution with Xavier-initialized weights and zero bias.
    pub fn conv(&mut self, name: &str, x: NodeId, out: usize, k: usize, pad: usize) -> NodeId {
        let ci = self.channels(x);
        let dims = [out, ci, k, k];
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
        let w = xavier_init(&dims, &mut rng);
        self.conv_with(name, x, w, vec![0.0; out], pad)
    }

    /// Convolution with explicit initial weights and bias.
    pub fn conv_with(&mut self, name: &str, x: NodeId, weight: Tensor<f32>, bias: Vec<f32>, pad: usize) -> NodeId {
        let s = weight.shape();
        let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
        self.add_param(&wn, &[s.n, s.c, s.h, s.w], weight, true);
        let b = Tensor::from_vec(dims_to_shape(&[s.n]), bias).expect("bias length matches output channels");
        self.add_param(&bn, &[s.n], b, true);
        self.node(
            name,
            Op::Conv {
                weight: wn,
                bias: bn,
                stride: 1,
                pad,
            },
            vec![x],
            s.n,
        )
    }

    pub fn conv3x3(&mut self, name: &str, x: NodeId, out: usize) -> NodeId {
        self.conv(name, x, out, 3, 1)
    }

    pub fn conv1x1(&mut self, name: &str, x: NodeId, out: usize) -> NodeId {
        self.conv(name, x, out, 1, 0)
    }

    /// 1×1 convolution that initially averages its inputs: output channel
    /// `o` reads input channels `o, o + out, o + 2·out, …` with equal weight.
    pub fn conv1x1_mean(&mut self, name: &str, x: NodeId, out: usize) -> NodeId {
        let ci = self.channels(x);
        let groups = ci.div_ceil(out);
        let w = Tensor::from_fn(dims_to_shape(&[out, ci, 1, 1]), |o, i, _, _| {
            if i % out == o {
                1.0 / groups as f32
            } else {
                0.0
            }
        });
        self.conv_with(name, x, w, vec![0.0; out], 0)
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.node(name, Op::Relu, vec![x], c)
    }

    pub fn maxpool(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.node(name, Op::MaxPool, vec![x], c)
    }

    pub fn unpool(&mut self, name: &str, x: NodeId, pool: NodeId) -> NodeId {
        let c = self.channels(x);
        self.node(name, Op::Unpool { pool }, vec![x], c)
    }

    pub fn avgpool(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.node(name, Op::AvgPool, vec![x], c)
    }

    /// Learnable upsampling by `factor`, initialized to bilinear
    /// interpolation.
    pub fn upsample(&mut self, name: &str, x: NodeId, factor: usize) -> Result<NodeId> {
        let c = self.channels(x);
        let k = upsample_kernel_size(factor);
        let w = bilinear_kernel::<f32>(c, factor)?;
        let wn = format!("{name}.weight");
        self.add_param(&wn, &[c, c, k, k], w, true);
        Ok(self.node(name, Op::Upsample { weight: wn, factor }, vec![x], c))
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> NodeId {
        let c = xs.iter().map(|&i| self.channels(i)).sum();
        self.node(name, Op::Concat, xs.to_vec(), c)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, cb) = (self.channels(a), self.channels(b));
        if ca != cb {
            return Err(Error::shape("add", "c", ca, cb));
        }
        Ok(self.node(name, Op::Add, vec![a, b], ca))
    }

    pub fn softmax(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        self.node(name, Op::Softmax, vec![x], c)
    }

    pub fn batchnorm(&mut self, name: &str, x: NodeId) -> NodeId {
        let c = self.channels(x);
        let v = |val: f32| Tensor::full(dims_to_shape(&[c]), val);
        let names = ["gamma", "beta", "running_mean", "running_var"].map(|s| format!("{name}.{s}"));
        self.add_param(&names[0], &[c], v(1.0), true);
        self.add_param(&names[1], &[c], v(0.0), true);
        self.add_param(&names[2], &[c], v(0.0), false);
        self.add_param(&names[3], &[c], v(1.0), false);
        let [gamma, beta, mean, var] = names;
        self.node(name, Op::BatchNorm { gamma, beta, mean, var }, vec![x], c)
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, rate: f64) -> NodeId {
        let c = self.channels(x);
        self.node(name, Op::Dropout { rate }, vec![x], c)
    }

    pub fn loss(&mut self, name: &str, x: NodeId, kind: LossKind, weight: f64) -> NodeId {
        self.node(name, Op::Loss { kind, weight }, vec![x], 0)
    }

    pub fn output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn role(&mut self, name: &str, id: NodeId) {
        self.roles.insert(name.to_string(), id);
    }

    pub fn finish(self, config: ArchConfig) -> Result<ModelGraph<f32>> {
        ModelGraph::from_parts(self.nodes, self.params, self.outputs, self.roles, config)
    }
}
