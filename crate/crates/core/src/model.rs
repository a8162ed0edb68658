//! Layer graph and parameter storage.
//!
//! A [`Model`] is an ordered list of named [`Node`]s. Residual blocks nest a
//! branch and an optional projection shortcut, so the graph stays a tree and
//! every parameter is reachable by a deterministic traversal. That traversal
//! order defines parameter ids, which gradients and optimizer state use.

use crate::error::{Error, Result};
use crate::layers::{Activation, BatchNorm2dSpec, Conv2dSpec, DropoutSpec, LinearSpec, Mode};
use crate::tensor::{rng_for, InitSpec, Rng, Tensor};
use crate::zoo::{ArchDescriptor, BlockSpec};

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub(crate) id: usize,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self { name: name.into(), value, id: usize::MAX }
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: Conv2dSpec,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub spec: BatchNorm2dSpec,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub spec: LinearSpec,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub spec: BlockSpec,
    pub branch: Vec<Node>,
    /// Empty for an identity shortcut.
    pub shortcut: Vec<Node>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Activation(Activation),
    MaxPool2d,
    AdaptiveAvgPool2d,
    Flatten,
    Linear(Linear),
    Dropout(DropoutSpec),
    Residual(Box<ResidualBlock>),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batchnorm2d",
            Layer::Activation(Activation::Relu) => "relu",
            Layer::Activation(Activation::Sigmoid) => "sigmoid",
            Layer::MaxPool2d => "maxpool2d",
            Layer::AdaptiveAvgPool2d => "adaptive_avgpool2d",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
            Layer::Dropout(_) => "dropout",
            Layer::Residual(_) => "residual",
        }
    }

    /// Convolution with kaiming-normal weights and zero bias. Parameters are
    /// named `{name}.weight` and `{name}.bias`.
    pub fn conv2d(name: &str, spec: Conv2dSpec, seed: u64) -> Layer {
        ParamFactory::new(seed).conv(name, spec)
    }

    /// Batchnorm with unit scale, zero shift, and fresh running statistics.
    pub fn batchnorm2d(name: &str, channels: usize) -> Layer {
        ParamFactory::new(0).batchnorm(name, channels)
    }

    pub fn linear(name: &str, spec: LinearSpec, seed: u64) -> Layer {
        ParamFactory::new(seed).linear(name, spec)
    }

    pub fn dropout(rate: f64) -> Result<Layer> {
        Ok(Layer::Dropout(DropoutSpec::new(rate)?))
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    /// Output-size group this node belongs to in a shape trace
    /// (e.g. `stem`, `stage2`, `fc1`).
    pub group: String,
    pub layer: Layer,
}

impl Node {
    pub fn new(name: impl Into<String>, group: impl Into<String>, layer: Layer) -> Self {
        Self { name: name.into(), group: group.into(), layer }
    }
}

/// Deterministic per-parameter initialization.
pub(crate) struct ParamFactory {
    seed: u64,
    counter: u64,
}

impl ParamFactory {
    pub(crate) fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    fn next_seed(&mut self) -> u64 {
        // splitmix64 step over (seed, counter)
        self.counter += 1;
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub(crate) fn conv(&mut self, name: &str, spec: Conv2dSpec) -> Layer {
        let seed = self.next_seed();
        let weight = Tensor::create(&spec.weight_shape(), &InitSpec::kaiming_normal(spec.fan_in(), seed))
            .expect("conv weight shape");
        let bias = spec.bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])));
        Layer::Conv2d(Conv2d { spec, weight: Param::new(format!("{name}.weight"), weight), bias })
    }

    pub(crate) fn batchnorm(&mut self, name: &str, channels: usize) -> Layer {
        Layer::BatchNorm2d(BatchNorm2d {
            spec: BatchNorm2dSpec::new(channels),
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        })
    }

    pub(crate) fn linear(&mut self, name: &str, spec: LinearSpec) -> Layer {
        let seed = self.next_seed();
        let weight = Tensor::create(&spec.weight_shape(), &InitSpec::kaiming_normal(spec.in_features, seed))
            .expect("linear weight shape");
        let bias = spec.bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_features])));
        Layer::Linear(Linear { spec, weight: Param::new(format!("{name}.weight"), weight), bias })
    }
}

fn visit_params<'a>(nodes: &'a [Node], f: &mut dyn FnMut(&'a Param)) {
    for node in nodes {
        match &node.layer {
            Layer::Conv2d(c) => {
                f(&c.weight);
                c.bias.iter().for_each(&mut *f);
            }
            Layer::BatchNorm2d(b) => {
                f(&b.gamma);
                f(&b.beta);
            }
            Layer::Linear(l) => {
                f(&l.weight);
                l.bias.iter().for_each(&mut *f);
            }
            Layer::Residual(r) => {
                visit_params(&r.branch, f);
                visit_params(&r.shortcut, f);
            }
            _ => {}
        }
    }
}

fn visit_params_mut<'a>(nodes: &'a mut [Node], f: &mut dyn FnMut(&'a mut Param)) {
    for node in nodes {
        match &mut node.layer {
            Layer::Conv2d(c) => {
                f(&mut c.weight);
                c.bias.iter_mut().for_each(&mut *f);
            }
            Layer::BatchNorm2d(b) => {
                f(&mut b.gamma);
                f(&mut b.beta);
            }
            Layer::Linear(l) => {
                f(&mut l.weight);
                l.bias.iter_mut().for_each(&mut *f);
            }
            Layer::Residual(r) => {
                let ResidualBlock { branch, shortcut, .. } = &mut **r;
                visit_params_mut(branch, f);
                visit_params_mut(shortcut, f);
            }
            _ => {}
        }
    }
}

fn visit_buffers<'a>(nodes: &'a [Node], f: &mut dyn FnMut(String, &'a Tensor)) {
    for node in nodes {
        match &node.layer {
            Layer::BatchNorm2d(b) => {
                f(format!("{}.running_mean", node.name), &b.running_mean);
                f(format!("{}.running_var", node.name), &b.running_var);
            }
            Layer::Residual(r) => {
                visit_buffers(&r.branch, f);
                visit_buffers(&r.shortcut, f);
            }
            _ => {}
        }
    }
}

fn visit_buffers_mut<'a>(nodes: &'a mut [Node], f: &mut dyn FnMut(String, &'a mut Tensor)) {
    for node in nodes {
        match &mut node.layer {
            Layer::BatchNorm2d(b) => {
                f(format!("{}.running_mean", node.name), &mut b.running_mean);
                f(format!("{}.running_var", node.name), &mut b.running_var);
            }
            Layer::Residual(r) => {
                let ResidualBlock { branch, shortcut, .. } = &mut **r;
                visit_buffers_mut(branch, f);
                visit_buffers_mut(shortcut, f);
            }
            _ => {}
        }
    }
}

pub(crate) fn visit_nodes<'a>(nodes: &'a [Node], f: &mut dyn FnMut(&'a Node, bool)) {
    fn go<'a>(nodes: &'a [Node], shortcut: bool, f: &mut dyn FnMut(&'a Node, bool)) {
        for node in nodes {
            f(node, shortcut);
            if let Layer::Residual(r) = &node.layer {
                go(&r.branch, shortcut, f);
                go(&r.shortcut, true, f);
            }
        }
    }
    go(nodes, false, f)
}

#[derive(Debug, Clone)]
pub struct Model {
    descriptor: Option<ArchDescriptor>,
    /// Per-sample input shape `[C, H, W]` (or `[F]` for flat inputs), when declared.
    input_shape: Option<Vec<usize>>,
    nodes: Vec<Node>,
    mode: Mode,
    dropout_rng: Rng,
    num_params: usize,
}

impl Model {
    /// A model from an explicit node list. `input_shape` is the per-sample
    /// shape forward passes are checked against, if any.
    pub fn sequential(nodes: Vec<Node>, input_shape: Option<Vec<usize>>, seed: u64) -> Result<Self> {
        let mut model = Self {
            descriptor: None,
            input_shape,
            nodes,
            mode: Mode::Train,
            dropout_rng: rng_for(seed, 1),
            num_params: 0,
        };
        model.assign_ids()?;
        Ok(model)
    }

    pub(crate) fn from_descriptor_nodes(descriptor: ArchDescriptor, nodes: Vec<Node>, seed: u64) -> Result<Self> {
        let input = descriptor.input.to_vec();
        let mut model = Self::sequential(nodes, Some(input), seed)?;
        model.descriptor = Some(descriptor);
        Ok(model)
    }

    fn assign_ids(&mut self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        let mut next = 0;
        let mut dup = None;
        visit_params_mut(&mut self.nodes, &mut |p| {
            p.id = next;
            next += 1;
            if !names.insert(p.name.clone()) {
                dup = Some(p.name.clone());
            }
        });
        if let Some(name) = dup {
            return Err(Error::InvalidSpec(format!("duplicate parameter name `{name}`")));
        }
        self.num_params = next;
        Ok(())
    }

    pub fn descriptor(&self) -> Option<&ArchDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.input_shape.as_deref()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval(&mut self) {
        self.mode = Mode::Eval;
    }

    /// Reseeds the dropout mask generator.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = rng_for(seed, 1);
    }

    pub(crate) fn dropout_rng(&self) -> &Rng {
        &self.dropout_rng
    }

    pub(crate) fn set_dropout_rng(&mut self, rng: Rng) {
        self.dropout_rng = rng;
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Node], &mut Rng) {
        (&mut self.nodes, &mut self.dropout_rng)
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Trainable parameters in id order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::with_capacity(self.num_params);
        visit_params(&self.nodes, &mut |p| out.push(p));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(self.num_params);
        visit_params_mut(&mut self.nodes, &mut |p| out.push(p));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Non-trainable state (batchnorm running statistics), by name.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        visit_buffers(&self.nodes, &mut |name, t| out.push((name, t)));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        visit_buffers_mut(&mut self.nodes, &mut |name, t| out.push((name, t)));
        out
    }

    /// Number of convolution and linear layers on the main path; projection
    /// shortcuts and batchnorm layers are not counted.
    pub fn count_weight_layers(&self) -> usize {
        let mut count = 0;
        visit_nodes(&self.nodes, &mut |node, shortcut| {
            if !shortcut && matches!(node.layer, Layer::Conv2d(_) | Layer::Linear(_)) {
                count += 1;
            }
        });
        count
    }
}

pub fn count_weight_layers(model: &Model) -> usize {
    model.count_weight_layers()
}
