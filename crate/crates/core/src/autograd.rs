//! Tape-based reverse mode over whole-layer backward rules, and the central
//! finite-difference checker used to validate them.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::layers::{
    activation, activation_backward, adaptive_avgpool2d, adaptive_avgpool2d_backward, batchnorm2d_backward,
    batchnorm2d_eval, batchnorm2d_train, conv2d_backward, conv2d_forward, dropout, dropout_backward, linear,
    linear_backward, maxpool2d, maxpool2d_backward, Activation, BatchNormCache, Mode,
};
use crate::model::{Layer, Model, Node};
use crate::tensor::{rng_for, Rng, Tensor};
use crate::train::bce_loss_and_grad;

/// Intermediates a layer's backward rule needs.
#[derive(Debug)]
enum Saved {
    Conv { input: Tensor },
    BatchNorm { cache: BatchNormCache },
    Activation { output: Tensor, kind: Activation },
    MaxPool { argmax: Vec<usize>, input_shape: Vec<usize> },
    AvgPool { input_shape: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Linear { input: Tensor },
    Dropout { mask: Option<Vec<f64>> },
    Residual { branch: Vec<TapeNode>, shortcut: Vec<TapeNode>, output: Tensor },
}

#[derive(Debug)]
pub struct TapeNode {
    pub op: &'static str,
    pub name: String,
    saved: Saved,
}

/// Record of one forward pass, consumed by [`backward`].
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    mode: Mode,
    input_shape: Vec<usize>,
    consumed: bool,
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op).collect()
    }
}

struct Ctx<'r> {
    mode: Mode,
    record: bool,
    rng: &'r mut Rng,
}

fn forward_node(node: &mut Node, x: Tensor, ctx: &mut Ctx) -> Result<(Tensor, Option<Saved>)> {
    let rec = ctx.record;
    Ok(match &mut node.layer {
        Layer::Conv2d(c) => {
            let y = conv2d_forward(&x, &c.weight.value, c.bias.as_ref().map(|b| &b.value), &c.spec)?;
            (y, rec.then(|| Saved::Conv { input: x }))
        }
        Layer::BatchNorm2d(b) => {
            let (y, cache) = match ctx.mode {
                Mode::Train => batchnorm2d_train(
                    &x,
                    &b.spec,
                    &b.gamma.value,
                    &b.beta.value,
                    &mut b.running_mean,
                    &mut b.running_var,
                )?,
                Mode::Eval => {
                    batchnorm2d_eval(&x, &b.spec, &b.gamma.value, &b.beta.value, &b.running_mean, &b.running_var)?
                }
            };
            (y, rec.then(|| Saved::BatchNorm { cache }))
        }
        Layer::Activation(kind) => {
            let y = activation(&x, *kind);
            let saved = rec.then(|| Saved::Activation { output: y.clone(), kind: *kind });
            (y, saved)
        }
        Layer::MaxPool2d => {
            let (y, argmax) = maxpool2d(&x)?;
            (y, rec.then(|| Saved::MaxPool { argmax, input_shape: x.shape().to_vec() }))
        }
        Layer::AdaptiveAvgPool2d => {
            let y = adaptive_avgpool2d(&x)?;
            (y, rec.then(|| Saved::AvgPool { input_shape: x.shape().to_vec() }))
        }
        Layer::Flatten => {
            let shape = x.shape().to_vec();
            let n = shape[0];
            let y = x.into_shape(&[n, shape[1..].iter().product()])?;
            (y, rec.then_some(Saved::Flatten { input_shape: shape }))
        }
        Layer::Linear(l) => {
            let y = linear(&x, &l.weight.value, l.bias.as_ref().map(|b| &b.value), &l.spec)?;
            (y, rec.then(|| Saved::Linear { input: x }))
        }
        Layer::Dropout(spec) => {
            let (y, mask) = dropout(&x, spec, ctx.mode, ctx.rng)?;
            (y, rec.then_some(Saved::Dropout { mask }))
        }
        Layer::Residual(block) => {
            let (branch_out, branch_tape) = forward_nodes(&mut block.branch, x.clone(), ctx)?;
            let (skip, shortcut_tape) = forward_nodes(&mut block.shortcut, x, ctx)?;
            let mut sum = branch_out;
            sum.add_assign(&skip)?;
            let y = activation(&sum, Activation::Relu);
            let saved = rec.then(|| Saved::Residual { branch: branch_tape, shortcut: shortcut_tape, output: y.clone() });
            (y, saved)
        }
    })
}

fn forward_nodes(nodes: &mut [Node], mut x: Tensor, ctx: &mut Ctx) -> Result<(Tensor, Vec<TapeNode>)> {
    let mut tape = Vec::with_capacity(if ctx.record { nodes.len() } else { 0 });
    for (i, node) in nodes.iter_mut().enumerate() {
        let (y, saved) = forward_node(node, x, ctx).map_err(|e| e.at_layer(i, &node.name))?;
        if let Some(saved) = saved {
            tape.push(TapeNode { op: node.layer.kind(), name: node.name.clone(), saved });
        }
        x = y;
    }
    Ok((x, tape))
}

fn check_input(model: &Model, input: &Tensor) -> Result<()> {
    if let Some(expected) = model.input_shape() {
        if input.rank() < 1 || &input.shape()[1..] != expected {
            return Err(Error::mismatch(format!(
                "model expects input [N, {}], got {:?}",
                expected.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                input.shape()
            )));
        }
    }
    Ok(())
}

/// Runs the model and records everything backward needs.
pub fn forward_record(model: &mut Model, input: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
    check_input(model, input)?;
    let (nodes, rng) = model.parts_mut();
    let mut ctx = Ctx { mode, record: true, rng };
    let (out, nodes) = forward_nodes(nodes, input.clone(), &mut ctx)?;
    Ok((out, Tape { nodes, mode, input_shape: input.shape().to_vec(), consumed: false }))
}

/// Forward pass without recording, in the model's current mode.
pub fn forward(model: &mut Model, input: &Tensor) -> Result<Tensor> {
    let mode = model.mode();
    forward_in(model, input, mode)
}

pub(crate) fn forward_in(model: &mut Model, input: &Tensor, mode: Mode) -> Result<Tensor> {
    check_input(model, input)?;
    let (nodes, rng) = model.parts_mut();
    let mut ctx = Ctx { mode, record: false, rng };
    Ok(forward_nodes(nodes, input.clone(), &mut ctx)?.0)
}

/// Output shape after each trace group, per sample (batch axis dropped).
pub fn shape_trace(model: &mut Model, input: &Tensor) -> Result<Vec<(String, Vec<usize>)>> {
    check_input(model, input)?;
    let (nodes, rng) = model.parts_mut();
    let mut ctx = Ctx { mode: Mode::Eval, record: false, rng };
    let mut x = input.clone();
    let mut trace: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, node) in nodes.iter_mut().enumerate() {
        x = forward_node(node, x, &mut ctx).map_err(|e| e.at_layer(i, &node.name))?.0;
        let shape = x.shape()[1..].to_vec();
        match trace.last_mut() {
            Some((g, s)) if *g == node.group => *s = shape,
            _ => trace.push((node.group.clone(), shape)),
        }
    }
    Ok(trace)
}

/// Gradients of every trainable parameter, indexed by parameter id, and of
/// the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

impl Gradients {
    pub fn zeros_for(model: &Model, input_shape: &[usize]) -> Self {
        Self {
            params: model.params().iter().map(|p| p.value.zeros_like()).collect(),
            input: Tensor::zeros(input_shape),
        }
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.params[id]
    }

    /// Pairs each parameter name with its gradient.
    pub fn named<'a>(&'a self, model: &'a Model) -> Vec<(&'a str, &'a Tensor)> {
        model.params().into_iter().map(|p| (p.name.as_str(), &self.params[p.id()])).collect()
    }
}

fn set_grad(grads: &mut [Tensor], id: usize, g: Tensor) {
    grads[id] = g;
}

fn backward_nodes(nodes: &[Node], tape: &[TapeNode], mut g: Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
    for (i, (node, rec)) in nodes.iter().zip(tape).enumerate().rev() {
        g = backward_node(node, rec, g, grads).map_err(|e| e.at_layer(i, &node.name))?;
    }
    Ok(g)
}

fn backward_node(node: &Node, rec: &TapeNode, g: Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
    Ok(match (&node.layer, &rec.saved) {
        (Layer::Conv2d(c), Saved::Conv { input }) => {
            let r = conv2d_backward(input, &c.weight.value, &c.spec, &g)?;
            set_grad(grads, c.weight.id(), r.weight);
            if let (Some(b), Some(db)) = (&c.bias, r.bias) {
                set_grad(grads, b.id(), db);
            }
            r.input
        }
        (Layer::BatchNorm2d(b), Saved::BatchNorm { cache }) => {
            let r = batchnorm2d_backward(&g, cache, &b.gamma.value)?;
            set_grad(grads, b.gamma.id(), r.gamma);
            set_grad(grads, b.beta.id(), r.beta);
            r.input
        }
        (Layer::Activation(_), Saved::Activation { output, kind }) => activation_backward(&g, output, *kind),
        (Layer::MaxPool2d, Saved::MaxPool { argmax, input_shape }) => maxpool2d_backward(&g, argmax, input_shape)?,
        (Layer::AdaptiveAvgPool2d, Saved::AvgPool { input_shape }) => adaptive_avgpool2d_backward(&g, input_shape)?,
        (Layer::Flatten, Saved::Flatten { input_shape }) => g.into_shape(input_shape)?,
        (Layer::Linear(l), Saved::Linear { input }) => {
            let r = linear_backward(input, &l.weight.value, &l.spec, &g)?;
            set_grad(grads, l.weight.id(), r.weight);
            if let (Some(b), Some(db)) = (&l.bias, r.bias) {
                set_grad(grads, b.id(), db);
            }
            r.input
        }
        (Layer::Dropout(_), Saved::Dropout { mask }) => dropout_backward(&g, mask.as_deref()),
        (Layer::Residual(block), Saved::Residual { branch, shortcut, output }) => {
            let g = activation_backward(&g, output, Activation::Relu);
            let mut dx = backward_nodes(&block.branch, branch, g.clone(), grads)?;
            let dskip = backward_nodes(&block.shortcut, shortcut, g, grads)?;
            dx.add_assign(&dskip)?;
            dx
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "tape entry `{}` does not match layer `{}`",
                rec.op,
                node.layer.kind()
            )))
        }
    })
}

/// Propagates `loss_grad` (dL/d output) back through the recorded pass.
pub fn backward(model: &Model, tape: &mut Tape, loss_grad: &Tensor) -> Result<Gradients> {
    if tape.consumed {
        return Err(Error::TapeConsumed);
    }
    if tape.mode != Mode::Train {
        return Err(Error::TapeNotTrainMode);
    }
    if tape.nodes.len() != model.nodes().len() {
        return Err(Error::InvalidInput("tape was recorded on a different model".into()));
    }
    tape.consumed = true;
    let mut grads: Vec<Tensor> = model.params().iter().map(|p| p.value.zeros_like()).collect();
    let input = backward_nodes(model.nodes(), &tape.nodes, loss_grad.clone(), &mut grads)?;
    for p in model.params() {
        if grads[p.id()].shape() != p.value.shape() {
            return Err(Error::mismatch(format!(
                "gradient of `{}` has shape {:?}, parameter has {:?}",
                p.name,
                grads[p.id()].shape(),
                p.value.shape()
            )));
        }
    }
    if input.shape() != tape.input_shape.as_slice() {
        return Err(Error::mismatch("input gradient shape differs from recorded input"));
    }
    Ok(Gradients { params: grads, input })
}

/// Scalar objective for gradient checking.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// Sum of all outputs.
    Sum,
    /// Sum of outputs weighted by fixed uniform(-1, 1) coefficients.
    WeightedSum { seed: u64 },
    /// Mean binary cross-entropy against the given labels.
    Bce { labels: Tensor },
}

impl LossSpec {
    /// Loss value and dL/d(output).
    pub fn evaluate(&self, output: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            LossSpec::Sum => Ok((output.sum(), Tensor::full(output.shape(), 1.0))),
            LossSpec::WeightedSum { seed } => {
                let w = Tensor::create(output.shape(), &crate::tensor::InitSpec::uniform(-1.0, 1.0, *seed))?;
                let v = output.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                Ok((v, w))
            }
            LossSpec::Bce { labels } => bce_loss_and_grad(output, labels),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub finite: bool,
    /// Elements excluded because the finite-difference interval straddles a
    /// non-differentiable point (see [`MAX_KINK_FRACTION`]).
    pub kinks: usize,
}

/// At most this fraction of checked elements (and at least one) may be
/// excluded as kinks before an entry fails.
pub const MAX_KINK_FRACTION: f64 = 0.05;

impl GradEntry {
    pub fn passed(&self, tolerance: f64) -> bool {
        let kink_budget = (self.checked as f64 * MAX_KINK_FRACTION).max(1.0);
        self.finite && self.max_rel_error < tolerance && self.kinks as f64 <= kink_budget
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    /// One entry per parameter tensor, plus a final `input` entry.
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradEntry> {
        self.entries.iter().filter(|e| !e.passed(self.tolerance))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Elements checked per tensor when it is too large to check exhaustively.
pub const GRAD_CHECK_SAMPLE: usize = 200;

/// Central finite differences with step `1e-5 · max(1, |θ|)` (refined on a
/// mismatch, see [`refine`]) against the
/// analytic gradient, in train mode. Tensors with more than `max_elements`
/// entries are subsampled (seeded); pass `usize::MAX` to check everything.
pub fn grad_check(
    model: &mut Model,
    input: &Tensor,
    loss: &LossSpec,
    tolerance: f64,
    max_elements: usize,
    seed: u64,
) -> Result<GradReport> {
    let max_elements = max_elements.max(GRAD_CHECK_SAMPLE);
    let rng_state = model.dropout_rng().clone();
    // Running statistics drift with every train-mode pass; they do not enter
    // the train-mode output, but restore them so the check leaves no trace.
    let buffers: Vec<Tensor> = model.buffers().into_iter().map(|(_, t)| t.clone()).collect();

    let (out, mut tape) = forward_record(model, input, Mode::Train)?;
    let (_, dl) = loss.evaluate(&out)?;
    let grads = backward(model, &mut tape, &dl)?;
    drop(tape);

    let eval_loss = |model: &mut Model, x: &Tensor| -> Result<f64> {
        model.set_dropout_rng(rng_state.clone());
        let out = forward_in(model, x, Mode::Train)?;
        Ok(loss.evaluate(&out)?.0)
    };

    let base = eval_loss(model, input)?;
    let mut pick = rng_for(seed, 7);
    let mut entries = Vec::new();
    let param_count = model.num_params();
    for id in 0..param_count {
        let (name, len) = {
            let p = &model.params()[id];
            (p.name.clone(), p.value.len())
        };
        let indices: Vec<usize> = if len <= max_elements {
            (0..len).collect()
        } else {
            let mut v = sample(&mut pick, len, max_elements).into_vec();
            v.sort_unstable();
            v
        };
        let mut entry = GradEntry { name, checked: indices.len(), max_rel_error: 0.0, worst_index: 0, finite: true, kinks: 0 };
        for &i in &indices {
            let theta = model.params()[id].value.data()[i];
            let analytic = grads.params[id].data()[i];
            let probe = refine(analytic, 1e-5 * theta.abs().max(1.0), base, tolerance, |h| {
                model.params_mut()[id].value.data_mut()[i] = theta + h;
                let up = eval_loss(model, input);
                model.params_mut()[id].value.data_mut()[i] = theta - h;
                let down = eval_loss(model, input);
                model.params_mut()[id].value.data_mut()[i] = theta;
                Ok((up?, down?))
            })?;
            record(&mut entry, i, analytic, probe, tolerance);
        }
        entries.push(entry);
    }

    let mut entry = GradEntry { name: "input".into(), checked: 0, max_rel_error: 0.0, worst_index: 0, finite: true, kinks: 0 };
    let indices: Vec<usize> = if input.len() <= max_elements {
        (0..input.len()).collect()
    } else {
        sample(&mut pick, input.len(), max_elements).into_vec()
    };
    let mut x = input.clone();
    for &i in &indices {
        let v = x.data()[i];
        let analytic = grads.input.data()[i];
        let probe = refine(analytic, 1e-5 * v.abs().max(1.0), base, tolerance, |h| {
            x.data_mut()[i] = v + h;
            let up = eval_loss(model, &x);
            x.data_mut()[i] = v - h;
            let down = eval_loss(model, &x);
            x.data_mut()[i] = v;
            Ok((up?, down?))
        })?;
        record(&mut entry, i, analytic, probe, tolerance);
    }
    entry.checked = indices.len();
    entries.push(entry);

    model.set_dropout_rng(rng_state);
    for ((_, t), saved) in model.buffers_mut().into_iter().zip(buffers) {
        *t = saved;
    }
    let passed = entries.iter().all(|e| e.passed(tolerance));
    Ok(GradReport { entries, tolerance, passed })
}

/// Loss values around one perturbed element.
struct Probe {
    up: f64,
    base: f64,
    down: f64,
    h: f64,
}

impl Probe {
    fn central(&self) -> f64 {
        (self.up - self.down) / (2.0 * self.h)
    }
}

/// Central difference at step `h0`; on a mismatch, retried at `h0/10` and
/// `h0/100` so that a kink lying close to θ can drop out of the interval. A
/// wrong analytic gradient disagrees at every step. Returns the closest probe.
fn refine(
    analytic: f64,
    h0: f64,
    base: f64,
    tolerance: f64,
    mut losses: impl FnMut(f64) -> Result<(f64, f64)>,
) -> Result<Probe> {
    let mut best: Option<(f64, Probe)> = None;
    for h in [h0, h0 / 10.0, h0 / 100.0] {
        let (up, down) = losses(h)?;
        let p = Probe { up, base, down, h };
        let err = relative_error(analytic, p.central());
        if err < tolerance {
            return Ok(p);
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, p));
        }
    }
    Ok(best.expect("at least one probe").1)
}

fn record(entry: &mut GradEntry, index: usize, analytic: f64, p: Probe, tolerance: f64) {
    let numeric = p.central();
    if !analytic.is_finite() || !numeric.is_finite() {
        if entry.finite {
            entry.worst_index = index;
        }
        entry.finite = false;
        entry.max_rel_error = f64::INFINITY;
        return;
    }
    let err = relative_error(analytic, numeric);
    if err >= tolerance {
        // A ReLU or max-pool switch inside [θ-h, θ+h] makes the one-sided
        // slopes disagree. The analytic value is then a one-sided derivative
        // and must lie between them.
        let fwd = (p.up - p.base) / p.h;
        let bwd = (p.base - p.down) / p.h;
        let slack = tolerance * analytic.abs().max(fwd.abs()).max(bwd.abs()).max(1e-8);
        let between = analytic >= fwd.min(bwd) - slack && analytic <= fwd.max(bwd) + slack;
        if relative_error(fwd, bwd) >= tolerance && between {
            entry.kinks += 1;
            return;
        }
    }
    if err > entry.max_rel_error {
        entry.max_rel_error = err;
        entry.worst_index = index;
    }
}
