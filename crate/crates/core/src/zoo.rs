//! Architecture descriptors and the builders that materialize them: the
//! modified bottleneck ResNet, the ResNet-18…152 family and the three
//! baselines.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::autograd::forward_in;
use crate::error::{Error, Result};
use crate::layers::{Activation, Conv2dSpec, DropoutSpec, LinearSpec, Mode};
use crate::model::{Layer, Model, Node, ParamFactory, ResidualBlock};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    fn as_str(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
        }
    }
}

/// One residual unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// 1×1 conv + batchnorm on the shortcut.
    pub projection: bool,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, mid_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind,
            in_channels,
            mid_channels,
            out_channels,
            stride,
            projection: stride != 1 || in_channels != out_channels,
        }
    }
}

/// A run of residual blocks; only the first block changes stride or width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub kind: BlockKind,
    pub blocks: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub maxpool: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcSpec {
    pub out_features: usize,
    /// Dropout after the activation; 0 disables it.
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    ModifiedResnet,
    Resnet(u32),
    Logreg,
    Ffnn4,
    Cnn5,
}

impl Arch {
    pub const ALL: [Arch; 9] = [
        Arch::ModifiedResnet,
        Arch::Resnet(18),
        Arch::Resnet(34),
        Arch::Resnet(50),
        Arch::Resnet(101),
        Arch::Resnet(152),
        Arch::Logreg,
        Arch::Ffnn4,
        Arch::Cnn5,
    ];
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::ModifiedResnet => f.write_str("modified-resnet"),
            Arch::Resnet(d) => write!(f, "resnet{d}"),
            Arch::Logreg => f.write_str("logreg"),
            Arch::Ffnn4 => f.write_str("ffnn4"),
            Arch::Cnn5 => f.write_str("cnn5"),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "modified-resnet" => Arch::ModifiedResnet,
            "logreg" => Arch::Logreg,
            "ffnn4" => Arch::Ffnn4,
            "cnn5" => Arch::Cnn5,
            _ => match s.strip_prefix("resnet").and_then(|d| d.parse().ok()) {
                Some(d @ (18 | 34 | 50 | 101 | 152)) => Arch::Resnet(d),
                _ => return Err(Error::InvalidSpec(format!("unknown architecture `{s}`"))),
            },
        })
    }
}

/// Everything needed to rebuild a model: the channel plan is stored at
/// unit width and scaled by `width_mult` when materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchDescriptor {
    pub arch: Arch,
    /// `[C, H, W]`.
    pub input: [usize; 3],
    pub width_mult: f64,
    pub stem: Option<StemSpec>,
    /// Plain `conv3x3 → bn → relu → maxpool` stages (the CNN baseline).
    pub conv_stages: Vec<usize>,
    pub stages: Vec<StageSpec>,
    pub global_pool: bool,
    /// Fully connected chain; ReLU (and dropout) follow every layer but the
    /// last, which feeds the sigmoid.
    pub head: Vec<FcSpec>,
}

pub const MODIFIED_RESNET_BLOCKS: [usize; 4] = [2, 3, 5, 2];
pub const HEAD_DROPOUT: [f64; 3] = [0.5, 0.3, 0.2];
pub const FFNN4_WIDTHS: [usize; 4] = [512, 128, 32, 1];
pub const CNN5_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];
pub const CNN5_HIDDEN: usize = 512;
pub const CNN5_DROPOUT: f64 = 0.5;

fn family_counts(depth: u32) -> Result<(BlockKind, [usize; 4])> {
    Ok(match depth {
        18 => (BlockKind::Basic, [2, 2, 2, 2]),
        34 => (BlockKind::Basic, [3, 4, 6, 3]),
        50 => (BlockKind::Bottleneck, [3, 4, 6, 3]),
        101 => (BlockKind::Bottleneck, [3, 4, 23, 3]),
        152 => (BlockKind::Bottleneck, [3, 8, 36, 3]),
        d => return Err(Error::InvalidSpec(format!("unsupported ResNet depth {d}"))),
    })
}

fn residual_stages(kind: BlockKind, counts: [usize; 4]) -> Vec<StageSpec> {
    let mids = [64, 128, 256, 512];
    let expansion = if kind == BlockKind::Bottleneck { 4 } else { 1 };
    (0..4)
        .map(|i| StageSpec {
            kind,
            blocks: counts[i],
            mid_channels: mids[i],
            out_channels: mids[i] * expansion,
            stride: if i == 0 { 1 } else { 2 },
        })
        .collect()
}

impl ArchDescriptor {
    /// Descriptor for `arch` at the given width multiplier and square input
    /// size (224 and 1.0 reproduce the full-size networks).
    pub fn new(arch: Arch, width_mult: f64, input_hw: usize) -> Result<Self> {
        if !(width_mult > 0.0 && width_mult.is_finite()) {
            return Err(Error::InvalidSpec(format!("width multiplier {width_mult} must be positive")));
        }
        let base = Self {
            arch,
            input: [3, input_hw, input_hw],
            width_mult,
            stem: None,
            conv_stages: Vec::new(),
            stages: Vec::new(),
            global_pool: false,
            head: Vec::new(),
        };
        let d = match arch {
            Arch::ModifiedResnet => Self {
                stem: Some(StemSpec { channels: 64, kernel: 3, stride: 2, maxpool: true }),
                stages: residual_stages(BlockKind::Bottleneck, MODIFIED_RESNET_BLOCKS),
                global_pool: true,
                head: vec![
                    FcSpec { out_features: 2048, dropout: HEAD_DROPOUT[0] },
                    FcSpec { out_features: 512, dropout: HEAD_DROPOUT[1] },
                    FcSpec { out_features: 128, dropout: HEAD_DROPOUT[2] },
                    FcSpec { out_features: 1, dropout: 0.0 },
                ],
                ..base
            },
            Arch::Resnet(depth) => {
                let (kind, counts) = family_counts(depth)?;
                Self {
                    stem: Some(StemSpec { channels: 64, kernel: 7, stride: 2, maxpool: true }),
                    stages: residual_stages(kind, counts),
                    global_pool: true,
                    head: vec![FcSpec { out_features: 1, dropout: 0.0 }],
                    ..base
                }
            }
            Arch::Logreg => Self { head: vec![FcSpec { out_features: 1, dropout: 0.0 }], ..base },
            Arch::Ffnn4 => Self {
                head: FFNN4_WIDTHS.iter().map(|&w| FcSpec { out_features: w, dropout: 0.0 }).collect(),
                ..base
            },
            Arch::Cnn5 => Self {
                conv_stages: CNN5_CHANNELS.to_vec(),
                head: vec![
                    FcSpec { out_features: CNN5_HIDDEN, dropout: CNN5_DROPOUT },
                    FcSpec { out_features: 1, dropout: 0.0 },
                ],
                ..base
            },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn name(&self) -> String {
        self.arch.to_string()
    }

    fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width_mult).round() as usize).max(1)
    }

    /// Total spatial downsampling factor.
    fn reduction(&self) -> usize {
        let mut r = 1;
        if let Some(stem) = &self.stem {
            r *= stem.stride * if stem.maxpool { 2 } else { 1 };
        }
        r <<= self.conv_stages.len();
        for s in &self.stages {
            r *= s.stride;
        }
        r
    }

    fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape { shape: self.input.to_vec(), reason: "empty input".into() });
        }
        let r = self.reduction();
        if h % r != 0 || w % r != 0 {
            return Err(Error::InvalidShape {
                shape: self.input.to_vec(),
                reason: format!("{} needs an input size divisible by {r}", self.arch),
            });
        }
        if self.head.last().map(|f| f.out_features) != Some(1) {
            return Err(Error::InvalidSpec("head must end in a single output".into()));
        }
        for fc in &self.head {
            DropoutSpec::new(fc.dropout)?;
        }
        Ok(())
    }

    /// Output shape (per sample) after each trace group, computed from the
    /// descriptor alone.
    pub fn expected_trace(&self) -> Vec<(String, Vec<usize>)> {
        let [_, mut h, mut w] = self.input;
        let mut c = self.input[0];
        let mut out = Vec::new();
        if let Some(stem) = &self.stem {
            c = self.scaled(stem.channels);
            h = (h + 2 * (stem.kernel / 2) - stem.kernel) / stem.stride + 1;
            w = (w + 2 * (stem.kernel / 2) - stem.kernel) / stem.stride + 1;
            out.push(("stem".to_string(), vec![c, h, w]));
            if stem.maxpool {
                h /= 2;
                w /= 2;
                out.push(("maxpool".to_string(), vec![c, h, w]));
            }
        }
        for (i, &ch) in self.conv_stages.iter().enumerate() {
            c = self.scaled(ch);
            h /= 2;
            w /= 2;
            out.push((format!("conv{}", i + 1), vec![c, h, w]));
        }
        for (i, s) in self.stages.iter().enumerate() {
            c = self.scaled(s.out_channels);
            h /= s.stride;
            w /= s.stride;
            out.push((format!("stage{}", i + 1), vec![c, h, w]));
        }
        let mut features = c * h * w;
        if self.global_pool {
            out.push(("avgpool".to_string(), vec![c, 1, 1]));
            features = c;
        }
        out.push(("flatten".to_string(), vec![features]));
        for (i, fc) in self.head.iter().enumerate() {
            out.push((format!("fc{}", i + 1), vec![fc.out_features]));
        }
        out
    }

    /// Plain-text `key=value` form stored in checkpoints.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "arch={}", self.arch);
        let _ = writeln!(s, "input={},{},{}", self.input[0], self.input[1], self.input[2]);
        let _ = writeln!(s, "width_mult={}", self.width_mult);
        if let Some(st) = &self.stem {
            let _ = writeln!(s, "stem={},{},{},{}", st.channels, st.kernel, st.stride, st.maxpool as u8);
        }
        for c in &self.conv_stages {
            let _ = writeln!(s, "conv_stage={c}");
        }
        for st in &self.stages {
            let _ = writeln!(
                s,
                "stage={},{},{},{},{}",
                st.kind.as_str(),
                st.blocks,
                st.mid_channels,
                st.out_channels,
                st.stride
            );
        }
        let _ = writeln!(s, "global_pool={}", self.global_pool as u8);
        for fc in &self.head {
            let _ = writeln!(s, "fc={},{}", fc.out_features, fc.dropout);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        fn bad(line: &str) -> Error {
            Error::CheckpointFormat(format!("bad descriptor line `{line}`"))
        }
        fn nums<T: FromStr>(v: &str, n: usize, line: &str) -> Result<Vec<T>> {
            let out: Vec<T> = v.split(',').map(|p| p.trim().parse().map_err(|_| bad(line))).collect::<Result<_>>()?;
            if out.len() != n {
                return Err(bad(line));
            }
            Ok(out)
        }
        let mut arch = None;
        let mut input = None;
        let mut width_mult = 1.0;
        let mut stem = None;
        let mut conv_stages = Vec::new();
        let mut stages = Vec::new();
        let mut global_pool = false;
        let mut head = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            match k {
                "arch" => arch = Some(v.parse::<Arch>()?),
                "input" => {
                    let d: Vec<usize> = nums(v, 3, line)?;
                    input = Some([d[0], d[1], d[2]]);
                }
                "width_mult" => width_mult = v.parse().map_err(|_| bad(line))?,
                "stem" => {
                    let d: Vec<usize> = nums(v, 4, line)?;
                    stem = Some(StemSpec { channels: d[0], kernel: d[1], stride: d[2], maxpool: d[3] != 0 });
                }
                "conv_stage" => conv_stages.push(v.parse().map_err(|_| bad(line))?),
                "stage" => {
                    let (kind, rest) = v.split_once(',').ok_or_else(|| bad(line))?;
                    let kind = match kind {
                        "basic" => BlockKind::Basic,
                        "bottleneck" => BlockKind::Bottleneck,
                        _ => return Err(bad(line)),
                    };
                    let d: Vec<usize> = nums(rest, 4, line)?;
                    stages.push(StageSpec { kind, blocks: d[0], mid_channels: d[1], out_channels: d[2], stride: d[3] });
                }
                "global_pool" => global_pool = v == "1",
                "fc" => {
                    let (o, p) = v.split_once(',').ok_or_else(|| bad(line))?;
                    head.push(FcSpec {
                        out_features: o.parse().map_err(|_| bad(line))?,
                        dropout: p.parse().map_err(|_| bad(line))?,
                    });
                }
                _ => {}
            }
        }
        let d = Self {
            arch: arch.ok_or_else(|| Error::CheckpointFormat("descriptor has no arch".into()))?,
            input: input.ok_or_else(|| Error::CheckpointFormat("descriptor has no input".into()))?,
            width_mult,
            stem,
            conv_stages,
            stages,
            global_pool,
            head,
        };
        d.validate()?;
        Ok(d)
    }

    /// Materializes the network with seeded kaiming-normal weights.
    pub fn build(&self, seed: u64) -> Result<Model> {
        self.validate()?;
        let mut f = ParamFactory::new(seed);
        let mut nodes = Vec::new();
        let mut c = self.input[0];
        let [_, mut h, mut w] = self.input;

        if let Some(stem) = &self.stem {
            let out = self.scaled(stem.channels);
            let spec = Conv2dSpec::square(c, out, stem.kernel, stem.stride);
            (h, w) = spec.output_hw(h, w)?;
            push_conv_bn_relu(&mut nodes, &mut f, "stem", "stem", spec);
            if stem.maxpool {
                nodes.push(Node::new("stem.maxpool", "maxpool", Layer::MaxPool2d));
                h /= 2;
                w /= 2;
            }
            c = out;
        }
        for (i, &ch) in self.conv_stages.iter().enumerate() {
            let out = self.scaled(ch);
            let group = format!("conv{}", i + 1);
            push_conv_bn_relu(&mut nodes, &mut f, &group, &group, Conv2dSpec::square(c, out, 3, 1));
            nodes.push(Node::new(format!("{group}.maxpool"), group.clone(), Layer::MaxPool2d));
            h /= 2;
            w /= 2;
            c = out;
        }
        for (si, stage) in self.stages.iter().enumerate() {
            let group = format!("stage{}", si + 1);
            let mid = self.scaled(stage.mid_channels);
            let out = self.scaled(stage.out_channels);
            for b in 0..stage.blocks {
                let stride = if b == 0 { stage.stride } else { 1 };
                let spec = BlockSpec::new(stage.kind, c, mid, out, stride);
                let name = format!("{group}.block{b}");
                nodes.push(Node::new(name.clone(), group.clone(), residual_block(&mut f, &name, spec)));
                c = out;
            }
            h /= stage.stride;
            w /= stage.stride;
        }
        let mut features = c * h * w;
        if self.global_pool {
            nodes.push(Node::new("avgpool", "avgpool", Layer::AdaptiveAvgPool2d));
            features = c;
        }
        nodes.push(Node::new("flatten", "flatten", Layer::Flatten));
        let last = self.head.len() - 1;
        for (i, fc) in self.head.iter().enumerate() {
            let group = format!("fc{}", i + 1);
            nodes.push(Node::new(group.clone(), group.clone(), f.linear(&group, LinearSpec::new(features, fc.out_features))));
            if i == last {
                nodes.push(Node::new("sigmoid", group.clone(), Layer::Activation(Activation::Sigmoid)));
            } else {
                nodes.push(Node::new(format!("{group}.relu"), group.clone(), Layer::Activation(Activation::Relu)));
                if fc.dropout > 0.0 {
                    nodes.push(Node::new(format!("{group}.dropout"), group.clone(), Layer::Dropout(DropoutSpec::new(fc.dropout)?)));
                }
            }
            features = fc.out_features;
        }
        Model::from_descriptor_nodes(self.clone(), nodes, seed)
    }
}

fn push_conv_bn_relu(nodes: &mut Vec<Node>, f: &mut ParamFactory, name: &str, group: &str, spec: Conv2dSpec) {
    nodes.push(Node::new(format!("{name}.conv"), group, f.conv(&format!("{name}.conv"), spec)));
    nodes.push(Node::new(format!("{name}.bn"), group, f.batchnorm(&format!("{name}.bn"), spec.out_channels)));
    nodes.push(Node::new(format!("{name}.relu"), group, Layer::Activation(Activation::Relu)));
}

/// A standalone residual block with seeded weights; parameter names are
/// prefixed by `name`.
pub fn residual_block_layer(name: &str, spec: BlockSpec, seed: u64) -> Layer {
    residual_block(&mut ParamFactory::new(seed), name, spec)
}

fn residual_block(f: &mut ParamFactory, name: &str, spec: BlockSpec) -> Layer {
    let mut branch = Vec::new();
    let conv_bn = |branch: &mut Vec<Node>, f: &mut ParamFactory, i: usize, cs: Conv2dSpec, relu: bool| {
        let conv = format!("{name}.conv{i}");
        let bn = format!("{name}.bn{i}");
        branch.push(Node::new(conv.clone(), name, f.conv(&conv, cs)));
        branch.push(Node::new(bn.clone(), name, f.batchnorm(&bn, cs.out_channels)));
        if relu {
            branch.push(Node::new(format!("{name}.relu{i}"), name, Layer::Activation(Activation::Relu)));
        }
    };
    match spec.kind {
        BlockKind::Bottleneck => {
            conv_bn(&mut branch, f, 1, Conv2dSpec::square(spec.in_channels, spec.mid_channels, 1, 1), true);
            conv_bn(&mut branch, f, 2, Conv2dSpec::square(spec.mid_channels, spec.mid_channels, 3, spec.stride), true);
            conv_bn(&mut branch, f, 3, Conv2dSpec::square(spec.mid_channels, spec.out_channels, 1, 1), false);
        }
        BlockKind::Basic => {
            conv_bn(&mut branch, f, 1, Conv2dSpec::square(spec.in_channels, spec.out_channels, 3, spec.stride), true);
            conv_bn(&mut branch, f, 2, Conv2dSpec::square(spec.out_channels, spec.out_channels, 3, 1), false);
        }
    }
    let mut shortcut = Vec::new();
    if spec.projection {
        let conv = format!("{name}.shortcut.conv");
        let bn = format!("{name}.shortcut.bn");
        shortcut.push(Node::new(conv.clone(), name, f.conv(&conv, Conv2dSpec::square(spec.in_channels, spec.out_channels, 1, spec.stride))));
        shortcut.push(Node::new(bn.clone(), name, f.batchnorm(&bn, spec.out_channels)));
    }
    Layer::Residual(Box::new(ResidualBlock { spec, branch, shortcut }))
}

pub fn build_modified_resnet(width_mult: f64, input_hw: usize, seed: u64) -> Result<Model> {
    ArchDescriptor::new(Arch::ModifiedResnet, width_mult, input_hw)?.build(seed)
}

pub fn build_resnet_family(depth: u32, width_mult: f64, input_hw: usize, seed: u64) -> Result<Model> {
    ArchDescriptor::new(Arch::Resnet(depth), width_mult, input_hw)?.build(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Logreg,
    Ffnn4,
    Cnn5,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(Self::Logreg),
            "ffnn4" => Ok(Self::Ffnn4),
            "cnn5" => Ok(Self::Cnn5),
            _ => Err(Error::InvalidSpec(format!("unknown baseline `{s}`"))),
        }
    }
}

pub fn build_baseline(kind: BaselineKind, width_mult: f64, input_hw: usize, seed: u64) -> Result<Model> {
    let arch = match kind {
        BaselineKind::Logreg => Arch::Logreg,
        BaselineKind::Ffnn4 => Arch::Ffnn4,
        BaselineKind::Cnn5 => Arch::Cnn5,
    };
    ArchDescriptor::new(arch, width_mult, input_hw)?.build(seed)
}

/// Probability of class 1 (MSS) per row, in eval mode, plus the thresholded
/// class (1 when the probability is at least 0.5).
pub fn forward_classify(model: &mut Model, batch: &Tensor) -> Result<(Tensor, Vec<u8>)> {
    let prob = forward_in(model, batch, Mode::Eval)?;
    if prob.rank() != 2 || prob.shape()[1] != 1 {
        return Err(Error::mismatch(format!("classifier output has shape {:?}, expected [N, 1]", prob.shape())));
    }
    let classes = prob.data().iter().map(|&p| classify(p)).collect();
    Ok((prob, classes))
}

pub fn classify(prob: f64) -> u8 {
    u8::from(prob >= 0.5)
}
