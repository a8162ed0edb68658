#![allow(dead_code)]

use msinet::autograd::LossSpec;
use msinet::layers::{Activation, Conv2dSpec, LinearSpec};
use msinet::tensor::rng_for;
use rand::Rng as _;
use msinet::model::{Layer, Node};
use msinet::zoo::{residual_block_layer, BlockKind, BlockSpec};
use msinet::{build_baseline, ArchDescriptor, Arch, BaselineKind, InitSpec, Model, Tensor};

pub const GRAD_TOL: f64 = 1e-4;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::create(shape, &InitSpec::uniform(lo, hi, seed)).unwrap()
}

/// Replaces every parameter with seeded uniform values so that zero biases
/// and unit batchnorm scales do not hide errors.
pub fn randomize_params(model: &mut Model, seed: u64) {
    for (k, p) in model.params_mut().into_iter().enumerate() {
        let (lo, hi) = if p.name.ends_with(".gamma") { (0.5, 1.5) } else { (-0.5, 0.5) };
        p.value = uniform(p.value.shape(), lo, hi, seed.wrapping_mul(31).wrapping_add(k as u64));
    }
}

fn single(name: &str, layer: Layer, sample: &[usize]) -> Model {
    Model::sequential(vec![Node::new(name, name, layer)], Some(sample.to_vec()), 11).unwrap()
}

fn batch_shape(n: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(sample);
    s
}

pub struct GradCase {
    pub name: &'static str,
    pub model: Model,
    pub input: Tensor,
    pub loss: LossSpec,
}

fn case(name: &'static str, mut model: Model, input: Tensor, seed: u64) -> GradCase {
    randomize_params(&mut model, seed);
    GradCase { name, model, input, loss: LossSpec::WeightedSum { seed: seed + 100 } }
}

/// One isolated model per layer type.
pub fn layer_cases() -> Vec<GradCase> {
    let mut v = Vec::new();

    let spec = Conv2dSpec::square(2, 3, 3, 1);
    v.push(case("conv2d 3x3 s1", single("conv", Layer::conv2d("conv", spec, 1), &[2, 5, 5]), uniform(&[2, 2, 5, 5], -1.0, 1.0, 2), 3));

    let spec = Conv2dSpec::square(3, 4, 3, 2).with_bias(true);
    v.push(case("conv2d 3x3 s2 bias", single("conv", Layer::conv2d("conv", spec, 4), &[3, 7, 7]), uniform(&[2, 3, 7, 7], -1.0, 1.0, 5), 6));

    let spec = Conv2dSpec::square(3, 2, 7, 2);
    v.push(case("conv2d 7x7 s2", single("conv", Layer::conv2d("conv", spec, 7), &[3, 10, 10]), uniform(&[2, 3, 10, 10], -1.0, 1.0, 8), 9));

    let spec = Conv2dSpec::square(4, 6, 1, 2);
    v.push(case("conv2d 1x1 s2", single("conv", Layer::conv2d("conv", spec, 10), &[4, 6, 6]), uniform(&[2, 4, 6, 6], -1.0, 1.0, 11), 12));

    v.push(case("batchnorm2d", single("bn", Layer::batchnorm2d("bn", 3), &[3, 3, 3]), uniform(&[4, 3, 3, 3], -2.0, 2.0, 13), 14));

    let spec = LinearSpec::new(5, 3);
    v.push(case("linear", single("fc", Layer::linear("fc", spec, 15), &[5]), uniform(&[4, 5], -1.0, 1.0, 16), 17));

    // keep ReLU inputs away from the kink
    let x = uniform(&[3, 2, 4, 4], -1.0, 1.0, 18).map(|v| if v.abs() < 0.1 { v + 0.2f64.copysign(v) } else { v });
    v.push(case("relu", single("relu", Layer::Activation(Activation::Relu), &[2, 4, 4]), x, 19));

    v.push(case("sigmoid", single("sigmoid", Layer::Activation(Activation::Sigmoid), &[6]), uniform(&[3, 6], -4.0, 4.0, 20), 21));

    v.push(case("maxpool2d", single("pool", Layer::MaxPool2d, &[2, 6, 6]), uniform(&[2, 2, 6, 6], -1.0, 1.0, 22), 23));

    v.push(case("adaptive_avgpool2d", single("gap", Layer::AdaptiveAvgPool2d, &[3, 4, 4]), uniform(&[2, 3, 4, 4], -1.0, 1.0, 24), 25));

    let nodes = vec![
        Node::new("flatten", "flatten", Layer::Flatten),
        Node::new("fc", "fc", Layer::linear("fc", LinearSpec::new(2 * 3 * 3, 2), 26)),
    ];
    let m = Model::sequential(nodes, Some(vec![2, 3, 3]), 0).unwrap();
    v.push(case("flatten", m, uniform(&[2, 2, 3, 3], -1.0, 1.0, 27), 28));

    v.push(case("dropout", single("drop", Layer::dropout(0.5).unwrap(), &[20]), uniform(&[4, 20], -1.0, 1.0, 29), 30));

    let spec = BlockSpec::new(BlockKind::Bottleneck, 4, 2, 8, 2);
    v.push(case("residual bottleneck + projection", single("block", residual_block_layer("block", spec, 31), &[4, 6, 6]), uniform(&[2, 4, 6, 6], -1.0, 1.0, 32), 33));

    let spec = BlockSpec::new(BlockKind::Basic, 3, 3, 3, 1);
    v.push(case("residual basic identity", single("block", residual_block_layer("block", spec, 34), &[3, 5, 5]), uniform(&[2, 3, 5, 5], -1.0, 1.0, 35), 36));

    let mut m = build_baseline(BaselineKind::Logreg, 1.0, 8, 37).unwrap();
    randomize_params(&mut m, 38);
    let labels = Tensor::new(&[3, 1], vec![0.0, 1.0, 1.0]).unwrap();
    v.push(GradCase { name: "logreg 8x8", model: m, input: uniform(&[3, 3, 8, 8], -1.0, 1.0, 39), loss: LossSpec::Bce { labels } });

    v
}

/// cnn5 at 32×32 with BCE on a mixed-label batch of two.
pub fn cnn5_case(width_mult: f64, seed: u64) -> GradCase {
    let model = ArchDescriptor::new(Arch::Cnn5, width_mult, 32).unwrap().build(seed).unwrap();
    let input = uniform(&[2, 3, 32, 32], -1.0, 1.0, seed ^ 0x5eed);
    let labels = Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap();
    GradCase { name: "cnn5 32x32", model, input, loss: LossSpec::Bce { labels } }
}

pub fn batch_of(n: usize, sample: &[usize], seed: u64) -> Tensor {
    uniform(&batch_shape(n, sample), -1.0, 1.0, seed)
}

/// Random convolution spec and operands, seeded.
pub fn random_conv(seed: u64) -> (Tensor, Tensor, Option<Tensor>, Conv2dSpec) {
    let mut rng = rng_for(seed, 0);
    let kh = [1, 2, 3, 5, 7][rng.random_range(0..5)];
    let kw = if rng.random_bool(0.7) { kh } else { [1, 3, 5][rng.random_range(0..3)] };
    let spec = Conv2dSpec {
        in_channels: rng.random_range(1..=5),
        out_channels: rng.random_range(1..=6),
        kernel: (kh, kw),
        stride: (rng.random_range(1..=3), rng.random_range(1..=3)),
        padding: (rng.random_range(0..=kh / 2 + 1), rng.random_range(0..=kw / 2 + 1)),
        bias: rng.random_bool(0.5),
    };
    let n = rng.random_range(1..=3);
    let h = rng.random_range(kh.max(3)..=12);
    let w = rng.random_range(kw.max(3)..=12);
    let x = Tensor::create(&[n, spec.in_channels, h, w], &InitSpec::uniform(-1.0, 1.0, seed * 3 + 1)).unwrap();
    let wt = Tensor::create(&spec.weight_shape(), &InitSpec::uniform(-1.0, 1.0, seed * 3 + 2)).unwrap();
    let b = spec
        .bias
        .then(|| Tensor::create(&[spec.out_channels], &InitSpec::uniform(-1.0, 1.0, seed * 3 + 3)).unwrap());
    (x, wt, b, spec)
}
