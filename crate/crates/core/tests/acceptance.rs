//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

mod common;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use common::{cnn5_case, layer_cases, random_conv, GRAD_TOL};
use msinet::data::{generate_synthetic, Dataset, Normalization};
use msinet::layers::{conv2d_forward, conv2d_naive};
use msinet::metrics::{accuracy, f1_score, DEFAULT_POSITIVE};
use msinet::train::{
    adam_update, bce_loss, clip_value, evaluate, fit, load_checkpoint, save_checkpoint, AdamState, TrainConfig,
};
use msinet::zoo::forward_classify;
use msinet::{
    build_modified_resnet, count_weight_layers, forward, grad_check, shape_trace, Arch, ArchDescriptor, Tensor,
};

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_msinet")).args(args).output().unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("`{key}` missing from output"))
        .parse()
        .unwrap()
}

fn metric_reproduction() -> String {
    let o = bin(&["confmat-metrics", "--tp", "6338", "--fp", "1167", "--fn", "792", "--tn", "10936"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8(o.stdout).unwrap();
    let (acc, f1) = (field(&out, "accuracy"), field(&out, "f1"));
    assert!((acc - 0.8981).abs() <= 5e-5, "accuracy {acc}");
    assert!((f1 - 0.9178).abs() <= 5e-5, "f1 {f1}");

    let o = bin(&["confmat-metrics", "--table"]);
    assert_eq!(o.status.code(), Some(0));
    let report = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 10);
    for name in ["Logistic Regression", "VGG16"] {
        let row = rows.iter().find(|r| r.starts_with(name)).unwrap();
        assert_eq!(row.split(',').nth(5), Some("0.6098"), "{row}");
    }
    format!("accuracy={acc:.4} f1={f1:.4}, 10 table rows")
}

fn architecture_fidelity() -> String {
    let mut m = build_modified_resnet(1.0, 224, 0).unwrap();
    let x = Tensor::zeros(&[1, 3, 224, 224]);
    let start = Instant::now();
    let trace = shape_trace(&mut m, &x).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let want: Vec<(&str, Vec<usize>)> = vec![
        ("stem", vec![64, 112, 112]),
        ("maxpool", vec![64, 56, 56]),
        ("stage1", vec![256, 56, 56]),
        ("stage2", vec![512, 28, 28]),
        ("stage3", vec![1024, 14, 14]),
        ("stage4", vec![2048, 7, 7]),
        ("avgpool", vec![2048, 1, 1]),
        ("flatten", vec![2048]),
        ("fc1", vec![2048]),
        ("fc2", vec![512]),
        ("fc3", vec![128]),
        ("fc4", vec![1]),
    ];
    let got: Vec<(&str, Vec<usize>)> = trace.iter().map(|(g, s)| (g.as_str(), s.clone())).collect();
    assert_eq!(got, want);
    assert_eq!(count_weight_layers(&m), 41);
    assert!(secs < 10.0, "forward took {secs:.2}s");
    format!("12 rows match, 41 weight layers, forward {secs:.2}s")
}

fn gradient_correctness() -> String {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut n = 0;
    for mut c in layer_cases() {
        let r = grad_check(&mut c.model, &c.input, &c.loss, GRAD_TOL, usize::MAX, 1).unwrap();
        assert!(r.passed, "{}: {:?}", c.name, r.failures().collect::<Vec<_>>());
        worst = worst.max(r.max_rel_error());
        n += 1;
    }
    let mut c = cnn5_case(0.25, 7);
    let r = grad_check(&mut c.model, &c.input, &c.loss, GRAD_TOL, msinet::autograd::GRAD_CHECK_SAMPLE, 7).unwrap();
    assert!(r.passed, "cnn5: {:?}", r.failures().collect::<Vec<_>>());
    worst = worst.max(r.max_rel_error());
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0);
    format!("{n} layer cases + cnn5 32x32, max rel err {worst:.2e}, {secs:.1}s")
}

fn convolution_oracle() -> String {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (x, w, b, spec) = random_conv(seed);
        let d = conv2d_forward(&x, &w, b.as_ref(), &spec)
            .unwrap()
            .max_abs_diff(&conv2d_naive(&x, &w, b.as_ref(), &spec).unwrap());
        worst = worst.max(d);
    }
    assert!(worst < 1e-10, "max diff {worst}");
    format!("100 specs, max abs diff {worst:.2e}")
}

fn desk_scale_learning() -> String {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(200, 64, 0, dir.path()).unwrap();
    let cfg = TrainConfig { epochs: 20, ..TrainConfig::default() };
    let (train_m, val_m, _) = manifest.split(cfg.seed);
    let norm = Normalization::default();
    let train = Dataset::from_manifest(&train_m, 64, &norm).unwrap();
    let val = Dataset::from_manifest(&val_m, 64, &norm).unwrap();

    let best = |arch| {
        let mut m = ArchDescriptor::new(arch, 0.25, 64).unwrap().build(cfg.seed).unwrap();
        let (recs, _) = fit(&mut m, &train, &val, &cfg, None).unwrap();
        recs.iter().map(|r| r.val_accuracy).fold(0.0, f64::max)
    };
    let resnet = best(Arch::ModifiedResnet);
    let logreg = best(Arch::Logreg);
    assert!(resnet >= 0.9, "modified resnet best val accuracy {resnet}");
    assert!(logreg < 0.7, "logreg best val accuracy {logreg}");
    format!(
        "modified resnet {resnet:.3} (>= 0.9), logreg {logreg:.3} (< 0.7), {:.0}s",
        start.elapsed().as_secs_f64()
    )
}

fn determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    assert_eq!(bin(&["synth", "--out", &p("data"), "--n-per-class", "20", "--input", "32", "--seed", "4"]).status.code(), Some(0));
    std::fs::write(p("run.cfg"), "arch=modified-resnet\nwidth_mult=0.25\ninput=32\nepochs=2\nbatch_size=8\nseed=6\n").unwrap();
    for run in ["a", "b"] {
        let o = bin(&[
            "train", "--config", &p("run.cfg"), "--data", &p("data"),
            "--out", &p(&format!("{run}.csv")), "--ckpt", &p(&format!("{run}.ckpt")), "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |s: &str| std::fs::read(p(s)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"), "epoch CSVs differ");
    assert_eq!(read("a.ckpt"), read("b.ckpt"), "checkpoints differ");
    format!("CSV and checkpoint ({} bytes) byte-identical", read("a.ckpt").len())
}

fn loss_and_optimizer_values() -> String {
    let bce = bce_loss(&Tensor::full(&[1, 1], 0.5), &Tensor::full(&[1, 1], 1.0)).unwrap();
    assert!((bce - std::f64::consts::LN_2).abs() <= 1e-9, "bce {bce}");

    let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let (mut theta, mut m, mut v) = ([0.0], [0.0], [0.0]);
    adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, &cfg);
    let want = -cfg.learning_rate / (1.0 + cfg.adam_eps);
    assert!((theta[0] - want).abs() <= 1e-9, "adam step {}", theta[0]);

    let mut g = vec![Tensor::full(&[1], 0.5)];
    clip_value(&mut g, cfg.grad_clip);
    assert_eq!(g[0].data()[0], 0.1);
    format!("bce={bce:.12} step={:.6e} clip=0.1", theta[0])
}

fn checkpoint_round_trip() -> String {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = build_modified_resnet(0.25, 64, 8).unwrap();
    let x = common::batch_of(2, &[3, 64, 64], 9);
    m.train();
    forward(&mut m, &x).unwrap();
    forward(&mut m, &x).unwrap();
    let cfg = TrainConfig { seed: 8, ..TrainConfig::default() };
    save_checkpoint(&m, &AdamState::new(&m), &cfg, &path).unwrap();
    let mut back = load_checkpoint(&path).unwrap().model;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let (a, _) = forward_classify(&mut m, &x).unwrap();
    let (b, _) = forward_classify(&mut back, &x).unwrap();
    assert_eq!(bits(&a), bits(&b));
    let val = Dataset::from_tensor(&x, vec![0, 1]).unwrap();
    assert_eq!(evaluate(&mut m, &val, 2).unwrap().loss.to_bits(), evaluate(&mut back, &val, 2).unwrap().loss.to_bits());
    "eval output bitwise identical after reload".into()
}

#[test]
fn acceptance() {
    type Check = fn() -> String;
    let criteria: [(&str, Check); 8] = [
        ("metric reproduction", metric_reproduction),
        ("architecture fidelity", architecture_fidelity),
        ("gradient correctness", gradient_correctness),
        ("convolution oracle", convolution_oracle),
        ("desk-scale learning", desk_scale_learning),
        ("determinism", determinism),
        ("loss/optimizer values", loss_and_optimizer_values),
        ("checkpoint round trip", checkpoint_round_trip),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let line = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => format!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                failed.push(name);
                format!("criterion {} {name}: FAIL ({msg})", i + 1)
            }
        };
        let _ = writeln!(std::io::stderr(), "{line}");
    }
    // sanity: the default F1 positive class is MSS
    assert!(f1_score(&msinet::metrics::TABLE_II[9].1, DEFAULT_POSITIVE).is_ok());
    assert!(accuracy(&msinet::metrics::TABLE_II[9].1).is_ok());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
