use std::path::Path;
use std::process::{Command, Output};

fn msinet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msinet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn confmat_metrics_reports_accuracy_and_f1() {
    let o = msinet(&["confmat-metrics", "--tp", "6338", "--fp", "1167", "--fn", "792", "--tn", "10936"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!((value(&out, "accuracy") - 0.8981).abs() < 5e-5);
    assert!((value(&out, "f1") - 0.9178).abs() < 5e-5);
}

#[test]
fn confmat_rows_file() {
    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.csv");
    std::fs::write(&rows, "model,tp,fp,fn,tn\na,5,0,0,5\nb,1,1,1,1\n").unwrap();
    let report = dir.path().join("report.csv");
    let o = msinet(&["confmat-metrics", "--rows", rows.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(report).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "a,5,0,0,5,1.0000,1.0000,1.0000,1.0000");
    assert_eq!(text.lines().nth(2).unwrap(), "b,1,1,1,1,0.5000,0.5000,0.5000,0.5000");
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let o = msinet(&["bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
    let o = msinet(&["train", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    let o = msinet(&["train", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"));
    let o = msinet(&["train", "--data", "/nonexistent/dir"]);
    assert_eq!(o.status.code(), Some(1));
    let o = msinet(&["gradcheck", "--arch", "resnet19"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(msinet(&["synth", "--out", data.to_str().unwrap(), "--n-per-class", "2", "--input", "32"]).status.code(), Some(0));
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let o = msinet(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
}

#[test]
fn gradcheck_cnn5() {
    let o = msinet(&["gradcheck", "--arch", "cnn5", "--input", "32", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS"));
}

fn last_val_loss(csv: &Path) -> f64 {
    let text = std::fs::read_to_string(csv).unwrap();
    text.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap()
}

#[test]
fn train_then_eval_reproduces_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    assert_eq!(msinet(&["synth", "--out", &d("data"), "--n-per-class", "20", "--input", "32", "--seed", "3"]).status.code(), Some(0));
    std::fs::write(d("run.cfg"), "arch=cnn5\nwidth_mult=0.25\ninput=32\nepochs=2\nbatch_size=8\n# flags override\nseed=1\n").unwrap();
    let o = msinet(&["train", "--config", &d("run.cfg"), "--data", &d("data"), "--out", &d("e.csv"), "--ckpt", &d("m.ckpt"), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = msinet(&["eval", "--ckpt", &d("m.ckpt"), "--data", &d("data"), "--report", &d("report.csv")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let loss = value(&stdout(&o), "loss");
    assert!((loss - last_val_loss(&dir.path().join("e.csv"))).abs() <= 1e-6 + 1e-12);
    let report = std::fs::read_to_string(d("report.csv")).unwrap();
    assert!(report.starts_with("model,tp,fp,fn,tn,accuracy,precision,recall,f1\ncnn5,"));
    let (tp, fp, fn_, tn) = (value(&stdout(&o), "tp"), value(&stdout(&o), "fp"), value(&stdout(&o), "fn"), value(&stdout(&o), "tn"));
    assert_eq!(tp + fp + fn_ + tn, value(&stdout(&o), "samples"));
}
