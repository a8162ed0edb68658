//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 runtime failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autograd::{grad_check, LossSpec, GRAD_CHECK_SAMPLE};
use crate::data::{generate_synthetic, load_manifest, Dataset, Manifest, Normalization};
use crate::error::Error;
use crate::metrics::{accuracy, confusion_matrix, f1_score, report_csv, ConfusionCounts, DEFAULT_POSITIVE, TABLE_II};
use crate::tensor::{InitSpec, Tensor};
use crate::train::{
    evaluate, fit_with, load_checkpoint, parse_key_values, save_checkpoint, AdamState, FitOptions, TrainConfig,
};
use crate::zoo::{Arch, ArchDescriptor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "msinet", version, about = "MSI/MSS histology classifier: train, evaluate, and check")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a manifest directory; writes the epoch CSV and a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a data split; writes a metrics report.
    Eval(EvalArgs),
    /// Finite-difference gradient check of an architecture.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic two-class dataset.
    Synth(SynthArgs),
    /// Accuracy, precision, recall, and F1 from raw confusion counts.
    ConfmatMetrics(ConfmatArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key=value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory containing manifest.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Epoch CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    width_mult: Option<f64>,
    /// Input side length in pixels.
    #[arg(long)]
    input: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory containing manifest.csv.
    #[arg(long)]
    data: PathBuf,
    /// Which part of the seeded 80/10/10 split to score.
    #[arg(long, default_value = "val", value_parser = ["train", "val", "test", "all"])]
    split: String,
    /// Metrics report CSV path (stdout if omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-sample predictions CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "cnn5")]
    arch: String,
    #[arg(long, default_value_t = 32)]
    input: usize,
    #[arg(long, default_value_t = 0.25)]
    width_mult: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Elements checked per tensor before subsampling.
    #[arg(long, default_value_t = GRAD_CHECK_SAMPLE)]
    max_elements: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_per_class: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    input: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ConfmatArgs {
    #[arg(long, requires_all = ["fp", "fn_", "tn"])]
    tp: Option<u64>,
    #[arg(long)]
    fp: Option<u64>,
    #[arg(long = "fn", id = "fn_")]
    fn_: Option<u64>,
    #[arg(long)]
    tn: Option<u64>,
    /// CSV of `model,tp,fp,fn,tn` rows.
    #[arg(long, conflicts_with = "tp")]
    rows: Option<PathBuf>,
    /// Use the ten published comparison rows.
    #[arg(long, conflicts_with_all = ["tp", "rows"])]
    table: bool,
    /// Model name for a single row.
    #[arg(long, default_value = "model")]
    model: String,
    /// Positive class for precision/recall/F1 (0 = MSI, 1 = MSS).
    #[arg(long, default_value_t = DEFAULT_POSITIVE, value_parser = clap::value_parser!(u8).range(0..=1))]
    positive: u8,
    /// Report CSV path.
    #[arg(long)]
    report: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(Error::Io(e))
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// Everything `train` needs, after merging the config file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub arch: Arch,
    pub width_mult: f64,
    pub input: usize,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub ckpt: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            arch: Arch::ModifiedResnet,
            width_mult: 1.0,
            input: 224,
            data: None,
            out: PathBuf::from("epochs.csv"),
            ckpt: PathBuf::from("model.ckpt"),
        }
    }
}

impl RunConfig {
    /// Applies `key=value` text. Keys are the training config fields plus
    /// `arch`, `width_mult`, `input`, `data`, `out`, and `ckpt`.
    pub fn apply_text(&mut self, text: &str) -> crate::Result<()> {
        for (k, v) in parse_key_values(text)? {
            if self.train.set(&k, &v)? {
                continue;
            }
            let bad = || Error::Config(format!("invalid value `{v}` for `{k}`"));
            match k.as_str() {
                "arch" => self.arch = v.parse().map_err(|_| bad())?,
                "width_mult" => self.width_mult = v.parse().map_err(|_| bad())?,
                "input" => self.input = v.parse().map_err(|_| bad())?,
                "data" => self.data = Some(PathBuf::from(v)),
                "out" => self.out = PathBuf::from(v),
                "ckpt" => self.ckpt = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        Ok(())
    }

    fn from_args(a: &TrainArgs) -> Result<Self, Failure> {
        let mut rc = RunConfig::default();
        if let Some(path) = &a.config {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
            rc.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        if let Some(v) = &a.arch {
            rc.arch = v.parse().map_err(usage)?;
        }
        if let Some(v) = a.width_mult {
            rc.width_mult = v;
        }
        if let Some(v) = a.input {
            rc.input = v;
        }
        if let Some(v) = a.seed {
            rc.train.seed = v;
        }
        if let Some(v) = a.epochs {
            rc.train.epochs = v;
        }
        if let Some(v) = a.batch {
            rc.train.batch_size = v;
        }
        if let Some(v) = a.threads {
            rc.train.thread_count = v;
        }
        if let Some(v) = &a.data {
            rc.data = Some(v.clone());
        }
        if let Some(v) = &a.out {
            rc.out = v.clone();
        }
        if let Some(v) = &a.ckpt {
            rc.ckpt = v.clone();
        }
        rc.train.validate().map_err(usage)?;
        Ok(rc)
    }
}

fn manifest_in(dir: &Path) -> Result<Manifest, Failure> {
    let path = dir.join("manifest.csv");
    if !path.is_file() {
        return Err(usage(format!("no manifest.csv in {}", dir.display())));
    }
    load_manifest(&path).map_err(usage)
}

fn check_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(usage(format!("directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let rc = RunConfig::from_args(a)?;
    let data_dir = rc.data.clone().ok_or_else(|| usage("train needs --data or `data=` in the config"))?;
    let manifest = manifest_in(&data_dir)?;
    check_parent(&rc.out)?;
    check_parent(&rc.ckpt)?;
    let descriptor = ArchDescriptor::new(rc.arch, rc.width_mult, rc.input).map_err(usage)?;

    let (train_m, val_m, _) = manifest.split(rc.train.seed);
    let norm = Normalization::default();
    let train = Dataset::from_manifest(&train_m, rc.input, &norm)?;
    let val = Dataset::from_manifest(&val_m, rc.input, &norm)?;
    let mut model = descriptor.build(rc.train.seed)?;
    let mut adam = AdamState::new(&model);
    let _ = writeln!(
        err,
        "training {} ({} parameters) on {} images, validating on {}",
        descriptor.name(),
        model.param_count(),
        train.len(),
        val.len()
    );
    let quiet = a.quiet;
    let mut progress = |r: &crate::train::EpochRecord| {
        if !quiet {
            let _ = writeln!(
                err,
                "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_acc {:.4}",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy
            );
        }
    };
    let records = fit_with(
        &mut model,
        &train,
        &val,
        &rc.train,
        &mut adam,
        FitOptions { csv_path: Some(&rc.out), on_epoch: Some(&mut progress) },
    )?;
    save_checkpoint(&model, &adam, &rc.train, &rc.ckpt)?;
    if let Some(last) = records.last() {
        let _ = writeln!(
            out,
            "epochs={}\ntrain_loss={:.6}\nval_loss={:.6}\nval_accuracy={:.4}",
            last.epoch, last.train_loss, last.val_loss, last.val_accuracy
        );
    }
    let _ = writeln!(err, "wrote {} and {}", rc.out.display(), rc.ckpt.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    if !a.ckpt.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", a.ckpt.display())));
    }
    let manifest = manifest_in(&a.data)?;
    for p in [&a.report, &a.out].into_iter().flatten() {
        check_parent(p)?;
    }
    let ck = load_checkpoint(&a.ckpt)?;
    let mut model = ck.model;
    let desc = model.descriptor().cloned().expect("checkpoints always carry a descriptor");
    let (train_m, val_m, test_m) = manifest.split(ck.config.seed);
    let subset = match a.split.as_str() {
        "train" => train_m,
        "val" => val_m,
        "test" => test_m,
        _ => manifest,
    };
    let data = Dataset::from_manifest(&subset, desc.input[1], &Normalization::default())?;
    let batch = a.batch.unwrap_or(ck.config.batch_size).max(1);
    let ev = evaluate(&mut model, &data, batch)?;
    let counts = confusion_matrix(&ev.predictions, &ev.labels)?;
    let report = report_csv(&[(desc.name(), counts)]);
    match &a.report {
        Some(p) => fs::write(p, &report)?,
        None => out.write_all(report.as_bytes())?,
    }
    if let Some(p) = &a.out {
        let mut s = String::from("path,label,prob_mss,pred\n");
        for (i, (path, label)) in subset.entries.iter().enumerate() {
            s.push_str(&format!("{path},{label},{:.6},{}\n", ev.probabilities[i], ev.predictions[i]));
        }
        fs::write(p, s)?;
    }
    let _ = writeln!(out, "split={}\nsamples={}\nloss={:.6}", a.split, data.len(), ev.loss);
    let _ = writeln!(out, "tp={}\nfp={}\nfn={}\ntn={}", counts.tp, counts.fp, counts.fn_, counts.tn);
    let _ = writeln!(out, "accuracy={:.4}", ev.accuracy());
    match f1_score(&counts, DEFAULT_POSITIVE) {
        Ok(f) => {
            let _ = writeln!(out, "f1={:.4}", f.f1);
        }
        Err(e) => {
            let _ = writeln!(err, "f1 undefined: {e}");
        }
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let arch: Arch = a.arch.parse().map_err(usage)?;
    if a.batch == 0 || !(a.tolerance > 0.0) {
        return Err(usage("--batch must be >= 1 and --tolerance > 0"));
    }
    let desc = ArchDescriptor::new(arch, a.width_mult, a.input).map_err(usage)?;
    let mut model = desc.build(a.seed)?;
    let mut shape = vec![a.batch];
    shape.extend_from_slice(&desc.input);
    let x = Tensor::create(&shape, &InitSpec::uniform(-1.0, 1.0, a.seed ^ 0x5eed))?;
    let labels = Tensor::new(&[a.batch, 1], (0..a.batch).map(|i| (i % 2) as f64).collect())?;
    let report = grad_check(&mut model, &x, &LossSpec::Bce { labels }, a.tolerance, a.max_elements, a.seed)?;
    let _ = writeln!(out, "{:<36} {:>8} {:>6} {:>14}  result", "tensor", "checked", "kinks", "max_rel_error");
    for e in &report.entries {
        let status = if e.passed(report.tolerance) { "pass" } else { "FAIL" };
        let _ = writeln!(out, "{:<36} {:>8} {:>6} {:>14.3e}  {status}", e.name, e.checked, e.kinks, e.max_rel_error);
    }
    let _ = writeln!(
        out,
        "{}: max relative error {:.3e} (tolerance {:.0e})",
        if report.passed { "PASS" } else { "FAIL" },
        report.max_rel_error(),
        report.tolerance
    );
    if report.passed {
        Ok(())
    } else {
        let worst: Vec<_> = report.failures().map(|e| e.name.clone()).collect();
        Err(Failure::Runtime(Error::InvalidInput(format!("gradient check failed for {}", worst.join(", ")))))
    }
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.n_per_class == 0 || a.input < 16 {
        return Err(usage("--n-per-class must be >= 1 and --input >= 16"));
    }
    let m = generate_synthetic(a.n_per_class, a.input, a.seed, &a.out)?;
    let (c0, c1) = m.class_counts();
    let _ = writeln!(out, "wrote {} images ({c0} class 0, {c1} class 1) to {}", m.len(), a.out.display());
    Ok(())
}

/// Parses `model,tp,fp,fn,tn` rows; a header line is optional.
pub fn parse_count_rows(text: &str) -> crate::Result<Vec<(String, ConfusionCounts)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("model,")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let n = |s: &str| s.parse::<u64>().map_err(|_| Error::InvalidInput(format!("line {}: bad count `{s}`", i + 1)));
        if f.len() != 5 {
            return Err(Error::InvalidInput(format!("line {}: expected model,tp,fp,fn,tn", i + 1)));
        }
        rows.push((f[0].to_string(), ConfusionCounts::new(n(f[1])?, n(f[2])?, n(f[3])?, n(f[4])?)));
    }
    Ok(rows)
}

fn cmd_confmat(a: &ConfmatArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let rows: Vec<(String, ConfusionCounts)> = if a.table {
        TABLE_II.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    } else if let Some(p) = &a.rows {
        let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
        parse_count_rows(&text).map_err(usage)?
    } else {
        match (a.tp, a.fp, a.fn_, a.tn) {
            (Some(tp), Some(fp), Some(fn_), Some(tn)) => vec![(a.model.clone(), ConfusionCounts::new(tp, fp, fn_, tn))],
            _ => return Err(usage("give --tp --fp --fn --tn, --rows FILE, or --table")),
        }
    };
    if let Some(p) = &a.report {
        check_parent(p)?;
        fs::write(p, report_csv(&rows))?;
    }
    if let [(_, c)] = rows.as_slice() {
        let acc = accuracy(c).map_err(usage)?;
        let f = f1_score(c, a.positive).map_err(usage)?;
        let _ = writeln!(
            out,
            "accuracy={acc:.4}\nprecision={:.4}\nrecall={:.4}\nf1={:.4}",
            f.precision, f.recall, f.f1
        );
    } else if a.report.is_none() {
        out.write_all(report_csv(&rows).as_bytes())?;
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code. Data goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            return match e.kind() {
                DisplayHelp | DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::ConfmatMetrics(a) => cmd_confmat(a, out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!(": {s}"));
                src = s.source();
            }
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run_with(std::iter::once("msinet").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn confmat_single_row() {
        let (code, out, _) = call(&["confmat-metrics", "--tp", "6338", "--fp", "1167", "--fn", "792", "--tn", "10936"]);
        assert_eq!(code, 0);
        assert!(out.contains("accuracy=0.8981") && out.contains("f1=0.9178"), "{out}");
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["confmat-metrics", "--tp", "1"]).0, EXIT_USAGE);
        let (code, _, err) = call(&["train", "--config", "missing.cfg"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("missing.cfg"), "{err}");
    }

    #[test]
    fn config_text_overrides() {
        let mut rc = RunConfig::default();
        rc.apply_text("arch=cnn5\ninput=64\nlearning_rate=0.01\n# comment\n").unwrap();
        assert_eq!((rc.arch, rc.input, rc.train.learning_rate), (Arch::Cnn5, 64, 0.01));
        assert!(rc.apply_text("bogus=1").is_err());
    }

    #[test]
    fn count_rows() {
        let rows = parse_count_rows("model,tp,fp,fn,tn\na,1,2,3,4\n").unwrap();
        assert_eq!(rows, vec![("a".to_string(), ConfusionCounts::new(1, 2, 3, 4))]);
        assert!(parse_count_rows("a,1,2\n").is_err());
    }
}
