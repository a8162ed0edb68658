//! The epoch loop and held-out evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autograd::{backward, forward_record};
use crate::data::{shuffled_batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::Model;
use crate::tensor::rng_for;
use crate::train::config::TrainConfig;
use crate::train::loss::bce_loss_and_grad;
use crate::train::optim::{adam_step, clip_gradients, AdamState};
use crate::zoo::forward_classify;

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,val_loss";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{:.6},{:.6}", self.epoch, self.train_loss, self.val_loss)
    }
}

/// Result of an eval-mode pass over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean BCE over all samples.
    pub loss: f64,
    pub probabilities: Vec<f64>,
    pub predictions: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let hits = self.predictions.iter().zip(&self.labels).filter(|(p, l)| p == l).count();
        hits as f64 / self.labels.len() as f64
    }
}

/// Eval-mode pass in consecutive batches of `batch_size`.
pub fn evaluate(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InvalidInput("evaluation dataset is empty".into()));
    }
    let mut total = 0.0;
    let mut probabilities = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    for idx in data.sequential_batches(batch_size) {
        let (x, y) = data.batch(&idx);
        let (p, classes) = forward_classify(model, &x)?;
        let (loss, _) = bce_loss_and_grad(&p, &y)?;
        total += loss * idx.len() as f64;
        probabilities.extend_from_slice(p.data());
        predictions.extend(classes);
    }
    Ok(Evaluation { loss: total / data.len() as f64, probabilities, predictions, labels: data.labels().to_vec() })
}

/// Options for [`fit_with`].
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Epoch CSV, rewritten from scratch and flushed after every epoch.
    pub csv_path: Option<&'a Path>,
    /// Called after each epoch.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Trains from a fresh optimizer state. Returns the epoch records and the
/// final optimizer state.
pub fn fit(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    csv_path: Option<&Path>,
) -> Result<(Vec<EpochRecord>, AdamState)> {
    let mut state = AdamState::new(model);
    let records = fit_with(model, train, val, cfg, &mut state, FitOptions { csv_path, on_epoch: None })?;
    Ok((records, state))
}

pub fn fit_with(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    state: &mut AdamState,
    mut opts: FitOptions<'_>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be non-empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_count)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut csv = match opts.csv_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{EPOCH_CSV_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };

    model.reseed_dropout(cfg.seed);
    let mut shuffle_rng = rng_for(cfg.seed, 3);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let plan = shuffled_batches(train.len(), cfg.batch_size, &mut shuffle_rng, false);
        let train_loss = pool.install(|| -> Result<f64> {
            let mut total = 0.0;
            for (b, idx) in plan.iter().enumerate() {
                let (x, y) = train.batch(idx);
                let (p, mut tape) = forward_record(model, &x, Mode::Train)?;
                let (loss, g) = bce_loss_and_grad(&p, &y)?;
                if !loss.is_finite() || !p.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                let mut grads = backward(model, &mut tape, &g)?;
                clip_gradients(&mut grads, cfg.grad_clip, cfg.clip_mode)?;
                adam_step(model, &grads, state, cfg)?;
                total += loss * idx.len() as f64;
            }
            Ok(total / train.len() as f64)
        })?;
        let eval = pool.install(|| evaluate(model, val, cfg.batch_size))?;
        let rec = EpochRecord { epoch, train_loss, val_loss: eval.loss, val_accuracy: eval.accuracy() };
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", rec.csv_row())?;
            w.flush()?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&rec);
        }
        records.push(rec);
    }
    Ok(records)
}
