use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipMode {
    /// Clamp each gradient element.
    Value,
    /// Rescale by the global L2 norm.
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// L2 term added to the gradient before the moment updates.
    Coupled,
    /// Applied directly to the weights, outside the moments.
    Decoupled,
}

impl FromStr for ClipMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(Self::Value),
            "norm" => Ok(Self::Norm),
            _ => Err(Error::Config(format!("clip_mode must be `value` or `norm`, got `{s}`"))),
        }
    }
}

impl FromStr for DecayMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            _ => Err(Error::Config(format!("decay_mode must be `coupled` or `decoupled`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub thread_count: usize,
    pub clip_mode: ClipMode,
    pub decay_mode: DecayMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            grad_clip: 0.1,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            thread_count: 1,
            clip_mode: ClipMode::Value,
            decay_mode: DecayMode::Coupled,
        }
    }
}

pub const TRAIN_KEYS: [&str; 12] = [
    "learning_rate",
    "grad_clip",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "seed",
    "thread_count",
    "clip_mode",
    "decay_mode",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and adam_eps must be > 0");
        }
        if self.thread_count == 0 {
            return bad("thread_count must be >= 1");
        }
        Ok(())
    }

    /// Sets one field by its name. Returns `false` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "thread_count" => self.thread_count = parse(key, value)?,
            "clip_mode" => self.clip_mode = value.trim().parse()?,
            "decay_mode" => self.decay_mode = value.trim().parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "grad_clip={}", self.grad_clip);
        let _ = writeln!(s, "weight_decay={}", self.weight_decay);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "adam_eps={}", self.adam_eps);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "thread_count={}", self.thread_count);
        let _ = writeln!(
            s,
            "clip_mode={}",
            match self.clip_mode {
                ClipMode::Value => "value",
                ClipMode::Norm => "norm",
            }
        );
        let _ = writeln!(
            s,
            "decay_mode={}",
            match self.decay_mode {
                DecayMode::Coupled => "coupled",
                DecayMode::Decoupled => "decoupled",
            }
        );
        s
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
