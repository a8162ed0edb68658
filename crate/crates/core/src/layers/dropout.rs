use rand::Rng as _;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidSpec(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }
}

/// Inverted dropout. In train mode each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`; the returned mask holds the
/// per-element multiplier. Eval mode (or rate 0) is the identity.
pub fn dropout(x: &Tensor, spec: &DropoutSpec, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::InvalidSpec(format!("dropout rate {} outside [0, 1)", spec.rate)));
    }
    if mode == Mode::Eval || spec.rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - spec.rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < spec.rate { 0.0 } else { keep })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((Tensor::new(x.shape(), y)?, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f64]>) -> Tensor {
    match mask {
        None => grad_out.clone(),
        Some(m) => Tensor::new(grad_out.shape(), grad_out.data().iter().zip(m).map(|(g, k)| g * k).collect())
            .expect("dropout mask shape"),
    }
}
