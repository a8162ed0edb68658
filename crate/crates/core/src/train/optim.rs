//! Adam with L2 weight decay, and gradient clipping.

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::config::{ClipMode, DecayMode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let zeros: Vec<Tensor> = model.params().iter().map(|p| p.value.zeros_like()).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One Adam update of a single parameter tensor. `t` is the already
/// incremented step count.
pub fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &TrainConfig) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let wd = cfg.weight_decay;
    for i in 0..theta.len() {
        let mut g = grad[i];
        match cfg.decay_mode {
            DecayMode::Coupled => g += wd * theta[i],
            DecayMode::Decoupled => theta[i] -= cfg.learning_rate * wd * theta[i],
        }
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

/// Applies one Adam step to every parameter of `model`.
pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let mut params = model.params_mut();
    if grads.params.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::mismatch("optimizer state does not match the model's parameters"));
    }
    for p in params.iter() {
        let g = &grads.params[p.id()];
        if g.shape() != p.value.shape() {
            return Err(Error::mismatch(format!("gradient shape for `{}`", p.name)));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.t += 1;
    for p in params.iter_mut() {
        let id = p.id();
        adam_update(
            p.value.data_mut(),
            grads.params[id].data(),
            state.m[id].data_mut(),
            state.v[id].data_mut(),
            state.t,
            cfg,
        );
    }
    Ok(())
}

/// Clamps every gradient element into `[-threshold, threshold]`.
pub fn clip_value(grads: &mut [Tensor], threshold: f64) {
    for g in grads {
        for v in g.data_mut() {
            *v = v.clamp(-threshold, threshold);
        }
    }
}

/// Rescales all gradients together so their global L2 norm is at most
/// `threshold`. Returns the norm before clipping.
pub fn clip_norm(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

pub fn clip_gradients(grads: &mut Gradients, threshold: f64, mode: ClipMode) -> Result<()> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidSpec(format!("clip threshold {threshold} must be positive")));
    }
    match mode {
        ClipMode::Value => clip_value(&mut grads.params, threshold),
        ClipMode::Norm => {
            clip_norm(&mut grads.params, threshold);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(wd: f64) -> TrainConfig {
        TrainConfig { weight_decay: wd, ..TrainConfig::default() }
    }

    fn step(theta: f64, g: f64, m: &mut f64, v: &mut f64, t: u64, c: &TrainConfig) -> f64 {
        let mut th = [theta];
        let (mut mm, mut vv) = ([*m], [*v]);
        adam_update(&mut th, &[g], &mut mm, &mut vv, t, c);
        *m = mm[0];
        *v = vv[0];
        th[0]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let c = cfg(0.0);
        let (mut m, mut v) = (0.0, 0.0);
        let th = step(0.0, 1.0, &mut m, &mut v, 1, &c);
        assert!((th - (-0.001 / (1.0 + 1e-8))).abs() < 1e-9);
    }

    #[test]
    fn decay_acts_alone() {
        let c = cfg(1e-4);
        let (mut m, mut v) = (0.0, 0.0);
        step(1.0, 0.0, &mut m, &mut v, 1, &c);
        // m = (1 - β1) g' with g' = 1e-4
        assert!((m - 0.1 * 1e-4).abs() < 1e-18);
    }

    #[test]
    fn descends_on_parabola() {
        let c = cfg(0.0);
        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        let mut f = th * th;
        for t in 1..=50 {
            th = step(th, 2.0 * th, &mut m, &mut v, t, &c);
            assert!(th * th < f);
            f = th * th;
        }
    }

    #[test]
    fn clip_values() {
        let mut g = vec![Tensor::new(&[3], vec![0.5, 0.05, -0.5]).unwrap()];
        clip_value(&mut g, 0.1);
        assert_eq!(g[0].data(), &[0.1, 0.05, -0.1]);
    }

    #[test]
    fn clip_global_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0, 4.0]).unwrap()];
        assert_eq!(clip_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn zero_lr_is_identity(theta in -5.0f64..5.0, g in -5.0f64..5.0) {
            let c = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
            let (mut m, mut v) = (0.0, 0.0);
            prop_assert_eq!(step(theta, g, &mut m, &mut v, 1, &c), theta);
        }

        #[test]
        fn clipping_is_idempotent(vals in proptest::collection::vec(-2.0f64..2.0, 1..20)) {
            let mut once = vec![Tensor::new(&[vals.len()], vals.clone()).unwrap()];
            clip_value(&mut once, 0.1);
            let mut twice = once.clone();
            clip_value(&mut twice, 0.1);
            prop_assert_eq!(once, twice);
        }
    }
}
