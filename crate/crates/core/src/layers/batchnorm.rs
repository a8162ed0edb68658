use crate::error::{Error, Result};
use crate::tensor::{channel_moments, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm2dSpec {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2dSpec {
    pub fn new(channels: usize) -> Self {
        Self { channels, eps: DEFAULT_EPS, momentum: DEFAULT_MOMENTUM }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidSpec(format!("batchnorm eps/momentum out of range: {self:?}")));
        }
        Ok(())
    }
}

/// What backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    /// Batch statistics were used (train mode), so the mean and variance
    /// depend on the input.
    pub batch_stats: bool,
}

fn check(x: &Tensor, spec: &BatchNorm2dSpec, params: &[&Tensor]) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    let dims = x.dims4()?;
    if dims.1 != spec.channels {
        return Err(Error::mismatch(format!(
            "batchnorm expects {} channels, got {}",
            spec.channels, dims.1
        )));
    }
    if let Some(p) = params.iter().find(|p| p.shape() != [spec.channels]) {
        return Err(Error::mismatch(format!("batchnorm parameter shape {:?}", p.shape())));
    }
    Ok(dims)
}

fn normalize(
    x: &Tensor,
    dims: (usize, usize, usize, usize),
    mean: &[f64],
    inv_std: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
) -> (Tensor, Tensor) {
    let (n, c, h, w) = dims;
    let plane = h * w;
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let (g, bt, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for i in off..off + plane {
                let v = (x.data()[i] - mu) * is;
                xhat[i] = v;
                y[i] = v * g + bt;
            }
        }
    }
    let shape = x.shape();
    (Tensor::new(shape, xhat).unwrap(), Tensor::new(shape, y).unwrap())
}

/// Train-mode forward: normalizes with the batch statistics and folds them
/// into the running buffers.
pub fn batchnorm2d_train(
    x: &Tensor,
    spec: &BatchNorm2dSpec,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
) -> Result<(Tensor, BatchNormCache)> {
    let dims = check(x, spec, &[gamma, beta, running_mean, running_var])?;
    let count = dims.0 * dims.2 * dims.3;
    if count < 2 {
        return Err(Error::DegenerateBatch(count));
    }
    let (mean, var) = channel_moments(x)?;
    let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + spec.eps).sqrt()).collect();
    let (xhat, y) = normalize(x, dims, mean.data(), &inv_std, gamma, beta);
    let m = spec.momentum;
    for (r, b) in running_mean.data_mut().iter_mut().zip(mean.data()) {
        *r = (1.0 - m) * *r + m * b;
    }
    for (r, b) in running_var.data_mut().iter_mut().zip(var.data()) {
        *r = (1.0 - m) * *r + m * b;
    }
    Ok((y, BatchNormCache { xhat, inv_std, batch_stats: true }))
}

/// Eval-mode forward: a fixed per-channel affine map from the running
/// statistics.
pub fn batchnorm2d_eval(
    x: &Tensor,
    spec: &BatchNorm2dSpec,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
) -> Result<(Tensor, BatchNormCache)> {
    let dims = check(x, spec, &[gamma, beta, running_mean, running_var])?;
    let inv_std: Vec<f64> = running_var.data().iter().map(|v| 1.0 / (v + spec.eps).sqrt()).collect();
    let (xhat, y) = normalize(x, dims, running_mean.data(), &inv_std, gamma, beta);
    Ok((y, BatchNormCache { xhat, inv_std, batch_stats: false }))
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn batchnorm2d_backward(grad_out: &Tensor, cache: &BatchNormCache, gamma: &Tensor) -> Result<BatchNormGrads> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::mismatch(format!(
            "batchnorm grad shape {:?}, expected {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                dbeta[ch] += g[i];
                dgamma[ch] += g[i] * xh[i];
            }
        }
    }
    let mut dx = vec![0.0; g.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            if cache.batch_stats {
                let mean_g = dbeta[ch] / count;
                let mean_gx = dgamma[ch] / count;
                for i in off..off + plane {
                    dx[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
                }
            } else {
                for i in off..off + plane {
                    dx[i] = scale * g[i];
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape(), dx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}
