use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for every
/// output element, the flat input index that produced it (first maximum in
/// row-major window order).
pub fn maxpool2d(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::mismatch(format!("maxpool 2x2 window larger than input {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let d = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + 2 * oh * w + 2 * ow;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oh + dy) * w + 2 * ow + dx;
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, arg))
}

pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::mismatch("maxpool grad does not match recorded argmax"));
    }
    let mut dx = Tensor::zeros(input_shape);
    let g = dx.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(dx)
}

/// Adaptive average pooling to a 1×1 output: the per-channel spatial mean.
pub fn adaptive_avgpool2d(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let out = x.data().chunks(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Tensor::new(&[n, c, 1, 1], out)
}

pub fn adaptive_avgpool2d_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::mismatch("avgpool input must be rank 4")),
    };
    if grad_out.shape() != [n, c, 1, 1] {
        return Err(Error::mismatch(format!("avgpool grad shape {:?}", grad_out.shape())));
    }
    let plane = h * w;
    let mut dx = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g / plane as f64, plane));
    }
    Tensor::new(input_shape, dx)
}
