//! 2D cross-correlation via im2col + GEMM, and the direct nested-loop
//! definition used as its oracle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub bias: bool,
}

impl Conv2dSpec {
    /// Square kernel with the padding convention used throughout the model
    /// zoo: `k / 2` (pad 1 for 3×3, pad 0 for 1×1, pad 3 for 7×7).
    pub fn square(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (stride, stride),
            padding: (k / 2, k / 2),
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if self.in_channels == 0 || self.out_channels == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidSpec(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// `floor((in + 2p - k) / s) + 1` per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::mismatch(format!(
                "conv kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        Ok(((h + 2 * ph - kh) / self.stride.0 + 1, (w + 2 * pw - kw) / self.stride.1 + 1))
    }

    fn check_bias(&self, bias: Option<&Tensor>) -> Result<()> {
        match bias {
            Some(b) if b.shape() != [self.out_channels] => {
                Err(Error::mismatch(format!("conv bias shape {:?}", b.shape())))
            }
            None if self.bias => Err(Error::mismatch("conv spec declares a bias but none given")),
            _ => Ok(()),
        }
    }

    fn check_input(&self, x: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::mismatch(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if weight.shape() != self.weight_shape() {
            return Err(Error::mismatch(format!(
                "conv weight shape {:?}, expected {:?}",
                weight.shape(),
                self.weight_shape()
            )));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        Ok((n, c, h, w, ho, wo))
    }
}

/// Row `oh * wo + ow` of each image's block holds the receptive field of
/// output position `(oh, ow)`, ordered `(c, i, j)` to match the weight layout.
fn im2col(x: &Tensor, spec: &Conv2dSpec, ho: usize, wo: usize) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().expect("im2col: rank 4");
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let ckk = c * kh * kw;
    let per_image = ho * wo * ckk;
    let mut cols = vec![0.0; n * per_image];
    let data = x.data();
    cols.par_chunks_mut(per_image).enumerate().for_each(|(b, block)| {
        let img = &data[b * c * h * w..(b + 1) * c * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let row = &mut block[(oh * wo + ow) * ckk..(oh * wo + ow + 1) * ckk];
                let mut col = 0;
                for ch in 0..c {
                    let plane = &img[ch * h * w..(ch + 1) * h * w];
                    for i in 0..kh {
                        let y = (oh * sh + i) as isize - ph as isize;
                        for j in 0..kw {
                            let xx = (ow * sw + j) as isize - pw as isize;
                            if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < w {
                                row[col] = plane[y as usize * w + xx as usize];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    });
    cols
}

fn col2im(cols: &[f64], dims: (usize, usize, usize, usize), spec: &Conv2dSpec, ho: usize, wo: usize) -> Vec<f64> {
    let (n, c, h, w) = dims;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let ckk = c * kh * kw;
    let per_image = ho * wo * ckk;
    let mut dx = vec![0.0; n * c * h * w];
    dx.par_chunks_mut(c * h * w).enumerate().for_each(|(b, img)| {
        let block = &cols[b * per_image..(b + 1) * per_image];
        for oh in 0..ho {
            for ow in 0..wo {
                let row = &block[(oh * wo + ow) * ckk..(oh * wo + ow + 1) * ckk];
                let mut col = 0;
                for ch in 0..c {
                    for i in 0..kh {
                        let y = (oh * sh + i) as isize - ph as isize;
                        for j in 0..kw {
                            let xx = (ow * sw + j) as isize - pw as isize;
                            if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < w {
                                img[(ch * h + y as usize) * w + xx as usize] += row[col];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Convolution output for a batch: im2col, one GEMM against the flattened
/// weights, then a per-image transpose back to NCHW.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Tensor> {
    let (n, _, _, _, ho, wo) = spec.check_input(x, weight)?;
    spec.check_bias(bias)?;
    let ckk = spec.fan_in();
    let o = spec.out_channels;
    let hw = ho * wo;
    let cols = im2col(x, spec, ho, wo);
    let mut rows = vec![0.0; n * hw * o];
    gemm(n * hw, ckk, o, &cols, false, weight.data(), true, &mut rows, false);
    let mut out = vec![0.0; n * o * hw];
    out.par_chunks_mut(o * hw).enumerate().for_each(|(b, img)| {
        let src = &rows[b * hw * o..(b + 1) * hw * o];
        for (oc, plane) in img.chunks_mut(hw).enumerate() {
            let bv = bias.map_or(0.0, |t| t.data()[oc]);
            for (p, v) in plane.iter_mut().enumerate() {
                *v = src[p * o + oc] + bv;
            }
        }
    });
    Tensor::new(&[n, o, ho, wo], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(x: &Tensor, weight: &Tensor, spec: &Conv2dSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let (n, c, h, w, ho, wo) = spec.check_input(x, weight)?;
    let o = spec.out_channels;
    if grad_out.shape() != [n, o, ho, wo] {
        return Err(Error::mismatch(format!(
            "conv grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, o, ho, wo]
        )));
    }
    let hw = ho * wo;
    let ckk = spec.fan_in();
    let g = grad_out.data();
    let mut grows = vec![0.0; n * hw * o];
    grows.par_chunks_mut(hw * o).enumerate().for_each(|(b, dst)| {
        let img = &g[b * o * hw..(b + 1) * o * hw];
        for (oc, plane) in img.chunks(hw).enumerate() {
            for (p, &v) in plane.iter().enumerate() {
                dst[p * o + oc] = v;
            }
        }
    });
    let cols = im2col(x, spec, ho, wo);
    let mut dw = vec![0.0; o * ckk];
    gemm(o, n * hw, ckk, &grows, true, &cols, false, &mut dw, false);
    drop(cols);
    let mut dcols = vec![0.0; n * hw * ckk];
    gemm(n * hw, o, ckk, &grows, false, weight.data(), false, &mut dcols, false);
    let dx = col2im(&dcols, (n, c, h, w), spec, ho, wo);
    let bias = spec.bias.then(|| {
        let mut db = vec![0.0; o];
        for b in 0..n {
            for (oc, plane) in g[b * o * hw..(b + 1) * o * hw].chunks(hw).enumerate() {
                db[oc] += plane.iter().sum::<f64>();
            }
        }
        Tensor::new(&[o], db).expect("bias grad")
    });
    Ok(ConvGrads {
        input: Tensor::new(&[n, c, h, w], dx)?,
        weight: Tensor::new(&spec.weight_shape(), dw)?,
        bias,
    })
}

/// Direct definition of cross-correlation. Test oracle only.
pub fn conv2d_naive(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &Conv2dSpec) -> Result<Tensor> {
    let (n, c, h, w, ho, wo) = spec.check_input(x, weight)?;
    spec.check_bias(bias)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let o = spec.out_channels;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut s = bias.map_or(0.0, |t| t.data()[oc]);
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oh * sh + i) as isize - ph as isize;
                                let xx = (ow * sw + j) as isize - pw as isize;
                                if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
                                    continue;
                                }
                                s += xd[((b * c + ic) * h + y as usize) * w + xx as usize]
                                    * wd[((oc * c + ic) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * o + oc) * ho + oh) * wo + ow] = s;
                }
            }
        }
    }
    Tensor::new(&[n, o, ho, wo], out)
}
