use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

impl LinearSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self { in_features, out_features, bias: true }
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.out_features, self.in_features]
    }

    fn check(&self, x: &Tensor, weight: &Tensor) -> Result<usize> {
        let (n, f) = x.dims2()?;
        if f != self.in_features {
            return Err(Error::mismatch(format!(
                "linear expects {} features, got {f}",
                self.in_features
            )));
        }
        if weight.shape() != self.weight_shape() {
            return Err(Error::mismatch(format!("linear weight shape {:?}", weight.shape())));
        }
        Ok(n)
    }
}

/// `x · Wᵀ + b` for `x` of shape `[N, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &LinearSpec) -> Result<Tensor> {
    let n = spec.check(x, weight)?;
    let o = spec.out_features;
    let mut out = vec![0.0; n * o];
    gemm(n, spec.in_features, o, x.data(), false, weight.data(), true, &mut out, false);
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::mismatch(format!("linear bias shape {:?}", b.shape())));
        }
        for row in out.chunks_mut(o) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Tensor::new(&[n, o], out)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, spec: &LinearSpec, grad_out: &Tensor) -> Result<LinearGrads> {
    let n = spec.check(x, weight)?;
    let (i, o) = (spec.in_features, spec.out_features);
    if grad_out.shape() != [n, o] {
        return Err(Error::mismatch(format!("linear grad shape {:?}", grad_out.shape())));
    }
    let mut dx = vec![0.0; n * i];
    gemm(n, o, i, grad_out.data(), false, weight.data(), false, &mut dx, false);
    let mut dw = vec![0.0; o * i];
    gemm(o, n, i, grad_out.data(), true, x.data(), false, &mut dw, false);
    let bias = spec.bias.then(|| {
        let mut db = vec![0.0; o];
        for row in grad_out.data().chunks(o) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        Tensor::new(&[o], db).expect("bias grad")
    });
    Ok(LinearGrads {
        input: Tensor::new(&[n, i], dx)?,
        weight: Tensor::new(&[o, i], dw)?,
        bias,
    })
}
