use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Logistic function, split on the sign of `x` so `exp` never overflows.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid_scalar),
    }
}

/// Backward from the forward output `y`: ReLU passes gradient where `y > 0`,
/// sigmoid scales by `y (1 - y)`.
pub fn activation_backward(grad_out: &Tensor, y: &Tensor, kind: Activation) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &y)| match kind {
            Activation::Relu => {
                if y > 0.0 {
                    g
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => g * y * (1.0 - y),
        })
        .collect();
    Tensor::new(grad_out.shape(), data).expect("activation grad shape")
}
