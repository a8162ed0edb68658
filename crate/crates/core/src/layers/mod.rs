//! Differentiable building blocks: each kernel is a pure function of its
//! input and parameters, paired with a backward rule.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod pool;

pub use activation::{activation, activation_backward, sigmoid_scalar, Activation};
pub use batchnorm::{
    batchnorm2d_backward, batchnorm2d_eval, batchnorm2d_train, BatchNorm2dSpec, BatchNormCache, BatchNormGrads,
    DEFAULT_EPS as BN_EPS, DEFAULT_MOMENTUM as BN_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_naive, Conv2dSpec, ConvGrads};
pub use dropout::{dropout, dropout_backward, DropoutSpec};
pub use linear::{linear, linear_backward, LinearGrads, LinearSpec};
pub use pool::{adaptive_avgpool2d, adaptive_avgpool2d_backward, maxpool2d, maxpool2d_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
