//! Binary MSI/MSS image classification on CPU: a small 64-bit tensor core,
//! tape-based reverse-mode differentiation, a residual-network model zoo,
//! Adam training, PPM data loading, and confusion-matrix metrics.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use autograd::{backward, forward, forward_record, grad_check, shape_trace, GradReport, Gradients, LossSpec, Tape};
pub use error::{Error, Result};
pub use layers::Mode;
pub use model::{count_weight_layers, Model};
pub use tensor::{InitSpec, Tensor};
pub use zoo::{build_baseline, build_modified_resnet, build_resnet_family, Arch, ArchDescriptor, BaselineKind};
