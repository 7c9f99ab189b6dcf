//! Minimal NCHW tensor library used by the vessel segmentation networks.
//!
//! Layers are stateless with respect to a forward pass: `forward` borrows the
//! layer immutably and returns the output together with a cache, and
//! `backward` consumes that cache, accumulates parameter gradients and
//! returns the input gradient. Several forward passes can therefore be in
//! flight before any of them is backpropagated.

mod gemm;
pub mod layers;
pub mod optim;
mod param;
mod tensor;

pub use layers::{
    BatchNorm2d, BnCache, Conv2d, ConvCache, ConvTranspose2x2, Dropout, LeakyRelu, Linear,
    LinearCache, MaxPool2, PoolCache,
};
pub use optim::{Adam, AdamState};
pub use param::{join, Module, Param, ParamKind};
pub use tensor::Tensor;

/// Elementwise logistic function.
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
