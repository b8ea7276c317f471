//! Convolutional decoder for multichannel 1 s class-trials.
//!
//! A self-contained layer/gradient engine (temporal and spatial convolution,
//! batch normalization, ELU, max-pooling, dropout, dense softmax head) with
//! Adam optimization and two-phase early stopping. All arithmetic is generic
//! over the float type: training runs in f32 for speed, gradient checks run
//! in f64. Convolutions are GEMM-backed (im2col), and every reduction has a
//! fixed order, so results are bit-reproducible for a given seed.

mod adam;
pub mod gradcheck;
mod layers;
mod net;
mod train;

pub use adam::Adam;
pub use layers::Float;
pub use net::{ConvNet, ConvNetConfig, ConvNetError, ShapeChain};
pub use train::{
    fit_convnet, ConvNetModel, EpochRecord, Standardization, TrainConfig, TrainPhase,
};
