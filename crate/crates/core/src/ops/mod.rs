//! Pure tensor kernels (forward and backward) used by the tape.

pub mod conv;
pub mod norm;
pub mod pointwise;
pub mod spatial;

pub use conv::{conv2d, depthwise_conv2d, ConvGeom};
pub use norm::{batchnorm_eval, batchnorm_train, BnConfig};
pub use pointwise::{add, concat_channel, gelu, hadamard, relu, sigmoid, softmax_channel, sub};
pub use spatial::{
    avgpool2d, channel_reduce, upsample_bilinear2x, upsample_nearest, ChannelReduce, UpsampleMode,
};
