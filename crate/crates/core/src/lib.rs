//! Graph-convolutional cascaded decoder (G-CASCADE) for 2-D semantic
//! segmentation, built on a small reverse-mode tensor engine.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the two concrete instantiations.

pub mod autograd;
pub mod complexity;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod graph_conv;
pub mod gten;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autograd::{Grads, Tape, Var};
pub use error::{Error, Result};
pub use graph_conv::{build_knn_graph, GraphConvVariant, NeighborGraph};
pub use nn::{Forward, Mode, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
