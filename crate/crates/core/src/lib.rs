pub mod autograd;
pub mod cli;
pub mod config;
pub mod error;
pub mod fde;
pub mod io;
pub mod mrm;
pub mod nn;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod training;
pub mod verify;
pub mod weights;

pub use autograd::{Graph, NodeId};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
