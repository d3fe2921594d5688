//! Cascade amplifier regression network: a small reverse-mode autodiff
//! engine, the amplifier-unit backbone with a linear multi-output head,
//! label-space manifold regularization, and a synthetic spine-phantom
//! dataset with ground-truth heights.

pub mod amplifier;
pub mod autodiff;
pub mod checks;
pub mod container;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod lae;
pub mod layers;
pub mod loss;
pub mod model;
pub mod params;
pub mod phantom;
pub mod tensor;

pub use error::{Error, Result, TensorError};
pub use tensor::{DType, Scalar, Tensor};
