pub mod ablation;
pub mod autodiff;
pub mod check;
pub mod checkpoint;
pub mod data;
pub mod dynamics;
pub mod eqmlp;
pub mod error;
pub mod fields;
pub mod geom;
pub mod model;
pub mod scalar;
pub mod topology;
pub mod train;

mod nn;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GgMotion64 = model::GgMotion<f64>;
pub type GgMotion32 = model::GgMotion<f32>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type Tensor64 = geom::tensor::Tensor<f64>;
