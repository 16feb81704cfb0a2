//! Hybrid machine translation: an attention encoder-decoder whose output
//! distribution is interpolated, through a learned gate, with a
//! distribution over word recommendations from a statistical model.

pub mod ablation;
pub mod advisor;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nmt;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod selftest;
pub mod smt;
pub mod tensor;
pub mod training;
pub mod wide;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = graph::Graph<f64>;
pub type ParamStore = params::ParamStore<f64>;
pub type HybridModel = model::HybridModel<f64>;
pub type HybridModelF32 = model::HybridModel<f32>;
