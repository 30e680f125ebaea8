//! Inference-time adversarial defense by rank-aggregating layer-wise
//! generative classifiers over a feed-forward network's pre-activations,
//! with the attacks and file formats needed to evaluate it.
//!
//! Numeric code is generic over [`Scalar`] (`f64` or `f32`). The aliases
//! below fix the 64-bit computation precision used by the tools.

pub mod attacks;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io;
pub mod regroup;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use dataset::{LabeledDataset, Provenance};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Model = engine::NetworkModel<f64>;
pub type Ensemble = regroup::GenerativeEnsemble<f64>;
pub type Trace = engine::FeatureTrace<f64>;
pub type Record = attacks::AdversarialRecord<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Model32 = engine::NetworkModel<f32>;
pub type Ensemble32 = regroup::GenerativeEnsemble<f32>;
