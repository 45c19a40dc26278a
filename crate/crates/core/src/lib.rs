//! Transformation-invariant fingerprints of transformer attention weights.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, the precision every stored artifact uses.

pub mod ablation;
pub mod augment;
pub mod error;
pub mod fingerprint;
pub mod linalg;
pub mod matfile;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod spectra;
pub mod transforms;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Model = model::ModelWeights<f64>;
pub type Layer = model::AttentionWeights<f64>;
pub type Fingerprint = fingerprint::Fingerprint<f64>;
pub type Corpus = augment::LabeledFingerprints<f64>;
pub type Model32 = model::ModelWeights<f32>;
pub type Fingerprint32 = fingerprint::Fingerprint<f32>;
