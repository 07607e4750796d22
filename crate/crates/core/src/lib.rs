//! Utterance-level noise vectors for noise-aware acoustic modelling.
//!
//! A noise vector is the concatenation `[mu_s; mu_n]` of the mean speech frame
//! and the mean silence frame of an utterance. This crate computes it offline,
//! online from a growing prefix (maximum likelihood), and online or offline
//! under a joint Gaussian prior that ties speech means to silence means (MAP),
//! with EM estimation of the per-class precision scaling factors.
//!
//! Supporting modules cover the on-disk formats, an energy-based speech
//! activity detector, a sampler for the generative model, the control-layer
//! affine map and an evaluation harness.

pub mod cli;
pub mod codec;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod features;
mod linalg;
pub mod map_model;
pub mod sad;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
pub use estimators::{cmn_apply, nat_vector, offline_noise_vector, utt_mean, NoiseVector, StreamingMleState};
pub use features::{FeatureMatrix, Label, LabeledUtterance, Manifest, ManifestEntry, SadLabels};
pub use map_model::{
    JointPriorStats, MapPosterior, NoisePrior, RPolicy, ScalingFactors, StreamingMap, SufficientStats,
};
