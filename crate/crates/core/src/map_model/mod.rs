//! MAP estimation of per-utterance speech and silence means under a joint
//! Gaussian prior.
//!
//! Generative model for utterance `i` with prior parameters
//! `(mu_n, a, B, lambda_n, lambda_s)`:
//!
//! ```text
//! mu_n_i        ~ N(mu_n, lambda_n^-1)
//! mu_s_i | mu_n ~ N(a + B mu_n_i, lambda_s^-1)
//! x_t (silence) ~ N(mu_n_i, (r_n lambda_n)^-1)
//! x_t (speech)  ~ N(mu_s_i, (r_s lambda_s)^-1)
//! ```
//!
//! The prior is trained from utterance-level ML means ([`train_prior`]), the
//! posterior over `[mu_s_i; mu_n_i]` is Gaussian with precision `K` and mean
//! `K^-1 Q` ([`map_estimate`]), and the scaling factors `r` are fitted by EM
//! ([`fit_scaling`]).

mod posterior;
mod prior;
mod scaling;
mod stats;
mod streaming;

pub use posterior::{log_posterior, map_estimate, MapPosterior};
pub use prior::{
    read_prior, reconstruct_joint, train_prior, train_prior_from_stats, write_prior, JointPriorStats, NoisePrior,
    PriorConfig, DEFAULT_MIN_CLASS_FRAMES, DEFAULT_RIDGE_SCALE,
};
pub use scaling::{
    em_objective, em_update_scaling, estimate_global_scaling, fit_scaling, marginal_log_likelihood, EmConfig,
    ScalingFactors, ScalingFit, ScalingUpdate, R_MAX, R_MIN,
};
pub use stats::{accumulate_stats, ClassStats, SufficientStats};
pub use streaming::{RPolicy, StreamingMap};
