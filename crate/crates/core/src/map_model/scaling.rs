//! EM estimation of the per-class precision scaling factors `r_s`, `r_n`.
//!
//! With posterior `q(mu) = N(m, C)` the update is
//!
//! ```text
//! 1 / r = tr(lambda * E[sum_t (x_t - mu)(x_t - mu)^T]) / (d * N)
//! E[...] = S - F m^T - m F^T + N (C + m m^T)
//! ```
//!
//! summed over utterances (numerator and `N`) for the corpus-wide factors.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::posterior::{class_log_likelihood, log_posterior, map_estimate, MapPosterior};
use super::prior::NoisePrior;
use super::stats::{ClassStats, SufficientStats};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, log_det, trace_of_product};

pub const R_MIN: f64 = 1e-6;
pub const R_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFactors {
    pub r_s: f64,
    pub r_n: f64,
}

impl ScalingFactors {
    pub const ONE: ScalingFactors = ScalingFactors { r_s: 1.0, r_n: 1.0 };

    pub fn new(r_s: f64, r_n: f64) -> Result<Self> {
        let r = Self { r_s, r_n };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.r_s, self.r_n] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "scaling factor {r} must be positive and finite"
                )));
            }
        }
        Ok(())
    }

    fn max_relative_change(&self, next: &ScalingFactors) -> f64 {
        ((next.r_s - self.r_s) / self.r_s)
            .abs()
            .max(((next.r_n - self.r_n) / self.r_n).abs())
    }
}

impl Default for ScalingFactors {
    fn default() -> Self {
        Self::ONE
    }
}

/// Result of one scaling update. A degenerate class had a non-positive
/// expected scatter (constant data) and was clamped to [`R_MAX`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingUpdate {
    pub factors: ScalingFactors,
    pub speech_degenerate: bool,
    pub silence_degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            rel_tol: 1e-6,
        }
    }
}

fn expected_scatter(c: &ClassStats, m: &DVector<f64>, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let fm = &c.sum * m.transpose();
    let n = c.count as f64;
    &c.scatter - &fm - fm.transpose() + (cov + m * m.transpose()) * n
}

/// `tr(lambda E[scatter])` for the speech (0) or silence (1) block.
fn scatter_trace(stats: &SufficientStats, prior: &NoisePrior, post: &MapPosterior, block: usize) -> f64 {
    let (c, lambda, m) = if block == 0 {
        (&stats.speech, prior.lambda_s(), post.speech_mean())
    } else {
        (&stats.silence, prior.lambda_n(), post.silence_mean())
    };
    if c.count == 0 {
        return 0.0;
    }
    trace_of_product(lambda, &expected_scatter(c, &m, &post.covariance_block(block, block)))
}

fn solve_factor(dim: usize, count: usize, trace: f64, current: f64) -> (f64, bool) {
    if count == 0 {
        return (current, false);
    }
    if trace.is_nan() || trace <= 0.0 || !trace.is_finite() {
        return (R_MAX, true);
    }
    (((dim * count) as f64 / trace).clamp(R_MIN, R_MAX), false)
}

fn check_posterior(stats: &SufficientStats, prior: &NoisePrior, post: &MapPosterior) -> Result<()> {
    for (what, actual, expected) in [
        ("statistics dimension vs prior", stats.dim(), prior.dim()),
        ("posterior dimension vs prior", post.mean.len(), 2 * prior.dim()),
    ] {
        if actual != expected {
            return Err(Error::Dimension { what, expected, actual });
        }
    }
    Ok(())
}

/// One M-step for a single utterance. A class with no frames keeps its
/// `current` factor.
pub fn em_update_scaling(
    stats: &SufficientStats,
    prior: &NoisePrior,
    posterior: &MapPosterior,
    current: ScalingFactors,
) -> Result<ScalingUpdate> {
    check_posterior(stats, prior, posterior)?;
    let d = prior.dim();
    let (r_s, speech_degenerate) = solve_factor(
        d,
        stats.speech.count,
        scatter_trace(stats, prior, posterior, 0),
        current.r_s,
    );
    let (r_n, silence_degenerate) = solve_factor(
        d,
        stats.silence.count,
        scatter_trace(stats, prior, posterior, 1),
        current.r_n,
    );
    if speech_degenerate || silence_degenerate {
        log::warn!("degenerate scatter while updating scaling factors; clamped to {R_MAX}");
    }
    Ok(ScalingUpdate {
        factors: ScalingFactors { r_s, r_n },
        speech_degenerate,
        silence_degenerate,
    })
}

/// Corpus-wide factors: traces and frame counts summed over utterances.
pub fn estimate_global_scaling(
    stats: &[SufficientStats],
    posteriors: &[MapPosterior],
    prior: &NoisePrior,
) -> Result<ScalingUpdate> {
    if stats.len() != posteriors.len() {
        return Err(Error::Dimension {
            what: "posterior count vs utterance count",
            expected: stats.len(),
            actual: posteriors.len(),
        });
    }
    let (mut n_s, mut n_n, mut t_s, mut t_n) = (0usize, 0usize, 0.0, 0.0);
    for (s, post) in stats.iter().zip(posteriors) {
        check_posterior(s, prior, post)?;
        n_s += s.speech.count;
        n_n += s.silence.count;
        t_s += scatter_trace(s, prior, post, 0);
        t_n += scatter_trace(s, prior, post, 1);
    }
    if n_s == 0 || n_n == 0 {
        return Err(Error::InsufficientData(format!(
            "global scaling needs frames of both classes (speech {n_s}, silence {n_n})"
        )));
    }
    let d = prior.dim();
    let (r_s, speech_degenerate) = solve_factor(d, n_s, t_s, 1.0);
    let (r_n, silence_degenerate) = solve_factor(d, n_n, t_n, 1.0);
    Ok(ScalingUpdate {
        factors: ScalingFactors { r_s, r_n },
        speech_degenerate,
        silence_degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub factors: ScalingFactors,
    /// Posterior evaluated at the returned factors.
    pub posterior: MapPosterior,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates [`map_estimate`] and [`em_update_scaling`] until the largest
/// relative change in `(r_s, r_n)` drops below `config.rel_tol`.
pub fn fit_scaling(
    stats: &SufficientStats,
    prior: &NoisePrior,
    init: ScalingFactors,
    config: &EmConfig,
) -> Result<ScalingFit> {
    init.validate()?;
    let mut r = init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let post = map_estimate(stats, prior, r)?;
        let next = em_update_scaling(stats, prior, &post, r)?.factors;
        let change = r.max_relative_change(&next);
        r = next;
        if change < config.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(ScalingFit {
        factors: r,
        posterior: map_estimate(stats, prior, r)?,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GlobalFit {
    pub factors: ScalingFactors,
    pub iterations: usize,
}

/// Corpus-level EM: posteriors of every utterance under shared factors,
/// then [`estimate_global_scaling`], starting from `r = 1`.
pub(crate) fn fit_global_scaling(
    stats: &[SufficientStats],
    prior: &NoisePrior,
    config: &EmConfig,
) -> Result<GlobalFit> {
    let mut r = ScalingFactors::ONE;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let posteriors = stats
            .par_iter()
            .map(|s| map_estimate(s, prior, r))
            .collect::<Result<Vec<_>>>()?;
        let next = estimate_global_scaling(stats, &posteriors, prior)?.factors;
        let change = r.max_relative_change(&next);
        r = next;
        if change < config.rel_tol {
            break;
        }
    }
    Ok(GlobalFit { factors: r, iterations })
}

/// EM auxiliary function: `E_q[ln p(x, mu | r)]` with `q` the given posterior.
pub fn em_objective(
    stats: &SufficientStats,
    prior: &NoisePrior,
    r: ScalingFactors,
    posterior: &MapPosterior,
) -> Result<f64> {
    check_posterior(stats, prior, posterior)?;
    let d = prior.dim();
    let half_log_2pi = 0.5 * d as f64 * (2.0 * PI).ln();
    let norm_s = 0.5 * log_det(&cholesky(prior.lambda_s(), "lambda_s")?) - half_log_2pi;
    let norm_n = 0.5 * log_det(&cholesky(prior.lambda_n(), "lambda_n")?) - half_log_2pi;
    let (m_s, m_n) = (posterior.speech_mean(), posterior.silence_mean());

    // plug-in frame terms plus the covariance correction -r/2 N tr(lambda C)
    let mut total = class_log_likelihood(&stats.speech, &m_s, r.r_s, prior.lambda_s(), norm_s)
        + class_log_likelihood(&stats.silence, &m_n, r.r_n, prior.lambda_n(), norm_n);
    let (c_ss, c_sn, c_nn) = (
        posterior.covariance_block(0, 0),
        posterior.covariance_block(0, 1),
        posterior.covariance_block(1, 1),
    );
    total -= 0.5 * r.r_s * stats.speech.count as f64 * trace_of_product(prior.lambda_s(), &c_ss);
    total -= 0.5 * r.r_n * stats.silence.count as f64 * trace_of_product(prior.lambda_n(), &c_nn);

    // E[(mu_s - a - B mu_n)^T lambda_s (...)] with L = [I, -B]
    let b = prior.b();
    let v = &m_s - prior.a() - b * &m_n;
    let l_c_lt = &c_ss - &c_sn * b.transpose() - b * c_sn.transpose() + b * &c_nn * b.transpose();
    let speech_prior = (prior.lambda_s() * &v).dot(&v) + trace_of_product(prior.lambda_s(), &l_c_lt);
    let w = &m_n - prior.mu_n();
    let silence_prior = (prior.lambda_n() * &w).dot(&w) + trace_of_product(prior.lambda_n(), &c_nn);
    Ok(total + norm_s + norm_n - 0.5 * (speech_prior + silence_prior))
}

/// `ln p(x | r, prior)` with the utterance means integrated out, computed as
/// `ln p(x, mu_hat) - ln q(mu_hat)` at the posterior mode.
pub fn marginal_log_likelihood(stats: &SufficientStats, prior: &NoisePrior, r: ScalingFactors) -> Result<f64> {
    let post = map_estimate(stats, prior, r)?;
    let joint = log_posterior(stats, prior, r, &post.mean)?;
    let d2 = post.mean.len() as f64;
    let log_q_at_mode =
        0.5 * log_det(&cholesky(&post.precision, "posterior precision K")?) - 0.5 * d2 * (2.0 * PI).ln();
    Ok(joint - log_q_at_mode)
}
