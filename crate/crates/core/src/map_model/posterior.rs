use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::prior::NoisePrior;
use super::scaling::ScalingFactors;
use super::stats::{ClassStats, SufficientStats};
use crate::error::{Error, Result};
use crate::estimators::NoiseVector;
use crate::linalg::{cholesky, log_det, stack, symmetrize, trace_of_product};

/// Gaussian posterior over `[mu_s; mu_n]`: precision `K`, mean `K^-1 Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPosterior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

impl MapPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn speech_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.dim()).into_owned()
    }

    pub fn silence_mean(&self) -> DVector<f64> {
        self.mean.rows(self.dim(), self.dim()).into_owned()
    }

    pub fn covariance_block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let d = self.dim();
        self.covariance.view((row * d, col * d), (d, d)).into_owned()
    }

    pub fn to_noise_vector(&self, stats: &SufficientStats) -> NoiseVector {
        noise_vector(&self.mean, stats)
    }
}

pub(crate) fn noise_vector(mean: &DVector<f64>, stats: &SufficientStats) -> NoiseVector {
    let d = mean.len() / 2;
    NoiseVector {
        speech_mean: mean.rows(0, d).iter().copied().collect(),
        silence_mean: mean.rows(d, d).iter().copied().collect(),
        speech_count: stats.speech.count,
        silence_count: stats.silence.count,
    }
}

fn check_dims(stats: &SufficientStats, prior: &NoisePrior) -> Result<()> {
    if stats.dim() != prior.dim() {
        return Err(Error::Dimension {
            what: "statistics dimension vs prior",
            expected: prior.dim(),
            actual: stats.dim(),
        });
    }
    Ok(())
}

/// Assembles the posterior precision `K` and linear term `Q`. `K` is exactly
/// symmetric: the off-diagonal blocks are transposes of one product.
pub(crate) fn assemble(
    stats: &SufficientStats,
    prior: &NoisePrior,
    r: ScalingFactors,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dims(stats, prior)?;
    let d = prior.dim();
    let (ls, ln, b) = (prior.lambda_s(), prior.lambda_n(), prior.b());
    let ls_b = ls * b;
    let bt_ls_b = symmetrize(&(b.transpose() * &ls_b));
    let ws = 1.0 + r.r_s * stats.speech.count as f64;
    let wn = 1.0 + r.r_n * stats.silence.count as f64;

    let mut k = DMatrix::zeros(2 * d, 2 * d);
    k.view_mut((0, 0), (d, d)).copy_from(&(ls * ws));
    k.view_mut((0, d), (d, d)).copy_from(&(-&ls_b));
    k.view_mut((d, 0), (d, d)).copy_from(&(-ls_b.transpose()));
    k.view_mut((d, d), (d, d)).copy_from(&(ln * wn + bt_ls_b));

    let q_s = ls * (prior.a() + &stats.speech.sum * r.r_s);
    // the cross term of the conditional prior contributes -B^T lambda_s a
    let q_n = ln * (prior.mu_n() + &stats.silence.sum * r.r_n) - ls_b.transpose() * prior.a();
    Ok((k, stack(&q_s, &q_n)))
}

/// Posterior mean only, by a Cholesky solve of `K mean = Q`.
pub(crate) fn map_mean(stats: &SufficientStats, prior: &NoisePrior, r: ScalingFactors) -> Result<DVector<f64>> {
    let (k, q) = assemble(stats, prior, r)?;
    Ok(cholesky(&k, "posterior precision K")?.solve(&q))
}

pub fn map_estimate(stats: &SufficientStats, prior: &NoisePrior, r: ScalingFactors) -> Result<MapPosterior> {
    let (k, q) = assemble(stats, prior, r)?;
    let chol = cholesky(&k, "posterior precision K")?;
    let mean = chol.solve(&q);
    let covariance = symmetrize(&chol.inverse());
    Ok(MapPosterior {
        mean,
        precision: k,
        covariance,
    })
}

fn gaussian_log_norm(precision: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    let d = precision.nrows() as f64;
    Ok(0.5 * log_det(&cholesky(precision, what)?) - 0.5 * d * (2.0 * PI).ln())
}

/// `sum_t ln N(x_t; m, (r lambda)^-1)` over the frames summarised by `c`.
pub(crate) fn class_log_likelihood(
    c: &ClassStats,
    m: &DVector<f64>,
    r: f64,
    lambda: &DMatrix<f64>,
    log_norm_lambda: f64,
) -> f64 {
    if c.count == 0 {
        return 0.0;
    }
    let n = c.count as f64;
    let d = m.len() as f64;
    let lm = lambda * m;
    let quad = trace_of_product(lambda, &c.scatter) - 2.0 * lm.dot(&c.sum) + n * lm.dot(m);
    n * (log_norm_lambda + 0.5 * d * r.ln()) - 0.5 * r * quad
}

/// `ln p(x, mu | r, prior)` at `point = [mu_s; mu_n]`: the log posterior
/// density up to a constant independent of `point`.
pub fn log_posterior(
    stats: &SufficientStats,
    prior: &NoisePrior,
    r: ScalingFactors,
    point: &DVector<f64>,
) -> Result<f64> {
    check_dims(stats, prior)?;
    let d = prior.dim();
    if point.len() != 2 * d {
        return Err(Error::Dimension {
            what: "posterior point length",
            expected: 2 * d,
            actual: point.len(),
        });
    }
    let mu_s = point.rows(0, d).into_owned();
    let mu_n = point.rows(d, d).into_owned();
    let norm_s = gaussian_log_norm(prior.lambda_s(), "lambda_s")?;
    let norm_n = gaussian_log_norm(prior.lambda_n(), "lambda_n")?;

    let frames = class_log_likelihood(&stats.speech, &mu_s, r.r_s, prior.lambda_s(), norm_s)
        + class_log_likelihood(&stats.silence, &mu_n, r.r_n, prior.lambda_n(), norm_n);
    let v = &mu_s - prior.a() - prior.b() * &mu_n;
    let w = &mu_n - prior.mu_n();
    let priors = norm_s - 0.5 * (prior.lambda_s() * &v).dot(&v) + norm_n - 0.5 * (prior.lambda_n() * &w).dot(&w);
    Ok(frames + priors)
}
