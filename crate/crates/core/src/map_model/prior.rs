use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::scaling::{fit_global_scaling, EmConfig, ScalingFactors};
use super::stats::{accumulate_stats, SufficientStats};
use crate::codec::{format_f64, SectionedDoc};
use crate::error::{Error, Result};
use crate::features::LabeledUtterance;
use crate::linalg::{cholesky, from_rows, spd_inverse, stack, symmetrize, to_rows};

pub const DEFAULT_MIN_CLASS_FRAMES: usize = 10;
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-6;
const PRIOR_MAGIC: &str = "NVPRIOR1";

/// ML mean, covariance and precision of the stacked utterance means
/// `[mu_s_i; mu_n_i]` over a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPriorStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub num_utterances: usize,
}

impl JointPriorStats {
    /// Builds the statistics from a mean and covariance, inverting the latter.
    pub fn from_moments(mean: DVector<f64>, covariance: DMatrix<f64>, num_utterances: usize) -> Result<Self> {
        if !mean.len().is_multiple_of(2) || mean.is_empty() || covariance.shape() != (mean.len(), mean.len()) {
            return Err(Error::Dimension {
                what: "joint covariance size",
                expected: mean.len(),
                actual: covariance.nrows(),
            });
        }
        let covariance = symmetrize(&covariance);
        let precision = spd_inverse(&covariance, "joint prior covariance")?;
        Ok(Self {
            mean,
            covariance,
            precision,
            num_utterances,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn precision_block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let d = self.dim();
        self.precision.view((row * d, col * d), (d, d)).into_owned()
    }

    pub fn covariance_block(&self, row: usize, col: usize) -> DMatrix<f64> {
        let d = self.dim();
        self.covariance.view((row * d, col * d), (d, d)).into_owned()
    }
}

/// Prior parameters `(mu_n, a, B, lambda_n, lambda_s)` and the global scaling
/// factors estimated on the training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrior {
    mu_n: DVector<f64>,
    a: DVector<f64>,
    b: DMatrix<f64>,
    lambda_s: DMatrix<f64>,
    lambda_n: DMatrix<f64>,
    r_s_global: f64,
    r_n_global: f64,
}

impl NoisePrior {
    pub fn new(
        mu_n: DVector<f64>,
        a: DVector<f64>,
        b: DMatrix<f64>,
        lambda_s: DMatrix<f64>,
        lambda_n: DMatrix<f64>,
        r_s_global: f64,
        r_n_global: f64,
    ) -> Result<Self> {
        let d = mu_n.len();
        if d == 0 {
            return Err(Error::InvalidConfig("prior dimension must be at least 1".into()));
        }
        for (what, shape) in [
            ("a length", (a.len(), 1)),
            ("B rows", (b.nrows(), b.ncols())),
            ("lambda_s rows", (lambda_s.nrows(), lambda_s.ncols())),
            ("lambda_n rows", (lambda_n.nrows(), lambda_n.ncols())),
        ] {
            let expected = if shape.1 == 1 { (d, 1) } else { (d, d) };
            if shape != expected {
                return Err(Error::Dimension {
                    what,
                    expected: d,
                    actual: if shape.0 != d { shape.0 } else { shape.1 },
                });
            }
        }
        let finite = mu_n
            .iter()
            .chain(a.iter())
            .chain(b.iter())
            .chain(lambda_s.iter())
            .chain(lambda_n.iter());
        if finite.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("noise prior"));
        }
        for r in [r_s_global, r_n_global] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidConfig(format!("scaling factor {r} must be positive")));
            }
        }
        let lambda_s = checked_symmetric(lambda_s, "lambda_s")?;
        let lambda_n = checked_symmetric(lambda_n, "lambda_n")?;
        cholesky(&lambda_s, "lambda_s")?;
        cholesky(&lambda_n, "lambda_n")?;
        Ok(Self {
            mu_n,
            a,
            b,
            lambda_s,
            lambda_n,
            r_s_global,
            r_n_global,
        })
    }

    /// Derives the conditional form from joint statistics:
    /// `lambda_n = Sigma_nn^-1`, `lambda_s = Lambda_ss`,
    /// `a = mu_s + Lambda_ss^-1 Lambda_sn mu_n`, `B = -Lambda_ss^-1 Lambda_sn`.
    pub fn from_joint(joint: &JointPriorStats, scaling: ScalingFactors) -> Result<Self> {
        let d = joint.dim();
        let mu_s = joint.mean.rows(0, d).into_owned();
        let mu_n = joint.mean.rows(d, d).into_owned();
        let lambda_ss = symmetrize(&joint.precision_block(0, 0));
        let lambda_sn = joint.precision_block(0, 1);
        let lambda_n = spd_inverse(&joint.covariance_block(1, 1), "silence-mean covariance")?;
        let ss_inv_sn = cholesky(&lambda_ss, "speech precision block")?.solve(&lambda_sn);
        let a = mu_s + &ss_inv_sn * &mu_n;
        let b = -ss_inv_sn;
        Self::new(mu_n, a, b, lambda_ss, lambda_n, scaling.r_s, scaling.r_n)
    }

    pub fn dim(&self) -> usize {
        self.mu_n.len()
    }

    pub fn mu_n(&self) -> &DVector<f64> {
        &self.mu_n
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn lambda_s(&self) -> &DMatrix<f64> {
        &self.lambda_s
    }

    pub fn lambda_n(&self) -> &DMatrix<f64> {
        &self.lambda_n
    }

    pub fn global_scaling(&self) -> ScalingFactors {
        ScalingFactors {
            r_s: self.r_s_global,
            r_n: self.r_n_global,
        }
    }

    pub fn with_global_scaling(mut self, scaling: ScalingFactors) -> Result<Self> {
        scaling.validate()?;
        self.r_s_global = scaling.r_s;
        self.r_n_global = scaling.r_n;
        Ok(self)
    }

    /// Prior mean of the stacked vector, `[a + B mu_n; mu_n]`.
    pub fn joint_mean(&self) -> DVector<f64> {
        stack(&(&self.a + &self.b * &self.mu_n), &self.mu_n)
    }

    pub fn to_text(&self) -> String {
        let mut doc = SectionedDoc::new(PRIOR_MAGIC);
        doc.push_meta("dim", self.dim());
        doc.push_meta("r_s", format_f64(self.r_s_global));
        doc.push_meta("r_n", format_f64(self.r_n_global));
        doc.push_section("mu_n", vec![self.mu_n.iter().copied().collect()]);
        doc.push_section("a", vec![self.a.iter().copied().collect()]);
        doc.push_section("B", to_rows(&self.b));
        doc.push_section("lambda_s", to_rows(&self.lambda_s));
        doc.push_section("lambda_n", to_rows(&self.lambda_n));
        doc.to_text()
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let doc = SectionedDoc::parse(text, context, PRIOR_MAGIC)?;
        let d = doc.meta_usize("dim", context)?;
        let vector = |name| doc.vector(name, d, context).map(DVector::from_column_slice);
        let matrix = |name| doc.matrix(name, d, d, context).map(from_rows);
        Self::new(
            vector("mu_n")?,
            vector("a")?,
            matrix("B")?,
            matrix("lambda_s")?,
            matrix("lambda_n")?,
            doc.meta_f64("r_s", context)?,
            doc.meta_f64("r_n", context)?,
        )
    }
}

fn checked_symmetric(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (&m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite { what });
    }
    Ok(symmetrize(&m))
}

pub fn read_prior(path: impl AsRef<Path>) -> Result<NoisePrior> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NoisePrior::parse(&text, &path.display().to_string())
}

pub fn write_prior(prior: &NoisePrior, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, prior.to_text()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Utterances with fewer frames than this in either class are skipped.
    pub min_class_frames: usize,
    /// Ridge added to the covariance diagonal, relative to its mean variance.
    pub ridge_scale: f64,
    /// Schedule for the global scaling-factor EM.
    pub em: EmConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            min_class_frames: DEFAULT_MIN_CLASS_FRAMES,
            ridge_scale: DEFAULT_RIDGE_SCALE,
            em: EmConfig::default(),
        }
    }
}

pub fn train_prior(corpus: &[LabeledUtterance], config: &PriorConfig) -> Result<(JointPriorStats, NoisePrior)> {
    let stats = corpus
        .par_iter()
        .map(|u| accumulate_stats(u.features(), u.labels()))
        .collect::<Result<Vec<_>>>()?;
    train_prior_from_stats(&stats, config)
}

/// Same as [`train_prior`], starting from per-utterance statistics.
pub fn train_prior_from_stats(
    stats: &[SufficientStats],
    config: &PriorConfig,
) -> Result<(JointPriorStats, NoisePrior)> {
    if !(config.ridge_scale >= 0.0 && config.ridge_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "ridge scale {} must be >= 0",
            config.ridge_scale
        )));
    }
    let d = match stats.first() {
        Some(s) => s.dim(),
        None => return Err(Error::InsufficientData("empty training corpus".into())),
    };
    if let Some(bad) = stats.iter().find(|s| s.dim() != d) {
        return Err(Error::Dimension {
            what: "utterance feature dimension",
            expected: d,
            actual: bad.dim(),
        });
    }
    let min = config.min_class_frames.max(1);
    let kept: Vec<SufficientStats> = stats
        .iter()
        .filter(|s| s.speech.count >= min && s.silence.count >= min)
        .cloned()
        .collect();
    let needed = 2 * d + 1;
    if kept.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} of {} utterances have at least {} frames of each class; need {}",
            kept.len(),
            stats.len(),
            min,
            needed
        )));
    }

    let means: Vec<DVector<f64>> = kept
        .iter()
        .map(|s| stack(&s.speech.mean().unwrap(), &s.silence.mean().unwrap()))
        .collect();
    let m = means.len() as f64;
    let mut mean = DVector::zeros(2 * d);
    for mu in &means {
        mean += mu;
    }
    mean /= m;
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    for mu in &means {
        let centered = mu - &mean;
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= m;
    let mut ridge = config.ridge_scale * cov.trace() / (2 * d) as f64;
    if ridge == 0.0 {
        // identical utterance means leave no variance to scale against
        ridge = config.ridge_scale;
    }
    for i in 0..2 * d {
        cov[(i, i)] += ridge;
    }

    let joint = JointPriorStats::from_moments(mean, cov, kept.len())?;
    let prior = NoisePrior::from_joint(&joint, ScalingFactors::ONE)?;
    let scaling = fit_global_scaling(&kept, &prior, &config.em)?;
    let prior = prior.with_global_scaling(scaling.factors)?;
    Ok((joint, prior))
}

/// Reassembles the joint precision and mean from the conditional form.
pub fn reconstruct_joint(prior: &NoisePrior) -> Result<JointPriorStats> {
    let d = prior.dim();
    let ls_b = prior.lambda_s() * prior.b();
    let mut precision = DMatrix::zeros(2 * d, 2 * d);
    precision.view_mut((0, 0), (d, d)).copy_from(prior.lambda_s());
    precision.view_mut((0, d), (d, d)).copy_from(&(-&ls_b));
    precision.view_mut((d, 0), (d, d)).copy_from(&(-ls_b.transpose()));
    let nn = prior.lambda_n() + symmetrize(&(prior.b().transpose() * &ls_b));
    precision.view_mut((d, d), (d, d)).copy_from(&nn);
    let covariance = spd_inverse(&precision, "reconstructed joint precision")?;
    Ok(JointPriorStats {
        mean: prior.joint_mean(),
        covariance,
        precision,
        num_utterances: 0,
    })
}
