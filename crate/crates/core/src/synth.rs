//! Sampler for the generative model behind the MAP estimator, used to build
//! corpora with known utterance means and scaling factors.
//!
//! Every utterance draws from its own ChaCha20 stream (`seed`, stream =
//! utterance index) and Gaussian variates come from the Box-Muller transform,
//! so output is bit-reproducible and independent of generation order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::codec::{format_f64, format_row, parse_f64};
use crate::error::{Error, Result};
use crate::features::{
    write_features, write_labels, FeatureFormat, FeatureMatrix, Label, Manifest, ManifestEntry, SadLabels,
};
use crate::linalg::{cholesky, spd_inverse};
use crate::map_model::{NoisePrior, ScalingFactors};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub prior: NoisePrior,
    /// True per-class scaling factors of the frame likelihood.
    pub r: ScalingFactors,
    pub num_utterances: usize,
    pub frames_per_utterance: usize,
    pub speech_fraction: f64,
    /// Mean length of a speech or silence run, in frames.
    pub segment_mean_length: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.r.validate()?;
        if !(self.speech_fraction > 0.0 && self.speech_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "speech fraction {} outside (0, 1)",
                self.speech_fraction
            )));
        }
        if !(self.segment_mean_length >= 1.0 && self.segment_mean_length.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "segment mean length {} must be at least 1",
                self.segment_mean_length
            )));
        }
        Ok(())
    }
}

/// Portable Gaussian stream: ChaCha20 words -> 53-bit uniforms -> Box-Muller.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Geometric run length on `{1, 2, ...}` with the given mean.
    pub fn geometric(&mut self, mean: f64) -> usize {
        if mean <= 1.0 {
            return 1;
        }
        let u = 1.0 - self.uniform();
        1 + (u.ln() / (1.0 - 1.0 / mean).ln()).floor() as usize
    }

    /// `mean + L z` for a lower-triangular factor `L` of the covariance.
    pub fn multivariate(&mut self, mean: &DVector<f64>, factor: &DMatrix<f64>) -> DVector<f64> {
        let z = DVector::from_fn(mean.len(), |_, _| self.standard_normal());
        mean + factor * z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub features: FeatureMatrix,
    pub labels: SadLabels,
    /// True `[mu_s; mu_n]`.
    pub true_means: DVector<f64>,
}

/// Covariance factors derived once per config.
pub struct Sampler<'a> {
    config: &'a SynthConfig,
    silence_mean_factor: DMatrix<f64>,
    speech_mean_factor: DMatrix<f64>,
    speech_frame_factor: DMatrix<f64>,
    silence_frame_factor: DMatrix<f64>,
}

fn covariance_factor(precision: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(cholesky(&spd_inverse(precision, what)?, what)?.l())
}

impl<'a> Sampler<'a> {
    pub fn new(config: &'a SynthConfig) -> Result<Self> {
        config.validate()?;
        let speech = covariance_factor(config.prior.lambda_s(), "lambda_s")?;
        let silence = covariance_factor(config.prior.lambda_n(), "lambda_n")?;
        Ok(Self {
            config,
            speech_frame_factor: &speech / config.r.r_s.sqrt(),
            silence_frame_factor: &silence / config.r.r_n.sqrt(),
            silence_mean_factor: silence,
            speech_mean_factor: speech,
        })
    }

    pub fn sample(&self, index: usize) -> SyntheticUtterance {
        let cfg = self.config;
        let prior = &cfg.prior;
        let d = prior.dim();
        let t = cfg.frames_per_utterance;
        let mut rng = GaussianStream::new(cfg.seed, index as u64);

        let mut labels = Vec::with_capacity(t);
        let mut speech = rng.bernoulli(cfg.speech_fraction);
        let mean_run = |speech: bool| {
            let share = if speech {
                cfg.speech_fraction
            } else {
                1.0 - cfg.speech_fraction
            };
            2.0 * cfg.segment_mean_length * share
        };
        while labels.len() < t {
            let run = rng.geometric(mean_run(speech)).min(t - labels.len());
            let label = if speech { Label::Speech } else { Label::Silence };
            labels.extend(std::iter::repeat_n(label, run));
            speech = !speech;
        }

        let mu_n = rng.multivariate(prior.mu_n(), &self.silence_mean_factor);
        let mu_s = rng.multivariate(&(prior.a() + prior.b() * &mu_n), &self.speech_mean_factor);

        let mut data = Vec::with_capacity(t * d);
        for &label in &labels {
            let x = match label {
                Label::Speech => rng.multivariate(&mu_s, &self.speech_frame_factor),
                Label::Silence => rng.multivariate(&mu_n, &self.silence_frame_factor),
            };
            data.extend(x.iter());
        }
        let mut true_means = DVector::zeros(2 * d);
        true_means.rows_mut(0, d).copy_from(&mu_s);
        true_means.rows_mut(d, d).copy_from(&mu_n);
        SyntheticUtterance {
            features: FeatureMatrix::new(t, d, data).expect("finite samples"),
            labels: SadLabels::new(labels),
            true_means,
        }
    }
}

pub fn sample_utterance(config: &SynthConfig, index: usize) -> Result<SyntheticUtterance> {
    Ok(Sampler::new(config)?.sample(index))
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:06}")
}

/// Known utterance means and scaling factors of a synthetic utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub utterance_id: String,
    pub speech_mean: Vec<f64>,
    pub silence_mean: Vec<f64>,
    pub r: ScalingFactors,
}

impl GroundTruth {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.utterance_id,
            format_row(self.speech_mean.iter().copied()),
            format_row(self.silence_mean.iter().copied()),
            format_f64(self.r.r_s),
            format_f64(self.r.r_n)
        )
    }

    pub fn parse_line(line: &str, context: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 || !(cols.len() - 3).is_multiple_of(2) {
            return Err(Error::parse(
                context,
                "columns",
                format!("bad ground-truth line with {} columns", cols.len()),
            ));
        }
        let d = (cols.len() - 3) / 2;
        let nums = cols[1..]
            .iter()
            .enumerate()
            .map(|(i, tok)| parse_f64(tok, context, || format!("column {}", i + 2)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            utterance_id: cols[0].to_string(),
            speech_mean: nums[..d].to_vec(),
            silence_mean: nums[d..2 * d].to_vec(),
            r: ScalingFactors {
                r_s: nums[2 * d],
                r_n: nums[2 * d + 1],
            },
        })
    }
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| GroundTruth::parse_line(l, &format!("{context} line {}", n + 1)))
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";

/// Writes `feats/`, `labels/`, `manifest.tsv` and `truth.tsv` under `out_dir`
/// and returns the manifest (paths relative to `out_dir`).
pub fn sample_corpus(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let sampler = Sampler::new(config)?;
    for sub in ["feats", "labels"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let rows = (0..config.num_utterances)
        .into_par_iter()
        .map(|i| {
            let id = utterance_id(i);
            let utt = sampler.sample(i);
            let feats = format!("feats/{id}.nvf");
            let labels = format!("labels/{id}.lab");
            write_features(&utt.features, out_dir.join(&feats), FeatureFormat::Binary)?;
            write_labels(&utt.labels, out_dir.join(&labels))?;
            let d = config.prior.dim();
            let truth = GroundTruth {
                utterance_id: id.clone(),
                speech_mean: utt.true_means.rows(0, d).iter().copied().collect(),
                silence_mean: utt.true_means.rows(d, d).iter().copied().collect(),
                r: config.r,
            };
            Ok((
                ManifestEntry {
                    utterance_id: id,
                    feature_path: feats,
                    label_path: Some(labels),
                },
                truth,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut truth_text = String::new();
    for (_, t) in &rows {
        truth_text.push_str(&t.to_line());
        truth_text.push('\n');
    }
    let mut manifest = Manifest::new(rows.into_iter().map(|(e, _)| e).collect())?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.to_text()).map_err(|e| Error::io(&manifest_path, e))?;
    let truth_path = out_dir.join(TRUTH_FILE);
    fs::write(&truth_path, truth_text).map_err(|e| Error::io(&truth_path, e))?;
    manifest.base_dir = Some(out_dir.to_path_buf());
    Ok(manifest)
}

/// Prior used when none is supplied: `mu_n = 0`, `a = 1`, `B = 0.5 I`,
/// unit precisions, unit global scaling.
pub fn default_prior(dim: usize) -> Result<NoisePrior> {
    NoisePrior::new(
        DVector::zeros(dim),
        DVector::from_element(dim, 1.0),
        DMatrix::identity(dim, dim) * 0.5,
        DMatrix::identity(dim, dim),
        DMatrix::identity(dim, dim),
        1.0,
        1.0,
    )
}
