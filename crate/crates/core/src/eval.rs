//! Evaluation harness: online-vs-offline convergence traces, robustness to
//! label noise, and estimator comparison against synthetic ground truth.
//! Reports are TSV with a one-line header.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::codec::format_f64;
use crate::error::{Error, Result};
use crate::estimators::{
    nat_vector, offline_noise_vector, utt_mean, NoiseVector, StreamingMleState, DEFAULT_NAT_EDGE_FRAMES,
};
use crate::features::{FeatureMatrix, Label, LabeledUtterance, SadLabels};
use crate::map_model::{accumulate_stats, fit_scaling, map_estimate, EmConfig, NoisePrior, RPolicy, StreamingMap};
use crate::synth::{GaussianStream, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mle,
    Map,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mle" | "offline" => Ok(Method::Mle),
            "map" => Ok(Method::Map),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mle => "mle",
            Method::Map => "map",
        })
    }
}

/// Settings for the MAP estimator; ignored by the ML estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    pub policy: RPolicy,
    pub solve_every: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            policy: RPolicy::Global,
            solve_every: 1,
        }
    }
}

/// Either streaming estimator behind one interface.
pub enum OnlineEstimator {
    Mle(StreamingMleState),
    Map(Box<StreamingMap>),
}

impl OnlineEstimator {
    pub fn new(method: Method, dim: usize, prior: Option<&NoisePrior>, options: &MapOptions) -> Result<Self> {
        match method {
            Method::Mle => Ok(OnlineEstimator::Mle(StreamingMleState::new(dim))),
            Method::Map => {
                let prior = prior.ok_or(Error::MissingPrior)?;
                if prior.dim() != dim {
                    return Err(Error::Dimension {
                        what: "feature dimension vs prior",
                        expected: prior.dim(),
                        actual: dim,
                    });
                }
                let s = StreamingMap::new(prior.clone(), options.policy).with_solve_every(options.solve_every);
                Ok(OnlineEstimator::Map(Box::new(s)))
            }
        }
    }

    pub fn push(&mut self, frame: &[f64], label: Label) -> Result<()> {
        match self {
            OnlineEstimator::Mle(s) => s.push(frame, label),
            OnlineEstimator::Map(s) => s.push(frame, label),
        }
    }

    pub fn estimate(&mut self) -> Result<NoiseVector> {
        match self {
            OnlineEstimator::Mle(s) => Ok(s.estimate()),
            OnlineEstimator::Map(s) => s.estimate(),
        }
    }

    pub fn estimate_exact(&mut self) -> Result<NoiseVector> {
        match self {
            OnlineEstimator::Mle(s) => Ok(s.estimate()),
            OnlineEstimator::Map(s) => s.estimate_exact(),
        }
    }
}

/// Whole-utterance MAP vector. The `Em` policy fits `r` on the full
/// utterance starting from 1; the others use their fixed factors.
pub fn map_noise_vector(
    features: &FeatureMatrix,
    labels: &SadLabels,
    prior: &NoisePrior,
    policy: RPolicy,
) -> Result<NoiseVector> {
    let stats = accumulate_stats(features, labels)?;
    let post = match policy {
        RPolicy::Em { .. } => fit_scaling(&stats, prior, policy.initial(prior), &EmConfig::default())?.posterior,
        _ => map_estimate(&stats, prior, policy.initial(prior))?,
    };
    Ok(post.to_noise_vector(&stats))
}

/// Final-frame estimate of `method` over the whole utterance.
pub fn utterance_vector(
    features: &FeatureMatrix,
    labels: &SadLabels,
    method: Method,
    prior: Option<&NoisePrior>,
    options: &MapOptions,
) -> Result<NoiseVector> {
    match method {
        Method::Mle => offline_noise_vector(features, labels),
        Method::Map => map_noise_vector(features, labels, prior.ok_or(Error::MissingPrior)?, options.policy),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub frame_index: usize,
    /// `[mu_s; mu_n]` after this frame.
    pub estimate: Vec<f64>,
    /// Euclidean distance to the offline vector.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub offline: NoiseVector,
}

pub fn trace_convergence(
    features: &FeatureMatrix,
    labels: &SadLabels,
    method: Method,
    prior: Option<&NoisePrior>,
    options: &MapOptions,
) -> Result<Trajectory> {
    let offline = offline_noise_vector(features, labels)?;
    let target = offline.to_vec();
    let mut online = OnlineEstimator::new(method, features.dim(), prior, options)?;
    let mut records = Vec::with_capacity(features.num_frames());
    for (t, (frame, label)) in features.frames().zip(labels.iter()).enumerate() {
        online.push(frame, label)?;
        let estimate = online.estimate()?.to_vec();
        let distance = estimate
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        records.push(TrajectoryRecord {
            frame_index: t,
            estimate,
            distance,
        });
    }
    Ok(Trajectory { records, offline })
}

/// Coefficient indices for the plot table: `{15, 35, 55, 75}` when the
/// vector is long enough (`2d >= 76`), otherwise up to four evenly spaced.
pub fn default_plot_coefficients(vector_len: usize) -> Vec<usize> {
    const PREFERRED: [usize; 4] = [15, 35, 55, 75];
    if PREFERRED.iter().all(|&c| c < vector_len) {
        return PREFERRED.to_vec();
    }
    let k = vector_len.min(4);
    (0..k).map(|i| (2 * i + 1) * vector_len / (2 * k)).collect()
}

impl Trajectory {
    pub fn to_tsv(&self) -> String {
        let n = self.offline.dim() * 2;
        let mut out = String::from("frame_index\tdistance");
        for c in 0..n {
            out.push_str(&format!("\tcoeff_{c}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{}\t{}", r.frame_index, format_f64(r.distance)));
            for v in &r.estimate {
                out.push('\t');
                out.push_str(&format_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    /// `frame_index`, the chosen online coefficients, then their offline values.
    pub fn plot_tsv(&self, coefficients: &[usize]) -> Result<String> {
        let offline = self.offline.to_vec();
        if let Some(&bad) = coefficients.iter().find(|&&c| c >= offline.len()) {
            return Err(Error::Dimension {
                what: "plot coefficient index bound",
                expected: offline.len(),
                actual: bad,
            });
        }
        let mut out = String::from("frame_index");
        for c in coefficients {
            out.push_str(&format!("\tcoeff_{c}"));
        }
        for c in coefficients {
            out.push_str(&format!("\toffline_{c}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.frame_index.to_string());
            for &c in coefficients {
                out.push('\t');
                out.push_str(&format_f64(r.estimate[c]));
            }
            for &c in coefficients {
                out.push('\t');
                out.push_str(&format_f64(offline[c]));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub flip_probability: f64,
    pub mean_distance: f64,
}

/// For each flip probability `p`, flips every label independently with
/// probability `p` and reports the mean distance between the resulting
/// vector and the clean-label vector. One uniform per frame is shared across
/// all `p`, so the flipped sets are nested as `p` grows.
pub fn label_noise_sweep(
    corpus: &[LabeledUtterance],
    flip_probabilities: &[f64],
    method: Method,
    prior: Option<&NoisePrior>,
    options: &MapOptions,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if let Some(p) = flip_probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidConfig(format!("flip probability {p} outside [0, 1]")));
    }
    if method == Method::Map && prior.is_none() {
        return Err(Error::MissingPrior);
    }
    let per_utt = corpus
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = GaussianStream::new(seed, i as u64);
            let draws: Vec<f64> = (0..u.labels().len()).map(|_| rng.uniform()).collect();
            let clean = utterance_vector(u.features(), u.labels(), method, prior, options)?;
            flip_probabilities
                .iter()
                .map(|&p| {
                    let noisy: SadLabels = u
                        .labels()
                        .iter()
                        .zip(&draws)
                        .map(|(l, &draw)| if draw < p { l.flipped() } else { l })
                        .collect();
                    Ok(utterance_vector(u.features(), &noisy, method, prior, options)?.distance(&clean))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = corpus.len().max(1) as f64;
    Ok(flip_probabilities
        .iter()
        .enumerate()
        .map(|(j, &p)| SweepRow {
            flip_probability: p,
            mean_distance: per_utt.iter().map(|d| d[j]).sum::<f64>() / n,
        })
        .collect())
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("flip_probability\tmean_distance\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\n",
            format_f64(r.flip_probability),
            format_f64(r.mean_distance)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub mse_speech: f64,
    pub mse_silence: f64,
}

const PREFIX_PERCENTS: [usize; 3] = [25, 50, 100];

fn prefix_len(frames: usize, percent: usize) -> usize {
    (frames * percent).div_ceil(100)
}

fn mse(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64
}

fn online_prefix(
    u: &LabeledUtterance,
    method: Method,
    prior: Option<&NoisePrior>,
    options: &MapOptions,
    frames: usize,
) -> Result<NoiseVector> {
    let mut online = OnlineEstimator::new(method, u.features().dim(), prior, options)?;
    for (frame, label) in u.features().frames().zip(u.labels().iter()).take(frames) {
        online.push(frame, label)?;
    }
    online.estimate_exact()
}

/// Per-estimator MSE against the true speech and silence means, averaged over
/// coefficients and utterances. Rows: utt-mean, nat, offline, then the ML and
/// MAP online estimates after 25%, 50% and 100% of each utterance.
pub fn compare_estimators(
    corpus: &[LabeledUtterance],
    truth: &[GroundTruth],
    prior: &NoisePrior,
    options: &MapOptions,
) -> Result<Vec<CompareRow>> {
    let by_id: HashMap<&str, &GroundTruth> = truth.iter().map(|t| (t.utterance_id.as_str(), t)).collect();
    let mut names = vec!["utt-mean".to_string(), "nat".to_string(), "offline".to_string()];
    for m in ["mle", "map"] {
        names.extend(PREFIX_PERCENTS.iter().map(|p| format!("{m}-{p}%")));
    }
    let per_utt = corpus
        .par_iter()
        .map(|u| {
            let t = by_id
                .get(u.id.as_str())
                .ok_or_else(|| Error::MissingGroundTruth(u.id.clone()))?;
            let f = u.features();
            let score = |s: &[f64], n: &[f64]| (mse(s, &t.speech_mean), mse(n, &t.silence_mean));
            let mut errs = Vec::with_capacity(names.len());
            let um = utt_mean(f)?;
            errs.push(score(&um, &um));
            let nat = nat_vector(f, DEFAULT_NAT_EDGE_FRAMES)?;
            errs.push(score(&nat, &nat));
            let off = offline_noise_vector(f, u.labels())?;
            errs.push(score(&off.speech_mean, &off.silence_mean));
            for method in [Method::Mle, Method::Map] {
                for p in PREFIX_PERCENTS {
                    let v = online_prefix(u, method, Some(prior), options, prefix_len(f.num_frames(), p))?;
                    errs.push(score(&v.speech_mean, &v.silence_mean));
                }
            }
            Ok(errs)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = corpus.len().max(1) as f64;
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(j, method)| CompareRow {
            method,
            mse_speech: per_utt.iter().map(|e| e[j].0).sum::<f64>() / n,
            mse_silence: per_utt.iter().map(|e| e[j].1).sum::<f64>() / n,
        })
        .collect())
}

pub fn compare_tsv(rows: &[CompareRow]) -> String {
    let mut out = String::from("method\tmse_speech\tmse_silence\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            r.method,
            format_f64(r.mse_speech),
            format_f64(r.mse_silence)
        ));
    }
    out
}
