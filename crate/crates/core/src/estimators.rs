//! Offline and streaming maximum-likelihood noise vectors, plus the simple
//! baselines (utterance mean, NAT edge-frame mean, cepstral mean normalisation).

use std::fs;
use std::path::Path;

use crate::codec::{format_row, parse_f64};
use crate::error::{Error, Result};
use crate::features::{check_pairing, FeatureMatrix, Label, SadLabels};

/// Concatenated speech and silence means of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub speech_mean: Vec<f64>,
    pub silence_mean: Vec<f64>,
    pub speech_count: usize,
    pub silence_count: usize,
}

impl NoiseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            speech_mean: vec![0.0; dim],
            silence_mean: vec![0.0; dim],
            speech_count: 0,
            silence_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.speech_mean.len()
    }

    /// `[mu_s; mu_n]`, length `2 * dim`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.speech_mean.clone();
        v.extend_from_slice(&self.silence_mean);
        v
    }

    pub fn distance(&self, other: &NoiseVector) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `utt_id<TAB>2d floats<TAB>N_s<TAB>N_n`
    pub fn to_line(&self, utterance_id: &str) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            utterance_id,
            format_row(self.to_vec()),
            self.speech_count,
            self.silence_count
        )
    }

    pub fn parse_line(line: &str, context: &str) -> Result<(String, NoiseVector)> {
        let cols: Vec<&str> = line.trim_end_matches(['\n', '\r']).split('\t').collect();
        // id + at least two coefficients + two counts, with an even number of coefficients
        if cols.len() < 5 || !(cols.len() - 3).is_multiple_of(2) {
            return Err(Error::parse(
                context,
                "columns",
                format!("bad noise-vector line with {} columns", cols.len()),
            ));
        }
        let dim = (cols.len() - 3) / 2;
        let values = cols[1..1 + 2 * dim]
            .iter()
            .enumerate()
            .map(|(i, tok)| parse_f64(tok, context, || format!("column {}", i + 2)))
            .collect::<Result<Vec<_>>>()?;
        let count = |tok: &str| {
            tok.parse::<usize>()
                .map_err(|_| Error::parse(context, "counts", format!("bad count {tok:?}")))
        };
        Ok((
            cols[0].to_string(),
            NoiseVector {
                speech_mean: values[..dim].to_vec(),
                silence_mean: values[dim..].to_vec(),
                speech_count: count(cols[1 + 2 * dim])?,
                silence_count: count(cols[2 + 2 * dim])?,
            },
        ))
    }
}

pub fn read_noise_vectors(path: impl AsRef<Path>) -> Result<Vec<(String, NoiseVector)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| NoiseVector::parse_line(l, &format!("{context} line {}", n + 1)))
        .collect()
}

/// Running per-class sums for the online maximum-likelihood estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamingMleState {
    sum_speech: Vec<f64>,
    sum_silence: Vec<f64>,
    speech_count: usize,
    silence_count: usize,
}

impl StreamingMleState {
    pub fn new(dim: usize) -> Self {
        Self {
            sum_speech: vec![0.0; dim],
            sum_silence: vec![0.0; dim],
            speech_count: 0,
            silence_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.sum_speech.len()
    }

    pub fn speech_count(&self) -> usize {
        self.speech_count
    }

    pub fn silence_count(&self) -> usize {
        self.silence_count
    }

    pub fn push(&mut self, frame: &[f64], label: Label) -> Result<()> {
        if frame.len() != self.dim() {
            return Err(Error::Dimension {
                what: "frame length",
                expected: self.dim(),
                actual: frame.len(),
            });
        }
        let (sum, count) = match label {
            Label::Speech => (&mut self.sum_speech, &mut self.speech_count),
            Label::Silence => (&mut self.sum_silence, &mut self.silence_count),
        };
        for (s, x) in sum.iter_mut().zip(frame) {
            *s += x;
        }
        *count += 1;
        Ok(())
    }

    /// Per-class mean of the prefix seen so far; an unseen class is all zeros.
    pub fn estimate(&self) -> NoiseVector {
        NoiseVector {
            speech_mean: mean_or_zero(&self.sum_speech, self.speech_count),
            silence_mean: mean_or_zero(&self.sum_silence, self.silence_count),
            speech_count: self.speech_count,
            silence_count: self.silence_count,
        }
    }
}

fn mean_or_zero(sum: &[f64], count: usize) -> Vec<f64> {
    if count == 0 {
        vec![0.0; sum.len()]
    } else {
        sum.iter().map(|s| s / count as f64).collect()
    }
}

/// Means of the speech and silence frames of a whole utterance. A class with
/// no frames gets the zero vector.
pub fn offline_noise_vector(features: &FeatureMatrix, labels: &SadLabels) -> Result<NoiseVector> {
    check_pairing(features, labels)?;
    let mut state = StreamingMleState::new(features.dim());
    for (frame, label) in features.frames().zip(labels.iter()) {
        state.push(frame, label)?;
    }
    Ok(state.estimate())
}

fn column_sums<'a>(frames: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for frame in frames {
        for (s, x) in sum.iter_mut().zip(frame) {
            *s += x;
        }
    }
    sum
}

pub fn utt_mean(features: &FeatureMatrix) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let sum = column_sums(features.frames(), features.dim());
    Ok(mean_or_zero(&sum, features.num_frames()))
}

pub const DEFAULT_NAT_EDGE_FRAMES: usize = 10;

/// Mean of the first and last `edge_frames` frames; frames in both ranges
/// count once, so short utterances reduce to the utterance mean.
pub fn nat_vector(features: &FeatureMatrix, edge_frames: usize) -> Result<Vec<f64>> {
    let t = features.num_frames();
    if t == 0 {
        return Err(Error::EmptyUtterance);
    }
    let head_end = edge_frames.min(t);
    let tail_start = t.saturating_sub(edge_frames).max(head_end);
    let indices = (0..head_end).chain(tail_start..t);
    let count = head_end + (t - tail_start);
    let sum = column_sums(indices.map(|i| features.frame(i)), features.dim());
    Ok(mean_or_zero(&sum, count))
}

/// Subtracts the utterance mean from every frame.
pub fn cmn_apply(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mean = utt_mean(features)?;
    let data = features
        .frames()
        .flat_map(|f| f.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    FeatureMatrix::new(features.num_frames(), features.dim(), data)
}
