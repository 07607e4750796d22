//! Energy-quantile speech activity detection, used when no alignment-derived
//! labels are available for an utterance.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{read_features_auto, read_labels, FeatureMatrix, Label, LabeledUtterance, Manifest, SadLabels};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SadConfig {
    /// Feature coefficient treated as frame energy (C0 for MFCCs).
    pub energy_coefficient_index: usize,
    /// Frames whose energy is strictly above this quantile are speech.
    pub speech_quantile: f64,
    /// Odd majority-vote window; 1 disables smoothing.
    pub smoothing_window: usize,
}

impl Default for SadConfig {
    fn default() -> Self {
        Self {
            energy_coefficient_index: 0,
            speech_quantile: 0.3,
            smoothing_window: 5,
        }
    }
}

impl SadConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.speech_quantile > 0.0 && self.speech_quantile < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "speech quantile {} outside (0, 1)",
                self.speech_quantile
            )));
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "smoothing window {} must be odd and at least 1",
                self.smoothing_window
            )));
        }
        if self.energy_coefficient_index >= dim {
            return Err(Error::Dimension {
                what: "energy coefficient index bound",
                expected: dim,
                actual: self.energy_coefficient_index,
            });
        }
        Ok(())
    }
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn label_by_energy(features: &FeatureMatrix, config: &SadConfig) -> Result<SadLabels> {
    config.validate(features.dim())?;
    if features.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let energy: Vec<f64> = features.frames().map(|f| f[config.energy_coefficient_index]).collect();
    let threshold = quantile(&energy, config.speech_quantile);
    let raw: Vec<bool> = energy.iter().map(|&e| e > threshold).collect();
    Ok(smooth(&raw, config.smoothing_window)
        .into_iter()
        .map(|s| if s { Label::Speech } else { Label::Silence })
        .collect())
}

/// Majority vote over a centred window, truncated at the utterance edges.
/// Ties (only possible in truncated windows) go to speech.
fn smooth(raw: &[bool], window: usize) -> Vec<bool> {
    if window <= 1 {
        return raw.to_vec();
    }
    let half = window / 2;
    let mut prefix = vec![0usize; raw.len() + 1];
    for (i, &s) in raw.iter().enumerate() {
        prefix[i + 1] = prefix[i] + s as usize;
    }
    (0..raw.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(raw.len());
            let speech = prefix[hi] - prefix[lo];
            2 * speech >= hi - lo
        })
        .collect()
}

/// Loads every manifest entry. External labels win; entries without a label
/// file are labelled with [`label_by_energy`]. Output follows manifest order.
pub fn load_corpus(manifest: &Manifest, config: &SadConfig) -> Result<Vec<LabeledUtterance>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let features = read_features_auto(manifest.resolve(&entry.feature_path))?;
            let labels = match &entry.label_path {
                Some(p) => read_labels(manifest.resolve(p), features.num_frames())?,
                None => label_by_energy(&features, config)?,
            };
            LabeledUtterance::new(entry.utterance_id.clone(), features, labels)
        })
        .collect()
}
