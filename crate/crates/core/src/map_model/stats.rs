use std::ops::{Add, AddAssign};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{check_pairing, FeatureMatrix, Label, SadLabels};

/// Frame count, feature sum and outer-product sum of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub count: usize,
    pub sum: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

impl ClassStats {
    pub fn zeros(dim: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    fn push(&mut self, frame: &[f64]) {
        let x = DVector::from_column_slice(frame);
        self.scatter.ger(1.0, &x, &x, 1.0);
        self.sum += x;
        self.count += 1;
    }

    /// Class mean, or `None` when no frames were seen.
    pub fn mean(&self) -> Option<DVector<f64>> {
        (self.count > 0).then(|| &self.sum / self.count as f64)
    }
}

impl AddAssign<&ClassStats> for ClassStats {
    fn add_assign(&mut self, rhs: &ClassStats) {
        self.count += rhs.count;
        self.sum += &rhs.sum;
        self.scatter += &rhs.scatter;
    }
}

/// Per-utterance accumulators `(N, F, S)` for speech and silence.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub speech: ClassStats,
    pub silence: ClassStats,
}

impl SufficientStats {
    pub fn zeros(dim: usize) -> Self {
        Self {
            speech: ClassStats::zeros(dim),
            silence: ClassStats::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.speech.sum.len()
    }

    pub fn class(&self, label: Label) -> &ClassStats {
        match label {
            Label::Speech => &self.speech,
            Label::Silence => &self.silence,
        }
    }

    pub fn push(&mut self, frame: &[f64], label: Label) -> Result<()> {
        if frame.len() != self.dim() {
            return Err(Error::Dimension {
                what: "frame length",
                expected: self.dim(),
                actual: frame.len(),
            });
        }
        match label {
            Label::Speech => self.speech.push(frame),
            Label::Silence => self.silence.push(frame),
        }
        Ok(())
    }
}

impl AddAssign<&SufficientStats> for SufficientStats {
    fn add_assign(&mut self, rhs: &SufficientStats) {
        self.speech += &rhs.speech;
        self.silence += &rhs.silence;
    }
}

impl Add for &SufficientStats {
    type Output = SufficientStats;

    fn add(self, rhs: &SufficientStats) -> SufficientStats {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

pub fn accumulate_stats(features: &FeatureMatrix, labels: &SadLabels) -> Result<SufficientStats> {
    check_pairing(features, labels)?;
    let mut stats = SufficientStats::zeros(features.dim());
    for (frame, label) in features.frames().zip(labels.iter()) {
        stats.push(frame, label)?;
    }
    Ok(stats)
}
