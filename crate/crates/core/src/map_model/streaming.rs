use std::fmt;
use std::str::FromStr;

use super::posterior::{map_mean, noise_vector};
use super::prior::NoisePrior;
use super::scaling::{fit_scaling, EmConfig, ScalingFactors};
use super::stats::SufficientStats;
use crate::error::{Error, Result};
use crate::estimators::NoiseVector;
use crate::features::Label;

/// How the scaling factors are chosen for an utterance being decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RPolicy {
    /// `r_s = r_n = 1`.
    FixedOne,
    /// Corpus-wide factors stored in the prior.
    #[default]
    Global,
    /// Refit by EM on the utterance's own statistics every `every` frames,
    /// keeping `r = 1` for a class until it has frames.
    Em { every: usize },
}

impl RPolicy {
    pub fn initial(&self, prior: &NoisePrior) -> ScalingFactors {
        match self {
            RPolicy::Global => prior.global_scaling(),
            RPolicy::FixedOne | RPolicy::Em { .. } => ScalingFactors::ONE,
        }
    }
}

impl FromStr for RPolicy {
    type Err = Error;

    /// `fixed-one`, `global`, `em` or `em:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed-one" | "one" => Ok(RPolicy::FixedOne),
            "global" => Ok(RPolicy::Global),
            "em" => Ok(RPolicy::Em { every: 1 }),
            other => other
                .strip_prefix("em:")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k > 0)
                .map(|every| RPolicy::Em { every })
                .ok_or_else(|| Error::InvalidConfig(format!("unknown r policy {other:?}"))),
        }
    }
}

impl fmt::Display for RPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RPolicy::FixedOne => f.write_str("fixed-one"),
            RPolicy::Global => f.write_str("global"),
            RPolicy::Em { every } => write!(f, "em:{every}"),
        }
    }
}

/// Frame-by-frame MAP estimator for one utterance.
#[derive(Debug, Clone)]
pub struct StreamingMap {
    prior: NoisePrior,
    policy: RPolicy,
    em: EmConfig,
    stats: SufficientStats,
    r: ScalingFactors,
    solve_every: usize,
    since_solve: usize,
    cached: Option<NoiseVector>,
}

impl StreamingMap {
    pub fn new(prior: NoisePrior, policy: RPolicy) -> Self {
        let dim = prior.dim();
        let r = policy.initial(&prior);
        Self {
            prior,
            policy,
            em: EmConfig::default(),
            stats: SufficientStats::zeros(dim),
            r,
            solve_every: 1,
            since_solve: 0,
            cached: None,
        }
    }

    /// Re-solve only after `every` new frames; estimates in between are stale.
    pub fn with_solve_every(mut self, every: usize) -> Self {
        self.solve_every = every.max(1);
        self
    }

    pub fn with_em_config(mut self, em: EmConfig) -> Self {
        self.em = em;
        self
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }

    pub fn scaling(&self) -> ScalingFactors {
        self.r
    }

    pub fn frames_seen(&self) -> usize {
        self.stats.speech.count + self.stats.silence.count
    }

    pub fn push(&mut self, frame: &[f64], label: Label) -> Result<()> {
        self.stats.push(frame, label)?;
        self.since_solve += 1;
        if let RPolicy::Em { every } = self.policy {
            if self.frames_seen().is_multiple_of(every) {
                self.r = fit_scaling(&self.stats, &self.prior, self.r, &self.em)?.factors;
            }
        }
        Ok(())
    }

    /// Current MAP vector, re-solving when `solve_every` frames have arrived
    /// since the last solve. With no frames this is the prior mean.
    pub fn estimate(&mut self) -> Result<NoiseVector> {
        match &self.cached {
            Some(v) if self.since_solve < self.solve_every => Ok(v.clone()),
            _ => self.solve(),
        }
    }

    /// Like [`estimate`](Self::estimate) but never returns a stale vector.
    pub fn estimate_exact(&mut self) -> Result<NoiseVector> {
        match &self.cached {
            Some(v) if self.since_solve == 0 => Ok(v.clone()),
            _ => self.solve(),
        }
    }

    fn solve(&mut self) -> Result<NoiseVector> {
        let mean = map_mean(&self.stats, &self.prior, self.r)?;
        let v = noise_vector(&mean, &self.stats);
        self.cached = Some(v.clone());
        self.since_solve = 0;
        Ok(v)
    }
}
