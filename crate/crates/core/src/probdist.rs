//! Probability vectors over a fixed vocabulary and the divergences used to
//! compare an original and an edited model step by step.
//!
//! Divergences are in nats. Both arguments are smoothed as
//! `(1 - eps) * p + eps / V` before the log-ratio, so disjoint supports give
//! large but finite values.

use serde::Serialize;
use thiserror::Error;

use crate::vocab::{TokenId, VocabId};

/// Tolerance on the total mass of a [`ProbDist`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Smoothing weight used when the caller has no preference.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ProbError {
    #[error("all entries are zero")]
    AllZero,
    #[error("entry {index} is negative ({value})")]
    NegativeMass { index: usize, value: f64 },
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("distributions index different vocabularies")]
    VocabMismatch,
    #[error("length {got} does not match vocabulary size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("smoothing eps must be in (0, 1], got {0}")]
    InvalidEps(f64),
}

/// A normalized probability vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbDist {
    probs: Vec<f64>,
    #[serde(skip)]
    vocab: VocabId,
}

impl ProbDist {
    /// Scales nonnegative mass so it sums to one.
    pub fn normalize(raw: Vec<f64>, vocab: VocabId) -> Result<Self, ProbError> {
        check_finite(&raw)?;
        if let Some((index, &value)) = raw.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(ProbError::NegativeMass { index, value });
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(ProbError::AllZero);
        }
        let probs = raw.into_iter().map(|v| v / total).collect();
        Ok(ProbDist { probs, vocab })
    }

    /// Wraps an already-normalized vector, checking the invariants.
    pub fn from_probs(probs: Vec<f64>, vocab: VocabId) -> Result<Self, ProbError> {
        check_finite(&probs)?;
        if let Some((index, &value)) = probs.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(ProbError::NegativeMass { index, value });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::NotNormalized { sum });
        }
        Ok(ProbDist { probs, vocab })
    }

    /// Numerically stable softmax of raw logits.
    pub fn softmax(logits: &[f64], vocab: VocabId) -> Result<Self, ProbError> {
        check_finite(logits)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(ProbError::AllZero);
        }
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        Self::normalize(exps, vocab)
    }

    pub fn uniform(size: usize, vocab: VocabId) -> Self {
        ProbDist { probs: vec![1.0 / size as f64; size], vocab }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id as usize]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn vocab_id(&self) -> VocabId {
        self.vocab
    }

    /// Highest-probability token, lowest index on ties.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.probs)
    }

    pub(crate) fn check_same_vocab(&self, other: &ProbDist) -> Result<(), ProbError> {
        if self.vocab != other.vocab {
            return Err(ProbError::VocabMismatch);
        }
        if self.len() != other.len() {
            return Err(ProbError::LengthMismatch { expected: self.len(), got: other.len() });
        }
        Ok(())
    }
}

/// Unnormalized per-token scores. Entries may be negative or exceed one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector {
    scores: Vec<f64>,
    #[serde(skip)]
    vocab: VocabId,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, vocab: VocabId) -> Self {
        ScoreVector { scores, vocab }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn vocab_id(&self) -> VocabId {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn argmax(&self) -> TokenId {
        argmax(&self.scores)
    }

    /// Clamps negative scores to zero and renormalizes.
    ///
    /// Only used for reporting probabilities; token choice always uses the raw scores.
    pub fn clamp_renormalize(&self) -> Result<ProbDist, ProbError> {
        let raw = self.scores.iter().map(|&s| s.max(0.0)).collect();
        ProbDist::normalize(raw, self.vocab)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as TokenId
}

fn check_finite(values: &[f64]) -> Result<(), ProbError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ProbError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Smoothed KL(p || q).
pub fn kl_divergence(p: &ProbDist, q: &ProbDist, eps: f64) -> Result<f64, ProbError> {
    p.check_same_vocab(q)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ProbError::InvalidEps(eps));
    }
    let uniform = eps / p.len() as f64;
    let keep = 1.0 - eps;
    let kl = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&pi, &qi)| {
            let ps = keep * pi + uniform;
            let qs = keep * qi + uniform;
            ps * (ps / qs).ln()
        })
        .sum::<f64>();
    // Rounding can leave a tiny negative sum when p and q nearly coincide.
    Ok(kl.max(0.0))
}

/// Symmetrized KL: `0.5 * KL(p || q) + 0.5 * KL(q || p)`.
///
/// This is the quantity the similarity analysis calls "JSD". It is not the
/// mixture-based Jensen-Shannon divergence and is not bounded by ln 2.
pub fn jsd(p: &ProbDist, q: &ProbDist, eps: f64) -> Result<f64, ProbError> {
    let forward = kl_divergence(p, q, eps)?;
    let backward = kl_divergence(q, p, eps)?;
    Ok(0.5 * forward + 0.5 * backward)
}
