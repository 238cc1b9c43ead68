//! Diagnostics over decode traces and teacher-forced probes.
//!
//! Probabilities *at* golden or outdated tokens are measured by teacher
//! forcing: both streams are fed the same reference continuation, token by
//! token, and the distribution at each position is read at the next
//! reference token. Free-running decoding cannot provide these values once
//! the model picks some other token.
//!
//! In DISCO mode the reported distribution is the score vector with
//! negative entries clamped to zero and renormalized. This only affects what
//! is reported, never which token the decoder picks.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::backend::BackendError;
use crate::decode::{compute_delta, apply_constraints, disco_step, Constraints, DecodeError, DecodeTrace, ModelPair, TokenSets};
use crate::edit_context::EditedPrompt;
use crate::metrics::Property;
use crate::probdist::{jsd, ProbDist, ProbError};
use crate::vocab::{TokenId, TokenSeq};

/// Width of a delta histogram bin, in percentage points.
pub const BIN_WIDTH: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trace has no step with both streams active")]
    EmptyTrace,
    #[error("reference answer tokenizes to no tokens")]
    EmptyReference,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

impl From<BackendError> for AnalysisError {
    fn from(e: BackendError) -> Self {
        AnalysisError::Decode(e.into())
    }
}

/// Mean symmetrized KL between the two streams, over steps where both were active.
pub fn stepwise_jsd(trace: &DecodeTrace, eps: f64) -> Result<f64, AnalysisError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p_orig, p_edit) in trace.paired_steps() {
        total += jsd(p_orig, p_edit, eps)?;
        n += 1;
    }
    if n == 0 {
        return Err(AnalysisError::EmptyTrace);
    }
    Ok(total / n as f64)
}

/// Inputs shared by the teacher-forced analyses of one probe.
#[derive(Clone, Copy)]
pub struct Probe<'a> {
    pub models: ModelPair<'a>,
    pub raw: &'a TokenSeq,
    pub edited: &'a EditedPrompt,
    /// `v_out` is the original model's greedy answer to `raw`.
    pub sets: &'a TokenSets,
    pub alpha: f64,
    pub constraints: Constraints,
}

/// One teacher-forced position.
struct ForcedStep {
    token: TokenId,
    p_orig: ProbDist,
    p_edit: ProbDist,
}

impl Probe<'_> {
    fn force(&self, reference: &[TokenId]) -> Result<Vec<ForcedStep>, AnalysisError> {
        if reference.is_empty() {
            return Err(AnalysisError::EmptyReference);
        }
        let edited = self.edited.context();
        (0..reference.len())
            .map(|t| {
                let prefix = &reference[..t];
                Ok(ForcedStep {
                    token: reference[t],
                    p_orig: self.models.original.next_dist(&self.raw.extended(prefix))?,
                    p_edit: self.models.edited.next_dist(&edited.extended(prefix))?,
                })
            })
            .collect()
    }

    fn prob_under(&self, step: &ForcedStep, mode: ProbMode) -> Result<f64, AnalysisError> {
        match mode {
            ProbMode::EditedPlain => Ok(step.p_edit.prob(step.token)),
            ProbMode::Disco => {
                let (score, _) = disco_step(&step.p_edit, &step.p_orig, self.sets, self.alpha, self.constraints)?;
                Ok(score.clamp_renormalize()?.prob(step.token))
            }
        }
    }

    /// Mean constrained delta at the reference tokens, in percent.
    pub fn mean_delta_on(&self, reference: &[TokenId]) -> Result<f64, AnalysisError> {
        let steps = self.force(reference)?;
        let mut total = 0.0;
        for s in &steps {
            let delta = apply_constraints(compute_delta(&s.p_edit, &s.p_orig)?, self.sets, self.constraints);
            total += delta[s.token as usize];
        }
        Ok(100.0 * total / steps.len() as f64)
    }

    /// Mean teacher-forced probability of the reference tokens under `mode`.
    pub fn mean_prob_of(&self, reference: &[TokenId], mode: ProbMode) -> Result<f64, AnalysisError> {
        let steps = self.force(reference)?;
        let mut total = 0.0;
        for s in &steps {
            total += self.prob_under(s, mode)?;
        }
        Ok(total / steps.len() as f64)
    }

    /// Per-token probabilities along the outdated answer, classed by overlap with the golden set.
    pub fn outdated_token_records(&self, outdated: &[TokenId]) -> Result<Vec<OutdatedTokenRecord>, AnalysisError> {
        if outdated.is_empty() {
            return Ok(Vec::new());
        }
        self.force(outdated)?
            .iter()
            .map(|s| {
                let class =
                    if self.sets.v_golden.contains(&s.token) { TokenClass::Common } else { TokenClass::Outdated };
                Ok(OutdatedTokenRecord {
                    token: s.token,
                    class,
                    edited_plain_prob: self.prob_under(s, ProbMode::EditedPlain)?,
                    disco_prob: self.prob_under(s, ProbMode::Disco)?,
                })
            })
            .collect()
    }
}

/// Mean delta at the golden tokens of a probe, in percent.
pub fn case_mean_delta_on_golden(probe: &Probe<'_>, golden: &[TokenId]) -> Result<f64, AnalysisError> {
    probe.mean_delta_on(golden)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbMode {
    EditedPlain,
    Disco,
}

impl ProbMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbMode::EditedPlain => "edited_plain",
            ProbMode::Disco => "disco",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityReport {
    pub property: Property,
    pub mode: ProbMode,
    pub golden_prob: f64,
    /// Probability of the original model's own answer; absent when that answer is empty.
    pub outdated_prob: Option<f64>,
}

/// Teacher-forced probability of the golden answer and of the outdated answer.
pub fn golden_probability(
    probe: &Probe<'_>,
    property: Property,
    golden: &[TokenId],
    outdated: &[TokenId],
    mode: ProbMode,
) -> Result<ProbabilityReport, AnalysisError> {
    let golden_prob = probe.mean_prob_of(golden, mode)?;
    let outdated_prob = if outdated.is_empty() { None } else { Some(probe.mean_prob_of(outdated, mode)?) };
    Ok(ProbabilityReport { property, mode, golden_prob, outdated_prob })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub proportion: f64,
    /// Mean OE of the cases in the bin; 0 for empty bins.
    pub oe_in_bin: f64,
}

/// Buckets `(mean delta %, OE)` pairs into 10-point bins anchored at 0.
///
/// Bins are contiguous from the lowest to the highest occupied one.
pub fn delta_histogram(values: &[(f64, f64)]) -> Vec<DeltaBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let index = |v: f64| (v / BIN_WIDTH).floor() as i64;
    let mut members: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for &(delta, oe) in values {
        members.entry(index(delta)).or_default().push(oe);
    }
    let lo = *members.keys().next().expect("non-empty");
    let hi = *members.keys().next_back().expect("non-empty");
    let n = values.len() as f64;
    (lo..=hi)
        .map(|i| {
            let oes = members.get(&i).map(Vec::as_slice).unwrap_or(&[]);
            let oe_in_bin = if oes.is_empty() { 0.0 } else { oes.iter().sum::<f64>() / oes.len() as f64 };
            DeltaBin {
                lo: i as f64 * BIN_WIDTH,
                hi: (i + 1) as f64 * BIN_WIDTH,
                count: oes.len(),
                proportion: oes.len() as f64 / n,
                oe_in_bin,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    /// Outdated-answer token that also appears in the golden answer.
    Common,
    /// Outdated-answer token absent from the golden answer.
    Outdated,
}

impl TokenClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            TokenClass::Common => "common",
            TokenClass::Outdated => "outdated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutdatedTokenRecord {
    pub token: TokenId,
    pub class: TokenClass,
    pub edited_plain_prob: f64,
    pub disco_prob: f64,
}

/// Fraction of outdated-answer tokens that occur in the golden answer.
pub fn common_proportion(outdated: &[TokenId], golden: &BTreeSet<TokenId>) -> f64 {
    if outdated.is_empty() {
        return 0.0;
    }
    outdated.iter().filter(|t| golden.contains(t)).count() as f64 / outdated.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbShift {
    pub class: TokenClass,
    pub count: usize,
    pub edited_plain_prob: f64,
    pub disco_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommonTokenStats {
    pub total_tokens: usize,
    pub proportion_common: f64,
    /// One row per token class that occurred.
    pub prob_shift: Vec<ProbShift>,
}

/// Pools outdated-token records across cases.
pub fn common_token_stats(records: &[OutdatedTokenRecord]) -> CommonTokenStats {
    let mut by_class: BTreeMap<TokenClass, (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let e = by_class.entry(r.class).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += r.edited_plain_prob;
        e.2 += r.disco_prob;
    }
    let common = by_class.get(&TokenClass::Common).map_or(0, |e| e.0);
    CommonTokenStats {
        total_tokens: records.len(),
        proportion_common: if records.is_empty() { 0.0 } else { common as f64 / records.len() as f64 },
        prob_shift: by_class
            .into_iter()
            .map(|(class, (count, e, d))| ProbShift {
                class,
                count,
                edited_plain_prob: e / count as f64,
                disco_prob: d / count as f64,
            })
            .collect(),
    }
}
