//! Outdated-issue-aware contrastive decoding.
//!
//! Two prediction streams advance in lockstep over the same backend (or two
//! backends sharing a vocabulary). The original stream sees the raw probe
//! question and follows its own greedy history; the edited stream sees the
//! in-context edited prompt and follows the tokens chosen by the contrastive
//! score
//!
//! ```text
//! delta(t) = p_edit(t) - p_orig(t)
//! delta(t)[v] = min(0, delta(t)[v])        for v in V_out ∪ V_edit (each set switchable)
//! score(t)  = p_edit(t) + alpha * delta(t)
//! ```
//!
//! where `V_out` is the token set of the original model's own answer to the
//! probe and `V_edit` the token set of the edit target. The score is used for
//! argmax as-is; it is never renormalized for token choice.
//!
//! Once the original stream has emitted eos there is nothing to contrast
//! against, so `delta` is zero for the remaining steps and the edited stream
//! continues as plain greedy decoding.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::backend::{greedy_run, BackendError, GreedyRun, LanguageModel};
use crate::edit_context::EditedPrompt;
use crate::probdist::{ProbDist, ProbError, ScoreVector};
use crate::vocab::{TokenId, TokenSeq};

/// Weight applied to delta when none is given.
pub const DEFAULT_ALPHA: f64 = 1.0;

/// The alpha grid of the sensitivity sweep.
pub const ALPHA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("original and edited backends use different vocabularies")]
    VocabMismatch,
}

impl DecodeError {
    pub fn is_unavailable(&self) -> bool {
        matches!(self, DecodeError::Backend(e) if e.is_unavailable())
    }
}

/// The outdated, edit-target and golden token sets of one probe.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenSets {
    pub v_out: BTreeSet<TokenId>,
    pub v_edit: BTreeSet<TokenId>,
    pub v_golden: BTreeSet<TokenId>,
}

impl TokenSets {
    pub fn new(outdated: &[TokenId], edit_target: &[TokenId], golden: &[TokenId]) -> Self {
        TokenSets {
            v_out: outdated.iter().copied().collect(),
            v_edit: edit_target.iter().copied().collect(),
            v_golden: golden.iter().copied().collect(),
        }
    }
}

/// Which token sets have their delta clamped to `<= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Constraints {
    pub outdated: bool,
    pub edit_target: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints::BOTH
    }
}

impl Constraints {
    pub const BOTH: Constraints = Constraints { outdated: true, edit_target: true };
    pub const NONE: Constraints = Constraints { outdated: false, edit_target: false };

    /// Ablation grid rows: ID.1 both on, ID.2 outdated off, ID.3 edit-target off, ID.4 both off.
    pub const ABLATION_GRID: [(&'static str, Constraints); 4] = [
        ("ID.1", Constraints::BOTH),
        ("ID.2", Constraints { outdated: false, edit_target: true }),
        ("ID.3", Constraints { outdated: true, edit_target: false }),
        ("ID.4", Constraints::NONE),
    ];

    pub fn is_constrained(&self, sets: &TokenSets, v: TokenId) -> bool {
        (self.outdated && sets.v_out.contains(&v)) || (self.edit_target && sets.v_edit.contains(&v))
    }
}

/// Elementwise `p_edit - p_orig`.
pub fn compute_delta(p_edit: &ProbDist, p_orig: &ProbDist) -> Result<Vec<f64>, ProbError> {
    p_edit.check_same_vocab(p_orig)?;
    Ok(p_edit.probs().iter().zip(p_orig.probs()).map(|(e, o)| e - o).collect())
}

/// Clamps delta to `min(0, delta)` on the enabled token sets.
pub fn apply_constraints(mut delta: Vec<f64>, sets: &TokenSets, constraints: Constraints) -> Vec<f64> {
    let mut clamp = |ids: &BTreeSet<TokenId>| {
        for &v in ids {
            if let Some(d) = delta.get_mut(v as usize) {
                *d = d.min(0.0);
            }
        }
    };
    if constraints.outdated {
        clamp(&sets.v_out);
    }
    if constraints.edit_target {
        clamp(&sets.v_edit);
    }
    delta
}

/// One contrastive step: returns the score vector and the constrained delta.
pub fn disco_step(
    p_edit: &ProbDist,
    p_orig: &ProbDist,
    sets: &TokenSets,
    alpha: f64,
    constraints: Constraints,
) -> Result<(ScoreVector, Vec<f64>), DecodeError> {
    check_alpha(alpha)?;
    let delta = apply_constraints(compute_delta(p_edit, p_orig)?, sets, constraints);
    let scores = p_edit.probs().iter().zip(&delta).map(|(p, d)| p + alpha * d).collect();
    Ok((ScoreVector::new(scores, p_edit.vocab_id()), delta))
}

fn check_alpha(alpha: f64) -> Result<(), DecodeError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(DecodeError::InvalidAlpha(alpha))
    }
}

/// The models behind the original and edited streams.
///
/// For in-context editing both are the same backend; a separately edited
/// remote model can be paired with its original as long as the vocabularies match.
#[derive(Clone, Copy)]
pub struct ModelPair<'a> {
    pub original: &'a dyn LanguageModel,
    pub edited: &'a dyn LanguageModel,
}

impl<'a> ModelPair<'a> {
    pub fn new(original: &'a dyn LanguageModel, edited: &'a dyn LanguageModel) -> Result<Self, DecodeError> {
        if original.vocab() != edited.vocab() {
            return Err(DecodeError::VocabMismatch);
        }
        Ok(ModelPair { original, edited })
    }

    pub fn shared(model: &'a dyn LanguageModel) -> Self {
        ModelPair { original: model, edited: model }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodeStep {
    pub t: usize,
    /// `None` once the original stream has terminated.
    pub p_orig: Option<ProbDist>,
    pub p_edit: ProbDist,
    /// Delta after constraints.
    pub delta: Vec<f64>,
    pub score: ScoreVector,
    pub chosen_edit: TokenId,
    pub chosen_orig: Option<TokenId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodeTrace {
    pub steps: Vec<DecodeStep>,
    /// Edited stream output, eos excluded.
    pub answer: TokenSeq,
    /// The original model's greedy answer to the raw probe.
    pub outdated: TokenSeq,
    pub sets: TokenSets,
    pub alpha: f64,
    pub constraints: Constraints,
    /// The edited stream stopped at `max_new` without emitting eos.
    pub max_len_reached: bool,
}

impl DecodeTrace {
    /// Steps in which both streams produced a distribution.
    pub fn paired_steps(&self) -> impl Iterator<Item = (&ProbDist, &ProbDist)> {
        self.steps.iter().filter_map(|s| s.p_orig.as_ref().map(|o| (o, &s.p_edit)))
    }
}

/// Edit-target and golden token sets; the outdated set is filled in by the decoder.
#[derive(Debug, Clone, Default)]
pub struct PartialSets {
    pub v_edit: Vec<TokenId>,
    pub v_golden: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeParams {
    pub alpha: f64,
    pub max_new: usize,
    pub constraints: Constraints,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { alpha: DEFAULT_ALPHA, max_new: 16, constraints: Constraints::BOTH }
    }
}

/// Full dual-stream decode of one probe.
pub fn disco_decode(
    models: ModelPair<'_>,
    raw_prompt: &TokenSeq,
    edited_prompt: &EditedPrompt,
    partial: &PartialSets,
    params: DecodeParams,
) -> Result<DecodeTrace, DecodeError> {
    check_alpha(params.alpha)?;
    if params.max_new == 0 {
        return Err(BackendError::ZeroMaxNew.into());
    }
    let original = greedy_run(models.original, raw_prompt, params.max_new)?;
    disco_decode_from(models, original, edited_prompt, partial, params)
}

/// Decodes the edited stream against an original stream that has already been run.
///
/// `original` must be the greedy run of `models.original` on the raw probe
/// with the same `max_new`. Several decodes of one probe can then share it.
pub fn disco_decode_from(
    models: ModelPair<'_>,
    original: GreedyRun,
    edited_prompt: &EditedPrompt,
    partial: &PartialSets,
    params: DecodeParams,
) -> Result<DecodeTrace, DecodeError> {
    check_alpha(params.alpha)?;
    if params.max_new == 0 {
        return Err(BackendError::ZeroMaxNew.into());
    }
    let sets = TokenSets::new(original.tokens.ids(), &partial.v_edit, &partial.v_golden);

    let eos = models.edited.vocab().eos;
    let edited_context = edited_prompt.context();
    let mut answer = TokenSeq::empty(edited_context.vocab_id());
    let mut steps = Vec::new();
    let mut hit_eos = false;

    for t in 0..params.max_new {
        let p_edit = models.edited.next_dist(&edited_context.concat(&answer))?;
        let p_orig = original.dists.get(t);
        let (score, delta) = match p_orig {
            Some(p_orig) => disco_step(&p_edit, p_orig, &sets, params.alpha, params.constraints)?,
            None => (ScoreVector::new(p_edit.probs().to_vec(), p_edit.vocab_id()), vec![0.0; p_edit.len()]),
        };
        let chosen = score.argmax();
        steps.push(DecodeStep {
            t,
            p_orig: p_orig.cloned(),
            chosen_orig: p_orig.map(ProbDist::argmax),
            p_edit,
            delta,
            score,
            chosen_edit: chosen,
        });
        if chosen == eos {
            hit_eos = true;
            break;
        }
        answer.push(chosen);
    }

    Ok(DecodeTrace {
        steps,
        answer,
        outdated: original.tokens,
        sets,
        alpha: params.alpha,
        constraints: params.constraints,
        max_len_reached: !hit_eos,
    })
}
