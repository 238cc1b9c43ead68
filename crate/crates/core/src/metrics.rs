//! Answer scoring.
//!
//! F1 and EM compare QA-normalized word tokens (lowercase, no punctuation,
//! no articles). OE and TE count generated *model* token ids that belong to
//! the outdated answer or the edit target but not to the golden answer; they
//! never see the normalized text.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::TokenSets;
use crate::edit_context::EditCase;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Reliability,
    Generality,
    Locality,
    Portability,
}

impl Property {
    pub const ALL: [Property; 4] =
        [Property::Reliability, Property::Generality, Property::Locality, Property::Portability];

    pub fn as_str(&self) -> &'static str {
        match self {
            Property::Reliability => "reliability",
            Property::Generality => "generality",
            Property::Locality => "locality",
            Property::Portability => "portability",
        }
    }

    /// The probe question of this property for `case`.
    pub fn prompt<'a>(&self, case: &'a EditCase) -> &'a str {
        match self {
            Property::Reliability => &case.edit_prompt,
            Property::Generality => &case.rephrase_prompt,
            Property::Locality => &case.locality_prompt,
            Property::Portability => &case.portability_prompt,
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// SQuAD-style normalization into word tokens.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// Multiset-overlap F1 on normalized tokens.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred = normalize_answer(pred);
    let gold = normalize_answer(gold);
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for w in &gold {
        *gold_counts.entry(w).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for w in &pred {
        if let Some(n) = gold_counts.get_mut(w.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

fn error_rate(pred: &[TokenId], set: &std::collections::BTreeSet<TokenId>, golden: &std::collections::BTreeSet<TokenId>) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().filter(|t| set.contains(t) && !golden.contains(t)).count();
    hits as f64 / pred.len() as f64
}

/// Fraction of generated tokens that come from the outdated answer and not the golden one.
///
/// An empty prediction scores 0; callers flag it separately.
pub fn outdated_error(pred: &[TokenId], sets: &TokenSets) -> f64 {
    error_rate(pred, &sets.v_out, &sets.v_golden)
}

/// Fraction of generated tokens that come from the edit target and not the golden answer.
pub fn target_error(pred: &[TokenId], sets: &TokenSets) -> f64 {
    error_rate(pred, &sets.v_edit, &sets.v_golden)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseScores {
    pub property: Property,
    pub f1: f64,
    pub em: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub te: Option<f64>,
    /// The model emitted eos immediately.
    pub empty_prediction: bool,
}

/// What the evaluated model produced for one probe.
#[derive(Debug, Clone)]
pub struct ProbeAnswer {
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// The original model's greedy answer to the same probe.
    pub original_text: String,
    /// Outdated, edit-target and golden sets under the model tokenizer.
    pub sets: TokenSets,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no answer for {0}")]
    MissingProperty(Property),
}

/// The golden answer of each property: the edit target for in-scope probes,
/// the original output for locality, and the recorded golden for portability.
pub fn golden_for<'a>(case: &'a EditCase, property: Property, original_text: &'a str) -> &'a str {
    match property {
        Property::Reliability | Property::Generality => &case.edit_target,
        Property::Locality => original_text,
        Property::Portability => &case.portability_golden,
    }
}

/// Scores every property whose probe prompt is non-empty.
pub fn score_case(case: &EditCase, answers: &BTreeMap<Property, ProbeAnswer>) -> Result<Vec<CaseScores>, MetricsError> {
    let mut out = Vec::new();
    for property in Property::ALL {
        if property.prompt(case).trim().is_empty() {
            continue;
        }
        let answer = answers.get(&property).ok_or(MetricsError::MissingProperty(property))?;
        let gold = golden_for(case, property, &answer.original_text);
        let (oe, te) = if property == Property::Portability {
            (Some(outdated_error(&answer.tokens, &answer.sets)), Some(target_error(&answer.tokens, &answer.sets)))
        } else {
            (None, None)
        };
        out.push(CaseScores {
            property,
            f1: token_f1(&answer.text, gold),
            em: exact_match(&answer.text, gold),
            oe,
            te,
            empty_prediction: answer.tokens.is_empty(),
        });
    }
    Ok(out)
}
