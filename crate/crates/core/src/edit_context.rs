//! Edit cases, in-context editing prompts and demonstration retrieval.
//!
//! An edited prompt is the probe question preceded by fact lines:
//!
//! ```text
//! new fact : <demo edit_prompt> <demo edit_target> .     (one per demonstration)
//! new fact : <rephrase_prompt> <edit_target> .           (when the paraphrase is prepended)
//! new fact : <edit_prompt> <edit_target> .
//! <question>
//! ```
//!
//! The template is a local convention. It matches the override line of the
//! fact-table model, so one builder serves every backend; remote backends
//! re-tokenize the same strings with their own tokenizer.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Tokenizer};
use crate::vocab::TokenSeq;

/// One knowledge edit with its four probe questions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCase {
    #[serde(default)]
    pub case_id: String,
    #[serde(default)]
    pub edit_prompt: String,
    #[serde(default)]
    pub edit_target: String,
    /// Pre-edit answer, when the dataset records it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub rephrase_prompt: String,
    #[serde(default)]
    pub locality_prompt: String,
    #[serde(default)]
    pub portability_prompt: String,
    #[serde(default)]
    pub portability_golden: String,
}

impl EditCase {
    /// Checks the field-level invariants, naming the first offending field.
    pub fn validate(&self) -> Result<(), &'static str> {
        let required = [
            ("case_id", &self.case_id),
            ("edit_prompt", &self.edit_prompt),
            ("edit_target", &self.edit_target),
            ("portability_prompt", &self.portability_prompt),
            ("portability_golden", &self.portability_golden),
        ];
        for (name, value) in required {
            if value.trim().is_empty() {
                return Err(name);
            }
        }
        if let Some(truth) = &self.ground_truth {
            if truth.trim() == self.edit_target.trim() {
                return Err("ground_truth");
            }
        }
        Ok(())
    }

    fn fact_line(prompt: &str, target: &str) -> String {
        format!("new fact : {} {} .", prompt.trim(), target.trim())
    }
}

/// Prompt text before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditedPromptText {
    pub prefix_lines: Vec<String>,
    pub question: String,
}

impl EditedPromptText {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.prefix_lines {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&self.question);
        out
    }

    /// Tokenizes line by line, so the token count is exactly the sum of the parts.
    pub fn tokenize(&self, tok: &dyn Tokenizer) -> Result<EditedPrompt, BackendError> {
        let mut prefix = TokenSeq::empty(tok.vocab().id);
        for line in &self.prefix_lines {
            prefix = prefix.concat(&tok.tokenize(&format!("{line}\n"))?);
        }
        Ok(EditedPrompt { prefix_tokens: prefix, question_tokens: tok.tokenize(&self.question)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditedPrompt {
    pub prefix_tokens: TokenSeq,
    pub question_tokens: TokenSeq,
}

impl EditedPrompt {
    /// Prefix followed by the question.
    pub fn context(&self) -> TokenSeq {
        self.prefix_tokens.concat(&self.question_tokens)
    }
}

/// Builds the in-context editing prompt for probe question `x`.
///
/// Returns `None` when `x` is blank.
pub fn build_edited_prompt(
    case: &EditCase,
    demos: &[&EditCase],
    x: &str,
    include_paraphrase: bool,
) -> Option<EditedPromptText> {
    if x.trim().is_empty() {
        return None;
    }
    let mut prefix_lines: Vec<String> =
        demos.iter().map(|d| EditCase::fact_line(&d.edit_prompt, &d.edit_target)).collect();
    if include_paraphrase && !case.rephrase_prompt.trim().is_empty() {
        prefix_lines.push(EditCase::fact_line(&case.rephrase_prompt, &case.edit_target));
    }
    prefix_lines.push(EditCase::fact_line(&case.edit_prompt, &case.edit_target));
    Some(EditedPromptText { prefix_lines, question: x.to_string() })
}

/// Similarity between two edit prompts, higher is closer.
pub trait Similarity: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Cosine similarity of lowercase word-count vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalCosine;

fn word_counts(s: &str) -> HashMap<String, f64> {
    let mut counts = HashMap::new();
    for w in s.split_whitespace() {
        *counts.entry(w.to_lowercase()).or_insert(0.0) += 1.0;
    }
    counts
}

impl Similarity for LexicalCosine {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        let ca = word_counts(a);
        let cb = word_counts(b);
        let dot: f64 = ca.iter().filter_map(|(w, x)| cb.get(w).map(|y| x * y)).sum();
        let na: f64 = ca.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = cb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Top-`k` pool cases by edit-prompt similarity, excluding the query itself.
///
/// Ties are broken by `case_id`, so the order is total.
pub fn retrieve_demos<'a>(
    query: &EditCase,
    pool: &'a [EditCase],
    k: usize,
    similarity: &dyn Similarity,
) -> Vec<&'a EditCase> {
    if k == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(f64, &EditCase)> = pool
        .iter()
        .filter(|c| c.case_id != query.case_id)
        .map(|c| (similarity.similarity(&query.edit_prompt, &c.edit_prompt), c))
        .collect();
    scored.sort_by(|(sa, a), (sb, b)| match sb.total_cmp(sa) {
        Ordering::Equal => a.case_id.cmp(&b.case_id),
        other => other,
    });
    scored.into_iter().take(k).map(|(_, c)| c).collect()
}
