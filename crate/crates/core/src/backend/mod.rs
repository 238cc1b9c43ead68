//! Next-token distribution backends.
//!
//! The decoder only ever asks a backend for `p(. | context)`. Two
//! implementations ship here: [`TableLm`], a deterministic fact-table model
//! used for desk-scale experiments, and [`RemoteLm`], a client for a logit
//! server speaking the JSON wire protocol.

mod remote;
mod table;

use thiserror::Error;

pub use remote::{
    DetokenizeRequest, DetokenizeResponse, LogitsRequest, LogitsResponse, Manifest, RemoteLm, TokenizeRequest,
    TokenizeResponse, MAX_TOKENIZE_BYTES,
};
pub use table::{FactTable, FactTableError, TableLm, EOS_TOKEN};

use crate::probdist::{ProbDist, ProbError};
use crate::vocab::{TokenId, TokenSeq, VocabError, VocabInfo};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("context indexes a different vocabulary than the backend")]
    VocabMismatch,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("cannot tokenize {0:?}")]
    Tokenization(String),
    #[error("backend rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("max_new must be at least 1")]
    ZeroMaxNew,
}

impl BackendError {
    /// Whether the failure concerns the backend as a whole rather than one input.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

/// Text to token ids and back, under one vocabulary.
pub trait Tokenizer {
    fn vocab(&self) -> VocabInfo;
    fn tokenize(&self, text: &str) -> Result<TokenSeq, BackendError>;
    fn detokenize(&self, seq: &TokenSeq) -> Result<String, BackendError>;
}

/// A causal language model reduced to its next-token distribution.
///
/// Implementations must be deterministic: the same context always yields the
/// same distribution.
pub trait LanguageModel: Tokenizer + Send + Sync {
    fn next_dist(&self, context: &TokenSeq) -> Result<ProbDist, BackendError>;
}

pub(crate) fn check_context(model: &dyn Tokenizer, context: &TokenSeq) -> Result<(), BackendError> {
    if context.vocab_id() != model.vocab().id {
        return Err(BackendError::VocabMismatch);
    }
    Ok(())
}

/// A greedy continuation together with every distribution it was chosen from.
#[derive(Debug, Clone)]
pub struct GreedyRun {
    /// Generated tokens, eos excluded.
    pub tokens: TokenSeq,
    /// One distribution per step, including the step that produced eos.
    pub dists: Vec<ProbDist>,
    pub hit_eos: bool,
}

/// Argmax decoding until eos or `max_new` steps. The eos token is not returned.
pub fn greedy_decode(
    model: &dyn LanguageModel,
    context: &TokenSeq,
    max_new: usize,
) -> Result<TokenSeq, BackendError> {
    greedy_run(model, context, max_new).map(|run| run.tokens)
}

pub fn greedy_run(
    model: &dyn LanguageModel,
    context: &TokenSeq,
    max_new: usize,
) -> Result<GreedyRun, BackendError> {
    if max_new == 0 {
        return Err(BackendError::ZeroMaxNew);
    }
    check_context(model, context)?;
    let eos: TokenId = model.vocab().eos;
    let mut tokens = TokenSeq::empty(context.vocab_id());
    let mut dists = Vec::new();
    let mut hit_eos = false;
    for _ in 0..max_new {
        let dist = model.next_dist(&context.concat(&tokens))?;
        let next = dist.argmax();
        dists.push(dist);
        if next == eos {
            hit_eos = true;
            break;
        }
        tokens.push(next);
    }
    Ok(GreedyRun { tokens, dists, hit_eos })
}
