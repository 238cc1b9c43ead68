//! Outdated-issue-aware contrastive decoding (DISCO) for in-context knowledge
//! editing, together with the metrics and diagnostics used to evaluate it.
//!
//! The pieces, bottom-up:
//!
//! - [`probdist`]: probability vectors and smoothed divergences.
//! - [`vocab`]: vocabularies and token sequences.
//! - [`backend`]: the next-token interface, a fact-table toy model and a remote client.
//! - [`edit_context`]: edit cases, edited prompts and demonstration retrieval.
//! - [`decode`]: the dual-stream contrastive decoder.
//! - [`metrics`]: F1/EM and the outdated/target token error rates.
//! - [`analysis`]: divergence, delta and probability diagnostics.
//! - [`harness`]: dataset loading, runs, sweeps, ablations and reports.

pub mod analysis;
pub mod backend;
pub mod decode;
pub mod edit_context;
pub mod harness;
pub mod metrics;
pub mod probdist;
pub mod vocab;

#[cfg(test)]
mod testutil;

pub use backend::{greedy_decode, LanguageModel, RemoteLm, TableLm, Tokenizer};
pub use decode::{disco_decode, disco_step, Constraints, DecodeParams, DecodeTrace, ModelPair, TokenSets};
pub use edit_context::{build_edited_prompt, retrieve_demos, EditCase, EditedPrompt};
pub use probdist::{jsd, kl_divergence, ProbDist, ScoreVector};
