//! Token index space shared by every distribution, prompt and answer.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type TokenId = u32;

/// SHA-256 over the token strings joined by `\n`.
///
/// The same digest (lowercase hex) is what a logit server publishes as
/// `vocab_hash`, so an in-process vocabulary and a remote one can be compared.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VocabId([u8; 32]);

impl VocabId {
    pub fn of_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut hasher = Sha256::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                hasher.update(b"\n");
            }
            hasher.update(t.as_ref().as_bytes());
        }
        VocabId(hasher.finalize().into())
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(VocabId(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for VocabId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for VocabId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VocabId({})", &self.to_hex()[..12])
    }
}

impl Serialize for VocabId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for VocabId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        VocabId::from_hex(&s).ok_or_else(|| serde::de::Error::custom("vocab hash must be 64 hex chars"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("eos token {0:?} not in vocabulary")]
    MissingEos(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: TokenId, size: usize },
}

/// Size, eos and identity of a vocabulary, without its token strings.
///
/// Remote backends only know this much from their manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VocabInfo {
    pub id: VocabId,
    pub size: usize,
    pub eos: TokenId,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
    id: VocabId,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos_token: &str) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(VocabError::DuplicateToken(t.clone()));
            }
        }
        let eos = *index
            .get(eos_token)
            .ok_or_else(|| VocabError::MissingEos(eos_token.to_string()))?;
        let id = VocabId::of_tokens(&tokens);
        Ok(Vocabulary { tokens, index, eos, id })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self) -> VocabId {
        self.id
    }

    pub fn info(&self) -> VocabInfo {
        VocabInfo { id: self.id, size: self.len(), eos: self.eos }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

/// A sequence of token ids tagged with the vocabulary it indexes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
    vocab: VocabId,
}

impl Serialize for TokenSeq {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.ids.serialize(s)
    }
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>, info: &VocabInfo) -> Result<Self, VocabError> {
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= info.size) {
            return Err(VocabError::OutOfRange { id, size: info.size });
        }
        Ok(TokenSeq { ids, vocab: info.id })
    }

    pub fn empty(vocab: VocabId) -> Self {
        TokenSeq { ids: Vec::new(), vocab }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn vocab_id(&self) -> VocabId {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends one id. The caller guarantees it was produced under the same vocabulary.
    pub(crate) fn push(&mut self, id: TokenId) {
        self.ids.push(id);
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        debug_assert_eq!(self.vocab, other.vocab);
        let mut ids = Vec::with_capacity(self.len() + other.len());
        ids.extend_from_slice(&self.ids);
        ids.extend_from_slice(&other.ids);
        TokenSeq { ids, vocab: self.vocab }
    }

    pub fn extended(&self, tail: &[TokenId]) -> TokenSeq {
        let mut out = self.clone();
        out.ids.extend_from_slice(tail);
        out
    }
}
