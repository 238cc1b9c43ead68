//! Deterministic fact-table language model.
//!
//! The model answers two kinds of questions about landmarks: where an entity
//! is (a city) and which country it is in (a one-hop question through the
//! city). An in-context line `new fact : E is in C .` shifts only part of
//! the answer mass towards the new fact, and the hop question is shifted
//! less than the direct one (`lambda_hop <= lambda_direct`). With the
//! default knobs the edited model still answers the hop question with the
//! old country, which is the failure contrastive decoding is meant to fix.
//!
//! Prompt grammar, one token per whitespace-separated lowercase word:
//!
//! ```text
//! direct:   q : where is <entity> ? a :
//! cloze:    <entity> is in
//! hop:      q : which country is <entity> in ? a :
//! override: new fact : <entity> is in <city> .
//! ```
//!
//! Any number of `new fact : ... .` lines may precede the question; lines
//! that are not exactly an override are ignored, and the last override for an
//! entity wins. Every token receives `floor`; the remaining
//! `1 - floor * V` is placed by the rules below.
//!
//! | context                                   | rule mass                                   |
//! |-------------------------------------------|---------------------------------------------|
//! | direct/cloze, no override                 | all on `city(E)`                            |
//! | direct/cloze, override to `C`             | `lambda_direct` on `C`, rest on `city(E)`   |
//! | hop, no override                          | all on `country(city(E))`                   |
//! | hop, override to `C`                      | `lambda_hop` on `country(C)`, rest on `country(city(E))` |
//! | answer already started, or unparseable    | all on `eos`                                |

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_context, BackendError, LanguageModel, Tokenizer};
use crate::probdist::ProbDist;
use crate::vocab::{TokenId, TokenSeq, VocabError, VocabInfo, Vocabulary};

pub const EOS_TOKEN: &str = "eos";

const GRAMMAR: [&str; 12] = ["q", ":", "where", "is", "?", "a", "which", "country", "in", "new", "fact", "."];

#[derive(Debug, Error)]
pub enum FactTableError {
    #[error("cannot read fact table {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid fact table json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("token {0:?} is required but missing from vocab")]
    MissingToken(String),
    #[error("city {city:?} of entity {entity:?} has no country")]
    CityWithoutCountry { entity: String, city: String },
    #[error("{name} must be in [0, 1], got {value}")]
    LambdaRange { name: &'static str, value: f64 },
    #[error("lambda_hop ({hop}) must not exceed lambda_direct ({direct})")]
    HopExceedsDirect { hop: f64, direct: f64 },
    #[error("floor must be positive with floor * V < 1, got floor={floor}, V={size}")]
    Floor { floor: f64, size: usize },
}

/// Facts and mixture knobs of a [`TableLm`], as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactTable {
    pub entity_to_city: BTreeMap<String, String>,
    pub city_to_country: BTreeMap<String, String>,
    pub lambda_direct: f64,
    pub lambda_hop: f64,
    pub floor: f64,
    /// Full token list, including `eos`.
    pub vocab: Vec<String>,
}

impl FactTable {
    pub fn from_json_str(s: &str) -> Result<Self, FactTableError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, FactTableError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| FactTableError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    fn validate(&self) -> Result<(), FactTableError> {
        for (name, value) in [("lambda_direct", self.lambda_direct), ("lambda_hop", self.lambda_hop)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FactTableError::LambdaRange { name, value });
            }
        }
        if self.lambda_hop > self.lambda_direct {
            return Err(FactTableError::HopExceedsDirect { hop: self.lambda_hop, direct: self.lambda_direct });
        }
        let size = self.vocab.len();
        if !(self.floor > 0.0 && self.floor * (size as f64) < 1.0) {
            return Err(FactTableError::Floor { floor: self.floor, size });
        }
        for (entity, city) in &self.entity_to_city {
            if !self.city_to_country.contains_key(city) {
                return Err(FactTableError::CityWithoutCountry { entity: entity.clone(), city: city.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Question {
    Direct(TokenId),
    Hop(TokenId),
}

/// Result of reading a context against the prompt grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Parse {
    Question { question: Question, override_city: Option<TokenId>, answered: bool },
    Unparseable,
}

#[derive(Debug, Clone, Copy)]
struct GrammarIds {
    q: TokenId,
    colon: TokenId,
    where_: TokenId,
    is: TokenId,
    qmark: TokenId,
    a: TokenId,
    which: TokenId,
    country: TokenId,
    in_: TokenId,
    new: TokenId,
    fact: TokenId,
    period: TokenId,
}

/// The fact-table model. Immutable after construction and freely shareable.
#[derive(Debug, Clone)]
pub struct TableLm {
    table: FactTable,
    vocab: Vocabulary,
    grammar: GrammarIds,
    entity_city: HashMap<TokenId, TokenId>,
    city_country: HashMap<TokenId, TokenId>,
}

impl TableLm {
    pub fn new(table: FactTable) -> Result<Self, FactTableError> {
        table.validate()?;
        let vocab = Vocabulary::new(table.vocab.clone(), EOS_TOKEN)?;
        let id = |tok: &str| vocab.token_id(tok).ok_or_else(|| FactTableError::MissingToken(tok.to_string()));
        let g: Vec<TokenId> = GRAMMAR.iter().map(|t| id(t)).collect::<Result<_, _>>()?;
        let grammar = GrammarIds {
            q: g[0],
            colon: g[1],
            where_: g[2],
            is: g[3],
            qmark: g[4],
            a: g[5],
            which: g[6],
            country: g[7],
            in_: g[8],
            new: g[9],
            fact: g[10],
            period: g[11],
        };
        let mut entity_city = HashMap::new();
        for (e, c) in &table.entity_to_city {
            entity_city.insert(id(e)?, id(c)?);
        }
        let mut city_country = HashMap::new();
        for (c, k) in &table.city_to_country {
            city_country.insert(id(c)?, id(k)?);
        }
        Ok(TableLm { table, vocab, grammar, entity_city, city_country })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, FactTableError> {
        Self::new(FactTable::from_path(path)?)
    }

    pub fn table(&self) -> &FactTable {
        &self.table
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn tok(&self, id: TokenId) -> String {
        self.vocab.token(id).unwrap_or("<?>").to_string()
    }

    fn parse(&self, ids: &[TokenId]) -> Parse {
        let g = &self.grammar;
        let mut overrides: HashMap<TokenId, TokenId> = HashMap::new();
        let mut pos = 0;
        while ids[pos..].starts_with(&[g.new, g.fact, g.colon]) {
            let body_start = pos + 3;
            let Some(rel_end) = ids[body_start..].iter().position(|&t| t == g.period) else {
                return Parse::Unparseable;
            };
            let body = &ids[body_start..body_start + rel_end];
            if let [entity, is, in_, city] = *body {
                if is == g.is && in_ == g.in_ && self.entity_city.contains_key(&entity) {
                    overrides.insert(entity, city);
                }
            }
            pos = body_start + rel_end + 1;
        }

        let rest = &ids[pos..];
        let direct = [g.q, g.colon, g.where_, g.is];
        let (question, tail) = if rest.len() >= 8 && rest.starts_with(&direct) && rest[5..8] == [g.qmark, g.a, g.colon] {
            (Question::Direct(rest[4]), &rest[8..])
        } else if rest.len() >= 10
            && rest.starts_with(&[g.q, g.colon, g.which, g.country, g.is])
            && rest[6..10] == [g.in_, g.qmark, g.a, g.colon]
        {
            (Question::Hop(rest[5]), &rest[10..])
        } else if rest.len() >= 3 && rest[1..3] == [g.is, g.in_] {
            (Question::Direct(rest[0]), &rest[3..])
        } else {
            return Parse::Unparseable;
        };
        let entity = match question {
            Question::Direct(e) | Question::Hop(e) => e,
        };
        Parse::Question { question, override_city: overrides.get(&entity).copied(), answered: !tail.is_empty() }
    }

    fn city_of(&self, entity: TokenId) -> Result<TokenId, BackendError> {
        self.entity_city.get(&entity).copied().ok_or_else(|| BackendError::UnknownEntity(self.tok(entity)))
    }

    fn country_of(&self, city: TokenId) -> Result<TokenId, BackendError> {
        self.city_country.get(&city).copied().ok_or_else(|| BackendError::UnknownEntity(self.tok(city)))
    }

    /// Where the rule mass goes for this context, as (token, weight) pairs summing to 1.
    fn rule_mass(&self, ids: &[TokenId]) -> Result<Vec<(TokenId, f64)>, BackendError> {
        let eos = self.vocab.eos();
        let (question, override_city) = match self.parse(ids) {
            Parse::Unparseable | Parse::Question { answered: true, .. } => return Ok(vec![(eos, 1.0)]),
            Parse::Question { question, override_city, .. } => (question, override_city),
        };
        match question {
            Question::Direct(entity) => {
                let old = self.city_of(entity)?;
                Ok(match override_city {
                    None => vec![(old, 1.0)],
                    Some(new) => vec![(new, self.table.lambda_direct), (old, 1.0 - self.table.lambda_direct)],
                })
            }
            Question::Hop(entity) => {
                let old = self.country_of(self.city_of(entity)?)?;
                Ok(match override_city {
                    None => vec![(old, 1.0)],
                    Some(city) => {
                        let new = self.country_of(city)?;
                        vec![(new, self.table.lambda_hop), (old, 1.0 - self.table.lambda_hop)]
                    }
                })
            }
        }
    }

    /// `floor` on every token plus `1 - floor * V` spread by the rule table.
    pub fn rule_dist(&self, context: &TokenSeq) -> Result<ProbDist, BackendError> {
        check_context(self, context)?;
        let size = self.vocab.len();
        let floor = self.table.floor;
        let rule_weight = 1.0 - floor * size as f64;
        let mut mass = vec![0.0; size];
        for (tok, w) in self.rule_mass(context.ids())? {
            mass[tok as usize] += w;
        }
        let probs = mass.into_iter().map(|m| floor + rule_weight * m).collect();
        Ok(ProbDist::from_probs(probs, self.vocab.id())?)
    }
}

impl Tokenizer for TableLm {
    fn vocab(&self) -> VocabInfo {
        self.vocab.info()
    }

    fn tokenize(&self, text: &str) -> Result<TokenSeq, BackendError> {
        let ids = text
            .split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                self.vocab.token_id(&w).ok_or(BackendError::Tokenization(w))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenSeq::new(ids, &self.vocab.info())?)
    }

    fn detokenize(&self, seq: &TokenSeq) -> Result<String, BackendError> {
        check_context(self, seq)?;
        let words: Vec<&str> = seq.ids().iter().map(|&id| self.vocab.token(id).unwrap_or("<?>")).collect();
        Ok(words.join(" "))
    }
}

impl LanguageModel for TableLm {
    fn next_dist(&self, context: &TokenSeq) -> Result<ProbDist, BackendError> {
        self.rule_dist(context)
    }
}
