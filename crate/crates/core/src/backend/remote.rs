//! Client for a logit server.
//!
//! Wire protocol (JSON over HTTP, one request per decode step):
//!
//! - `GET  /v1/manifest` → `{model_name, vocab_size, eos_id, vocab_hash}`
//! - `POST /v1/tokenize {text}` → `{ids}`
//! - `POST /v1/detokenize {ids}` → `{text}`
//! - `POST /v1/next_token_logits {context_ids}` → `{logits}`
//!
//! The server returns raw logits and the client applies the softmax, so
//! every backend goes through the same normalization. `503` maps to
//! [`BackendError::Unavailable`]; other non-success statuses are surfaced as
//! [`BackendError::Rejected`].

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{check_context, BackendError, LanguageModel, Tokenizer};
use crate::probdist::ProbDist;
use crate::vocab::{TokenId, TokenSeq, VocabId, VocabInfo};

/// Largest text the tokenize endpoint accepts.
pub const MAX_TOKENIZE_BYTES: usize = 64 * 1024;

const MANIFEST_ATTEMPTS: u32 = 5;
const MAX_RETRY_WAIT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_name: String,
    pub vocab_size: usize,
    pub eos_id: TokenId,
    /// Lowercase hex SHA-256 of the `\n`-joined token strings.
    pub vocab_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetokenizeRequest {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetokenizeResponse {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub context_ids: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteLm {
    base: String,
    client: Client,
    manifest: Manifest,
    info: VocabInfo,
}

impl RemoteLm {
    /// Connects and fetches the manifest, waiting out a bounded number of `503`s.
    pub fn connect(base_url: &str) -> Result<Self, BackendError> {
        Self::connect_with_timeout(base_url, Duration::from_secs(60))
    }

    pub fn connect_with_timeout(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let base = base_url.trim_end_matches('/').to_string();
        let manifest = fetch_manifest(&client, &base)?;
        let id = VocabId::from_hex(&manifest.vocab_hash)
            .ok_or_else(|| BackendError::Protocol(format!("bad vocab_hash {:?}", manifest.vocab_hash)))?;
        if manifest.vocab_size == 0 || manifest.eos_id as usize >= manifest.vocab_size {
            return Err(BackendError::Protocol(format!(
                "eos_id {} outside vocabulary of size {}",
                manifest.eos_id, manifest.vocab_size
            )));
        }
        let info = VocabInfo { id, size: manifest.vocab_size, eos: manifest.eos_id };
        Ok(RemoteLm { base, client, manifest, info })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let resp = self
            .client
            .post(format!("{}{}", self.base, path))
            .json(body)
            .send()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        decode(resp)
    }
}

fn fetch_manifest(client: &Client, base: &str) -> Result<Manifest, BackendError> {
    let url = format!("{base}/v1/manifest");
    let mut attempt = 0;
    loop {
        attempt += 1;
        let resp = client.get(&url).send().map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if resp.status() == StatusCode::SERVICE_UNAVAILABLE && attempt < MANIFEST_ATTEMPTS {
            let wait = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs)
                .unwrap_or(Duration::from_millis(200))
                .min(MAX_RETRY_WAIT);
            log::info!("logit server still loading, retrying in {wait:?}");
            std::thread::sleep(wait);
            continue;
        }
        return decode(resp);
    }
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, BackendError> {
    let status = resp.status();
    if status == StatusCode::SERVICE_UNAVAILABLE {
        return Err(BackendError::Unavailable(format!("server returned {status}")));
    }
    if !status.is_success() {
        let message = resp.text().unwrap_or_default();
        return Err(BackendError::Rejected { status: status.as_u16(), message });
    }
    resp.json::<T>().map_err(|e| BackendError::Protocol(e.to_string()))
}

impl Tokenizer for RemoteLm {
    fn vocab(&self) -> VocabInfo {
        self.info
    }

    fn tokenize(&self, text: &str) -> Result<TokenSeq, BackendError> {
        if text.len() > MAX_TOKENIZE_BYTES {
            return Err(BackendError::Tokenization(format!("text of {} bytes exceeds 64 KiB", text.len())));
        }
        let resp: TokenizeResponse = self.post("/v1/tokenize", &TokenizeRequest { text: text.to_string() })?;
        TokenSeq::new(resp.ids, &self.info).map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn detokenize(&self, seq: &TokenSeq) -> Result<String, BackendError> {
        check_context(self, seq)?;
        let resp: DetokenizeResponse = self.post("/v1/detokenize", &DetokenizeRequest { ids: seq.ids().to_vec() })?;
        Ok(resp.text)
    }
}

impl LanguageModel for RemoteLm {
    fn next_dist(&self, context: &TokenSeq) -> Result<ProbDist, BackendError> {
        check_context(self, context)?;
        let resp: LogitsResponse =
            self.post("/v1/next_token_logits", &LogitsRequest { context_ids: context.ids().to_vec() })?;
        if resp.logits.len() != self.info.size {
            return Err(BackendError::Protocol(format!(
                "expected {} logits, got {}",
                self.info.size,
                resp.logits.len()
            )));
        }
        Ok(ProbDist::softmax(&resp.logits, self.info.id)?)
    }
}
