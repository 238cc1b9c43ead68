use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::decode::{Constraints, DecodeParams, DEFAULT_ALPHA};
use crate::probdist::DEFAULT_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Table,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The unedited model's greedy answers.
    Raw,
    /// Greedy decoding on the edited prompt.
    EditedPlain,
    Disco,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Raw => "raw",
            Mode::EditedPlain => "edited_plain",
            Mode::Disco => "disco",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    None,
    Summary,
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dataset_path: PathBuf,
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server_url: Option<String>,
    pub mode: Mode,
    pub alpha: f64,
    pub constrain_out: bool,
    pub constrain_edit: bool,
    pub include_paraphrase: bool,
    pub k_demos: usize,
    pub max_new: usize,
    pub eps: f64,
    pub trace_level: TraceLevel,
    /// Recorded for provenance; every run is deterministic regardless.
    pub seed: u64,
    pub analysis: bool,
    /// Worker threads. Does not affect the report.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_path: PathBuf::new(),
            backend: BackendKind::Table,
            table_path: None,
            server_url: None,
            mode: Mode::Disco,
            alpha: DEFAULT_ALPHA,
            constrain_out: true,
            constrain_edit: true,
            include_paraphrase: true,
            k_demos: 0,
            max_new: 16,
            eps: DEFAULT_EPS,
            trace_level: TraceLevel::None,
            seed: 0,
            analysis: false,
            jobs: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("alpha must be finite and >= 0, got {0}")]
    Alpha(f64),
    #[error("max_new must be at least 1")]
    MaxNew,
    #[error("eps must be in (0, 1], got {0}")]
    Eps(f64),
    #[error("jobs must be at least 1")]
    Jobs,
    #[error("the table backend needs --table")]
    MissingTable,
    #[error("the remote backend needs --server or DISCO_SERVER")]
    MissingServer,
    #[error("alpha list is empty")]
    EmptyAlphas,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if self.max_new == 0 {
            return Err(ConfigError::MaxNew);
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(ConfigError::Eps(self.eps));
        }
        if self.jobs == 0 {
            return Err(ConfigError::Jobs);
        }
        match self.backend {
            BackendKind::Table if self.table_path.is_none() => Err(ConfigError::MissingTable),
            BackendKind::Remote if self.server_url.is_none() => Err(ConfigError::MissingServer),
            _ => Ok(()),
        }
    }

    pub fn constraints(&self) -> Constraints {
        Constraints { outdated: self.constrain_out, edit_target: self.constrain_edit }
    }

    /// Decoder settings for the configured mode. Plain edited decoding is DISCO with alpha = 0.
    pub fn decode_params(&self) -> DecodeParams {
        let alpha = match self.mode {
            Mode::Disco => self.alpha,
            Mode::Raw | Mode::EditedPlain => 0.0,
        };
        DecodeParams { alpha, max_new: self.max_new, constraints: self.constraints() }
    }
}
