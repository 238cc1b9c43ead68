use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::edit_context::EditCase;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset is not a JSON array: {0}")]
    NotArray(serde_json::Error),
    #[error("case {index}: {message}")]
    Parse { index: usize, message: String },
    #[error("case {index}: invalid field `{field}`")]
    InvariantViolation { index: usize, field: &'static str },
}

/// Parses a JSON array of edit cases, preserving order.
///
/// Unknown fields are ignored. A missing or blank required field is an
/// invariant violation naming the case index and the field.
pub fn parse_dataset(text: &str) -> Result<Vec<EditCase>, DatasetError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(DatasetError::NotArray)?;
    let mut seen = HashSet::new();
    values
        .into_iter()
        .enumerate()
        .map(|(index, value)| {
            let case: EditCase =
                serde_json::from_value(value).map_err(|e| DatasetError::Parse { index, message: e.to_string() })?;
            case.validate().map_err(|field| DatasetError::InvariantViolation { index, field })?;
            if !seen.insert(case.case_id.clone()) {
                return Err(DatasetError::InvariantViolation { index, field: "case_id" });
            }
            Ok(case)
        })
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EditCase>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text)
}
