// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error in {path} at row {row}{}: {message}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    CsvParse {
        path: String,
        row: usize,
        col: Option<usize>,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical breakdown after {iterations} iterations: {message}")]
    Numerical { iterations: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Error::Degenerate(message.into())
    }
}
