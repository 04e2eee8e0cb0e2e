//! ChartLang: a small chart-description language with a deterministic
//! interpreter. It stands in for plotting code: "executing" a program yields
//! an [`ElementSet`] (what would have been drawn) or an [`ExecError`].
//!
//! ```text
//! program := LAYOUT r c subplot+
//! subplot := SUBPLOT i TYPE t COLOR k {TITLE w | GRID | LEGEND} DATA v* END
//! ```

mod exec;
mod program;
pub mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use exec::{execute, overlap_count, ElementSet, RenderedSubplot};
pub use program::{
    parse, ChartProgram, ChartType, PaletteColor, SubplotSpec, Value, Word, MAX_DATA_LEN, MAX_DIM,
    MAX_INDEX,
};
pub use vocab::{detokenize, tokenize, Token, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "E_PARSE")]
    Parse,
    #[serde(rename = "E_INDEX")]
    Index,
    #[serde(rename = "E_DUP")]
    Duplicate,
    #[serde(rename = "E_NODATA")]
    NoData,
}

impl ErrorCode {
    pub fn token(self) -> Token {
        match self {
            ErrorCode::Parse => vocab::E_PARSE,
            ErrorCode::Index => vocab::E_INDEX,
            ErrorCode::Duplicate => vocab::E_DUP,
            ErrorCode::NoData => vocab::E_NODATA,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.token().as_str()
    }
}

/// A parse or runtime failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ExecError {
    pub code: ErrorCode,
    pub message: String,
    /// Token offset for parse errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

impl ExecError {
    pub fn parse(position: usize) -> Self {
        ExecError {
            code: ErrorCode::Parse,
            message: format!("unexpected token at position {position}"),
            position: Some(position),
        }
    }

    /// Used when a response carries no code block at all.
    pub fn missing_code() -> Self {
        ExecError {
            code: ErrorCode::Parse,
            message: "no code block found".into(),
            position: None,
        }
    }

    pub fn index(index: u8, rows: u8, cols: u8) -> Self {
        ExecError {
            code: ErrorCode::Index,
            message: format!("subplot index {index} out of range for {rows}x{cols} layout"),
            position: None,
        }
    }

    pub fn duplicate(index: u8) -> Self {
        ExecError {
            code: ErrorCode::Duplicate,
            message: format!("duplicate subplot index {index}"),
            position: None,
        }
    }

    pub fn no_data(index: u8) -> Self {
        ExecError {
            code: ErrorCode::NoData,
            message: format!("subplot {index} has no data"),
            position: None,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Returns the tokens strictly inside the last `<CODE> … </CODE>` pair.
pub fn extract_code_block(response: &[Token]) -> Option<&[Token]> {
    let open = response.iter().rposition(|&t| t == vocab::CODE_OPEN)?;
    let len = response[open + 1..].iter().position(|&t| t == vocab::CODE_CLOSE)?;
    Some(&response[open + 1..open + 1 + len])
}

/// Parses then executes.
pub fn run_code(code: &[Token]) -> Result<ElementSet, ExecError> {
    execute(&parse(code)?)
}
