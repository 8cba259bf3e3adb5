// SPDX-License-Identifier: Apache-2.0

//! The `KEY = value` line format shared by recipes, images and `layer.conf`.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyntaxError {
    #[error("line {line}: expected `KEY = value`")]
    MissingEquals { line: usize },
    #[error("line {line}: invalid key {key:?}")]
    InvalidKey { line: usize, key: String },
    #[error("line {line}: key {key} assigned twice")]
    DuplicateKey { line: usize, key: String },
}

fn valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some('A'..='Z'))
        && chars.all(|c| matches!(c, 'A'..='Z' | '0'..='9' | '_'))
}

/// Comment lines (first non-blank character `#`) and blank lines.
pub fn is_ignorable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Splits text into assignments; blank lines and `#` comments are skipped.
pub fn parse_assignments(text: &str) -> Result<Vec<Assignment>, SyntaxError> {
    let mut out: Vec<Assignment> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if is_ignorable(raw) {
            continue;
        }
        let (key, value) = raw.split_once('=').ok_or(SyntaxError::MissingEquals { line })?;
        let key = key.trim();
        if !valid_key(key) {
            return Err(SyntaxError::InvalidKey { line, key: key.to_owned() });
        }
        if out.iter().any(|a| a.key == key) {
            return Err(SyntaxError::DuplicateKey { line, key: key.to_owned() });
        }
        out.push(Assignment { key: key.to_owned(), value: value.trim().to_owned(), line });
    }
    Ok(out)
}

/// Whitespace-separated list value.
pub fn split_list(value: &str) -> Vec<String> {
    value.split_whitespace().map(ToOwned::to_owned).collect()
}
