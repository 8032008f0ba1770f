//! Shared helpers for the line-oriented `LSDS-*` text formats.
//!
//! All on-disk artifacts (datasets, models, scenes, traces, reports) are
//! UTF-8 text with a magic first line of the form `LSDS-<KIND> v1`. Floats
//! are written in scientific notation: data files carry 9 significant
//! digits, model parameter blocks carry 17 so that `f64` values survive a
//! round trip bit-exactly.

use std::fmt::Write as _;

/// Formats a float with 9 significant digits (data-file precision).
pub fn fmt_f64_data(x: f64) -> String {
    format!("{x:.8e}")
}

/// Formats a float with 17 significant digits; parses back bit-identically.
pub fn fmt_f64_exact(x: f64) -> String {
    format!("{x:.16e}")
}

/// Quantizes a float to the data-file precision (9 significant digits).
///
/// Values produced by the corpus generators pass through this before being
/// stored in samples, so an in-memory corpus and its on-disk form agree
/// bit-for-bit.
pub fn quantize_data(x: f64) -> f64 {
    fmt_f64_data(x).parse().expect("formatted float reparses")
}

/// Parses a float, mapping failures to a line-numbered message naming the
/// field the token belongs to.
pub fn parse_f64(tok: &str, line_no: usize, what: &str) -> Result<f64, ParseError> {
    tok.trim().parse().map_err(|_| ParseError {
        line: line_no,
        message: format!("invalid float for {what}: `{tok}`"),
    })
}

/// Parses an integer token.
pub fn parse_usize(tok: &str, line_no: usize, what: &str) -> Result<usize, ParseError> {
    tok.trim().parse().map_err(|_| ParseError {
        line: line_no,
        message: format!("invalid integer for {what}: `{tok}`"),
    })
}

/// A parse failure tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// Checks the magic line of an `LSDS-*` file.
///
/// `expected` is the full magic prefix, e.g. `"LSDS-DATA v1"`. Returns the
/// remainder of the line (trimmed) so callers can read a trailing tag such
/// as the dataset kind.
pub fn expect_magic<'a>(line: &'a str, expected: &str, line_no: usize) -> Result<&'a str, ParseError> {
    let line = line.trim_end();
    if let Some(rest) = line.strip_prefix(expected) {
        if rest.is_empty() || rest.starts_with(' ') {
            return Ok(rest.trim());
        }
    }
    Err(ParseError::new(
        line_no,
        format!("expected `{expected}` header, found `{line}`"),
    ))
}

/// Joins float values into one comma-separated row at data precision.
pub fn write_data_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}", fmt_f64_data(*v));
    }
}
