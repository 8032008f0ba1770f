//! Corpus files: line-oriented, comma-delimited, UTF-8.
//!
//! Layout shared by both kinds:
//!
//! ```text
//! LSDS-DATA v1 <detection|severity>
//! <header row naming every column>
//! <one row per tick>
//! ```
//!
//! Three metadata columns lead (object id, scenario or sequence index,
//! timestamp), the nine feature columns follow in canonical order, and
//! the annotation column comes last: the binary label for detection, the
//! slip speed for severity. Floats carry 9 significant digits; corpus
//! generators quantize features through the same formatter before use, so
//! a written file reads back bit-identical.

use crate::features::{DetectionSample, FeatureVector, Scenario, SeveritySample, FEATURE_NAMES};
use crate::textio::{self, ParseError};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC_PREFIX: &str = "LSDS-DATA v1";

/// Errors from dataset reading and writing.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("{path}: expected a {expected} dataset, found {found}")]
    WrongKind {
        path: String,
        expected: DatasetKind,
        found: DatasetKind,
    },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn format(path: &Path, source: ParseError) -> Self {
        DataError::Format {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which annotation a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Detection,
    Severity,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Detection => "detection",
            DatasetKind::Severity => "severity",
        })
    }
}

fn detection_header() -> String {
    let mut h = String::from("object_id,scenario,t");
    for name in FEATURE_NAMES {
        h.push(',');
        h.push_str(name);
    }
    h.push_str(",label");
    h
}

fn severity_header() -> String {
    let mut h = String::from("object_id,sequence,t");
    for name in FEATURE_NAMES {
        h.push(',');
        h.push_str(name);
    }
    h.push_str(",v_slip");
    h
}

fn check_object_id(id: &str) -> Result<(), DataError> {
    if id.is_empty() || id.contains(',') || id.contains('\n') || id.contains('\r') {
        return Err(DataError::InvalidSample(format!(
            "object id '{id}' must be non-empty and free of commas and line breaks"
        )));
    }
    Ok(())
}

/// Serializes a detection corpus. Deterministic: the same samples always
/// produce the same bytes.
pub fn write_detection_string(samples: &[DetectionSample]) -> Result<String, DataError> {
    let mut out = String::new();
    out.push_str(MAGIC_PREFIX);
    out.push_str(" detection\n");
    out.push_str(&detection_header());
    out.push('\n');
    for s in samples {
        check_object_id(&s.object_id)?;
        if s.label > 1 {
            return Err(DataError::InvalidSample(format!(
                "label must be 0 or 1, got {}",
                s.label
            )));
        }
        write!(out, "{},{},{}", s.object_id, s.scenario, textio::fmt_f64_data(s.features.timestamp))
            .expect("string write");
        for v in s.features.combined() {
            out.push(',');
            out.push_str(&textio::fmt_f64_data(v));
        }
        writeln!(out, ",{}", s.label).expect("string write");
    }
    Ok(out)
}

/// Serializes a severity corpus; same shape with sequence index and
/// slip-speed annotation.
pub fn write_severity_string(samples: &[SeveritySample]) -> Result<String, DataError> {
    let mut out = String::new();
    out.push_str(MAGIC_PREFIX);
    out.push_str(" severity\n");
    out.push_str(&severity_header());
    out.push('\n');
    for s in samples {
        check_object_id(&s.object_id)?;
        if !(s.v_slip >= 0.0) {
            return Err(DataError::InvalidSample(format!(
                "v_slip must be non-negative, got {}",
                s.v_slip
            )));
        }
        write!(
            out,
            "{},{},{}",
            s.object_id,
            s.sequence_id,
            textio::fmt_f64_data(s.features.timestamp)
        )
        .expect("string write");
        for v in s.features.combined() {
            out.push(',');
            out.push_str(&textio::fmt_f64_data(v));
        }
        writeln!(out, ",{}", textio::fmt_f64_data(s.v_slip)).expect("string write");
    }
    Ok(out)
}

pub fn write_detection_dataset(path: &Path, samples: &[DetectionSample]) -> Result<(), DataError> {
    let text = write_detection_string(samples)?;
    let mut f = io::BufWriter::new(fs::File::create(path).map_err(|e| DataError::io(path, e))?);
    f.write_all(text.as_bytes()).map_err(|e| DataError::io(path, e))?;
    f.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_severity_dataset(path: &Path, samples: &[SeveritySample]) -> Result<(), DataError> {
    let text = write_severity_string(samples)?;
    let mut f = io::BufWriter::new(fs::File::create(path).map_err(|e| DataError::io(path, e))?);
    f.write_all(text.as_bytes()).map_err(|e| DataError::io(path, e))?;
    f.flush().map_err(|e| DataError::io(path, e))
}

/// Reads the magic line and reports which kind of dataset a file holds.
pub fn dataset_kind(path: &Path) -> Result<DatasetKind, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    kind_of_magic(first).map_err(|e| DataError::format(path, e))
}

fn kind_of_magic(line: &str) -> Result<DatasetKind, ParseError> {
    let tag = textio::expect_magic(line, MAGIC_PREFIX, 1)?;
    match tag {
        "detection" => Ok(DatasetKind::Detection),
        "severity" => Ok(DatasetKind::Severity),
        other => Err(ParseError::new(
            1,
            format!("unknown dataset kind '{other}' (expected detection or severity)"),
        )),
    }
}

fn split_row(line: &str, line_no: usize) -> Result<Vec<&str>, ParseError> {
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != 13 {
        return Err(ParseError::new(
            line_no,
            format!("expected 13 columns, got {}", cols.len()),
        ));
    }
    Ok(cols)
}

fn parse_features(cols: &[&str], line_no: usize) -> Result<FeatureVector, ParseError> {
    let t = textio::parse_f64(cols[2], line_no, "t")?;
    let mut vals = [0.0; 9];
    for (i, slot) in vals.iter_mut().enumerate() {
        *slot = textio::parse_f64(cols[3 + i], line_no, FEATURE_NAMES[i])?;
    }
    Ok(FeatureVector::from_combined(t, vals))
}

pub fn read_detection_str(text: &str, path: &Path) -> Result<Vec<DetectionSample>, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| DataError::format(path, ParseError::new(1, "empty file")))?;
    let kind = kind_of_magic(magic).map_err(|e| DataError::format(path, e))?;
    if kind != DatasetKind::Detection {
        return Err(DataError::WrongKind {
            path: path.display().to_string(),
            expected: DatasetKind::Detection,
            found: kind,
        });
    }
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::format(path, ParseError::new(2, "missing header row")))?;
    if header != detection_header() {
        return Err(DataError::format(
            path,
            ParseError::new(2, format!("unexpected header '{header}'")),
        ));
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let row = (|| -> Result<DetectionSample, ParseError> {
            let cols = split_row(line, line_no)?;
            let scenario: Scenario = cols[1]
                .parse()
                .map_err(|e: String| ParseError::new(line_no, e))?;
            let features = parse_features(&cols, line_no)?;
            let label = textio::parse_usize(cols[12], line_no, "label")?;
            if label > 1 {
                return Err(ParseError::new(
                    line_no,
                    format!("label must be 0 or 1, got {label}"),
                ));
            }
            Ok(DetectionSample {
                object_id: cols[0].to_string(),
                scenario,
                features,
                label: label as u8,
            })
        })()
        .map_err(|e| DataError::format(path, e))?;
        samples.push(row);
    }
    Ok(samples)
}

pub fn read_severity_str(text: &str, path: &Path) -> Result<Vec<SeveritySample>, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| DataError::format(path, ParseError::new(1, "empty file")))?;
    let kind = kind_of_magic(magic).map_err(|e| DataError::format(path, e))?;
    if kind != DatasetKind::Severity {
        return Err(DataError::WrongKind {
            path: path.display().to_string(),
            expected: DatasetKind::Severity,
            found: kind,
        });
    }
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::format(path, ParseError::new(2, "missing header row")))?;
    if header != severity_header() {
        return Err(DataError::format(
            path,
            ParseError::new(2, format!("unexpected header '{header}'")),
        ));
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let row = (|| -> Result<SeveritySample, ParseError> {
            let cols = split_row(line, line_no)?;
            let sequence_id = textio::parse_usize(cols[1], line_no, "sequence")?;
            let features = parse_features(&cols, line_no)?;
            let v_slip = textio::parse_f64(cols[12], line_no, "v_slip")?;
            if !(v_slip >= 0.0) {
                return Err(ParseError::new(
                    line_no,
                    format!("v_slip must be non-negative, got {v_slip}"),
                ));
            }
            Ok(SeveritySample {
                object_id: cols[0].to_string(),
                sequence_id,
                features,
                v_slip,
            })
        })()
        .map_err(|e| DataError::format(path, e))?;
        samples.push(row);
    }
    Ok(samples)
}

pub fn read_detection_dataset(path: &Path) -> Result<Vec<DetectionSample>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    read_detection_str(&text, path)
}

pub fn read_severity_dataset(path: &Path) -> Result<Vec<SeveritySample>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    read_severity_str(&text, path)
}

/// Quantizes every float of a feature vector through the data formatter,
/// so in-memory values match what a written file reads back.
pub fn quantize_features(v: &FeatureVector) -> FeatureVector {
    let vals = v.combined().map(textio::quantize_data);
    FeatureVector::from_combined(textio::quantize_data(v.timestamp), vals)
}
