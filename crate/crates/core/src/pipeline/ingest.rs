//! Line-delimited record ingestion.
//!
//! Attribute response arrays may also be given in raw form as
//! `{"raw": [...], "platt": [{"slope": a, "intercept": b}, ...]}` with one
//! Platt pair per entry (or a single pair shared by all entries); they are
//! calibrated on the way in.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::calibration::PlattParams;
use crate::typicality::{CategoryVocab, EvidenceError, ImageEvidence, NormalTrainingRecord, SIMPLEX_TOL};

/// Simplices within this distance of 1 are rescaled; others are rejected.
/// Sums already within [`SIMPLEX_TOL`] are left as they are, so accepted
/// records parse back unchanged.
pub const RENORMALIZE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: read failed: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: `{field}` sums to {sum}")]
    SimplexViolation { line: usize, field: String, sum: f64 },
    #[error("line {line}: {message}")]
    VocabMismatch { line: usize, message: String },
}

fn parse_err(line: usize, field: impl Into<String>, message: impl ToString) -> IngestError {
    IngestError::Parse {
        line,
        field: field.into(),
        message: message.to_string(),
    }
}

/// Non-blank lines with their 1-based numbers.
fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), IngestError>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.map(|s| (i + 1, s))
                .map_err(|source| IngestError::Io { line: i + 1, source })
        })
        .filter(|r| !matches!(r, Ok((_, s)) if s.trim().is_empty()))
}

fn decode<T: DeserializeOwned>(line: usize, value: Value) -> Result<T, IngestError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        parse_err(line, field, e.into_inner())
    })
}

/// Reads one JSON value of type `T` per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, IngestError> {
    lines(reader)
        .map(|r| {
            let (line, text) = r?;
            let value: Value = serde_json::from_str(&text).map_err(|e| parse_err(line, ".", e))?;
            decode(line, value)
        })
        .collect()
}

/// Writes one compact JSON value per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponses {
    raw: Vec<f64>,
    platt: Vec<PlattParams>,
}

fn calibrate_field(value: &mut Value, line: usize, field: &str) -> Result<(), IngestError> {
    if !value.is_object() {
        return Ok(());
    }
    let raw: RawResponses = serde_json::from_value(value.take()).map_err(|e| parse_err(line, field, e))?;
    let calibrated: Vec<f64> = match raw.platt.len() {
        1 => raw.raw.iter().map(|&s| raw.platt[0].apply(s)).collect(),
        n if n == raw.raw.len() => raw.raw.iter().zip(&raw.platt).map(|(&s, p)| p.apply(s)).collect(),
        n => {
            return Err(parse_err(
                line,
                field,
                format!("{n} Platt pairs for {} raw scores", raw.raw.len()),
            ))
        }
    };
    *value = Value::from(calibrated);
    Ok(())
}

fn calibrate_evidence(evidence: &mut Value, line: usize, prefix: &str) -> Result<(), IngestError> {
    if let Some(v) = evidence.get_mut("scene_attrs") {
        calibrate_field(v, line, &format!("{prefix}scene_attrs"))?;
    }
    if let Some(Value::Array(objects)) = evidence.get_mut("objects") {
        for (k, o) in objects.iter_mut().enumerate() {
            if let Some(v) = o.get_mut("object_attrs") {
                calibrate_field(v, line, &format!("{prefix}objects[{k}].object_attrs"))?;
            }
        }
    }
    Ok(())
}

fn renormalize(probs: &mut [f64], line: usize, field: &str) -> Result<(), IngestError> {
    let sum: f64 = probs.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > RENORMALIZE_TOL {
        return Err(IngestError::SimplexViolation {
            line,
            field: field.to_string(),
            sum,
        });
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

fn finish_evidence(
    evidence: &mut ImageEvidence,
    vocab: &CategoryVocab,
    line: usize,
    prefix: &str,
) -> Result<(), IngestError> {
    // dimension errors take precedence over simplex errors
    let dims = |f: &str, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(IngestError::VocabMismatch {
                line,
                message: format!("`{prefix}{f}` has {found} entries, vocabulary has {expected}"),
            })
        }
    };
    dims("scene_probs", vocab.num_scenes(), evidence.scene_probs.len())?;
    renormalize(&mut evidence.scene_probs, line, &format!("{prefix}scene_probs"))?;
    for (k, o) in evidence.objects.iter_mut().enumerate() {
        let f = format!("objects[{k}].object_probs");
        dims(&f, vocab.num_objects(), o.object_probs.len())?;
        renormalize(&mut o.object_probs, line, &format!("{prefix}{f}"))?;
    }
    evidence.validate(vocab).map_err(|e| match e {
        EvidenceError::DimensionMismatch { field, expected, found } => IngestError::VocabMismatch {
            line,
            message: format!("`{prefix}{field}` has {found} entries, vocabulary has {expected}"),
        },
        EvidenceError::SimplexViolation { field, sum } => IngestError::SimplexViolation {
            line,
            field: format!("{prefix}{field}"),
            sum,
        },
        EvidenceError::OutOfRange { field, value } => {
            parse_err(line, format!("{prefix}{field}"), format!("value {value} out of range"))
        }
    })
}

/// Parses test-time evidence, one image per line.
pub fn parse_evidence<R: BufRead>(reader: R, vocab: &CategoryVocab) -> Result<Vec<ImageEvidence>, IngestError> {
    lines(reader)
        .map(|r| {
            let (line, text) = r?;
            let mut value: Value = serde_json::from_str(&text).map_err(|e| parse_err(line, ".", e))?;
            calibrate_evidence(&mut value, line, "")?;
            let mut evidence: ImageEvidence = decode(line, value)?;
            finish_evidence(&mut evidence, vocab, line, "")?;
            Ok(evidence)
        })
        .collect()
}

/// Parses normal training records, one image per line.
pub fn parse_training<R: BufRead>(reader: R, vocab: &CategoryVocab) -> Result<Vec<NormalTrainingRecord>, IngestError> {
    lines(reader)
        .map(|r| {
            let (line, text) = r?;
            let mut value: Value = serde_json::from_str(&text).map_err(|e| parse_err(line, ".", e))?;
            if let Some(ev) = value.get_mut("evidence") {
                calibrate_evidence(ev, line, "evidence.")?;
            }
            let mut record: NormalTrainingRecord = decode(line, value)?;
            finish_evidence(&mut record.evidence, vocab, line, "evidence.")?;
            let mismatch = |message: String| Err(IngestError::VocabMismatch { line, message });
            if record.scene_label >= vocab.num_scenes() {
                return mismatch(format!("scene_label {} not in vocabulary", record.scene_label));
            }
            if record.object_annotations.len() != record.evidence.objects.len() {
                return mismatch(format!(
                    "{} object annotations for {} objects",
                    record.object_annotations.len(),
                    record.evidence.objects.len()
                ));
            }
            if let Some(a) = record
                .object_annotations
                .iter()
                .find(|a| a.object_label >= vocab.num_objects())
            {
                return mismatch(format!("object_label {} not in vocabulary", a.object_label));
            }
            Ok(record)
        })
        .collect()
}
