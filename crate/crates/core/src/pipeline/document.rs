use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::reasoning::ReasoningModel;
use crate::surprise::ScoringConfig;
use crate::typicality::{TrainingConfig, TypicalityModel};

pub const SCHEMA_VERSION: &str = "1.0.0";
const SUPPORTED_MAJOR: u64 = 1;

/// Everything needed to score and reason about new images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: String,
    pub training: TrainingConfig,
    /// Scoring settings the priors were fitted under.
    pub scoring: ScoringConfig,
    pub typicality: TypicalityModel,
    pub reasoning: ReasoningModel,
}

impl ModelDocument {
    pub fn new(
        training: TrainingConfig,
        scoring: ScoringConfig,
        typicality: TypicalityModel,
        reasoning: ReasoningModel,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            training,
            scoring,
            typicality,
            reasoning,
        }
    }
}

pub fn persist_model<W: Write>(doc: &ModelDocument, mut writer: W) -> Result<(), PipelineError> {
    serde_json::to_writer_pretty(&mut writer, doc).map_err(|e| PipelineError::Internal(e.to_string()))?;
    writer
        .write_all(b"\n")
        .and_then(|_| writer.flush())
        .map_err(|e| PipelineError::Internal(e.to_string()))
}

fn major_version(v: &str) -> Option<u64> {
    let mut parts = v.split('.');
    let major = parts.next()?.parse().ok()?;
    let rest: Vec<&str> = parts.collect();
    (rest.len() == 2 && rest.iter().all(|p| p.parse::<u64>().is_ok())).then_some(major)
}

pub fn load_model<R: Read>(mut reader: R) -> Result<ModelDocument, PipelineError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| PipelineError::CorruptDocument(e.to_string()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| PipelineError::CorruptDocument(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(Value::as_str)
        .ok_or_else(|| PipelineError::CorruptDocument("missing schema_version".into()))?;
    if major_version(version) != Some(SUPPORTED_MAJOR) {
        return Err(PipelineError::UnsupportedVersion(version.to_string()));
    }
    let doc: ModelDocument = serde_path_to_error::deserialize(value)
        .map_err(|e| PipelineError::CorruptDocument(format!("{}: {}", e.path(), e.inner())))?;
    check_shapes(&doc).map_err(PipelineError::CorruptDocument)?;
    Ok(doc)
}

fn check_shapes(doc: &ModelDocument) -> Result<(), String> {
    let m = &doc.typicality;
    let v = &m.vocab;
    let (nv, nj, na, ns) = (
        v.num_objects(),
        v.num_scenes(),
        v.num_object_attrs(),
        v.num_scene_attrs(),
    );
    let grid = m.location.grid_size * m.location.grid_size;
    let ok = |rows: &Vec<Vec<_>>, r: usize, c: usize| rows.len() == r && rows.iter().all(|x: &Vec<_>| x.len() == c);
    let checks = [
        (
            "object_attr_cond",
            m.object_attr_cond.len() == nv && m.object_attr_cond.iter().all(|r| r.len() == na),
        ),
        (
            "scene_attr_cond",
            m.scene_attr_cond.len() == nj && m.scene_attr_cond.iter().all(|r| r.len() == ns),
        ),
        ("object_given_scene", ok(&m.object_given_scene, nj, nv)),
        ("scene_relevance", ok(&m.scene_relevance, nj, ns)),
        ("object_relevance", ok(&m.object_relevance, nv, na)),
        ("scene_reliability", m.scene_reliability.len() == ns),
        ("object_reliability", m.object_reliability.len() == na),
        (
            "location",
            m.location.cells.len() == nv && m.location.cells.iter().all(|c| c.len() == grid),
        ),
        ("size", m.size.len() == nv),
        ("scene_prior", m.scene_prior.len() == nj),
    ];
    match checks.iter().find(|(_, good)| !good) {
        Some((name, _)) => Err(format!("typicality.{name} does not match the vocabulary")),
        None => Ok(()),
    }
}
