//! Ingestion, persistence, the synthetic generator and the train/score driver
//! behind the command line tool.

mod config;
mod document;
mod ingest;
mod synth;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::EngineConfig;
pub use document::{load_model, persist_model, ModelDocument, SCHEMA_VERSION};
pub use ingest::{parse_evidence, parse_training, read_jsonl, write_jsonl, IngestError, RENORMALIZE_TOL};
pub use synth::{
    planted_annotation_matrix, simulated_responses, synth_generate, PlantedModel, SyntheticDataset, SyntheticSpec,
};

use crate::evaluation::EvaluationError;
use crate::reasoning::{
    classify_normalized, fit_surprise_priors, normalized_scores, Classification, NormalizedScores, Reason,
    ReasoningError, ScoredImage, MIN_PRIOR_SAMPLES,
};
use crate::surprise::{score, ScoringConfig, SurpriseError, SurpriseTriple};
use crate::taxonomy::TaxonomyError;
use crate::typicality::{is_holdout, train, CategoryVocab, ImageEvidence, NormalTrainingRecord, TypicalityError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("a seed is required (use --seed or `seed` in the config)")]
    MissingSeed,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("model document not found: {0}")]
    MissingModel(String),
    #[error("unsupported schema_version {0:?}")]
    UnsupportedVersion(String),
    #[error("corrupt model document: {0}")]
    CorruptDocument(String),
    #[error(transparent)]
    Training(#[from] TypicalityError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("image {image_id}: {source}")]
    Scoring {
        image_id: String,
        #[source]
        source: SurpriseError,
    },
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Broad failure class, mapped onto the process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Model,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Input => 2,
            ErrorClass::Model => 3,
            ErrorClass::Internal => 4,
        }
    }
}

impl PipelineError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use PipelineError::*;
        match self {
            Io { .. } | Config(_) | MissingSeed | Ingest(_) | Scoring { .. } | Evaluation(_) | Taxonomy(_) => {
                ErrorClass::Input
            }
            Training(TypicalityError::InsufficientData(_)) => ErrorClass::Model,
            Training(_) => ErrorClass::Input,
            MissingModel(_) | UnsupportedVersion(_) | CorruptDocument(_) | Reasoning(_) => ErrorClass::Model,
            Internal(_) => ErrorClass::Internal,
        }
    }

    /// Stable machine-readable name of the failure.
    pub fn kind(&self) -> &'static str {
        use PipelineError::*;
        match self {
            Io { .. } => "Io",
            Config(_) => "Config",
            MissingSeed => "MissingSeed",
            Ingest(IngestError::Io { .. }) => "Io",
            Ingest(IngestError::Parse { .. }) => "ParseError",
            Ingest(IngestError::SimplexViolation { .. }) => "SimplexViolation",
            Ingest(IngestError::VocabMismatch { .. }) => "VocabMismatch",
            MissingModel(_) => "MissingModel",
            UnsupportedVersion(_) => "UnsupportedVersion",
            CorruptDocument(_) => "CorruptDocument",
            Training(TypicalityError::InsufficientData(_)) => "InsufficientData",
            Training(TypicalityError::VocabMismatch(_)) => "VocabMismatch",
            Training(_) => "InvalidTrainingData",
            Reasoning(ReasoningError::InsufficientData(_)) => "InsufficientData",
            Reasoning(ReasoningError::DegenerateSample { .. }) => "DegenerateSample",
            Reasoning(ReasoningError::InvalidThreshold(_)) => "InvalidThreshold",
            Scoring { .. } => "DimensionMismatch",
            Evaluation(EvaluationError::SingleClassSample { .. }) => "SingleClassSample",
            Evaluation(EvaluationError::MissingLabel(_)) => "MissingLabel",
            Evaluation(_) => "EvaluationError",
            Taxonomy(_) => "TaxonomyError",
            Internal(_) => "Internal",
        }
    }
}

/// One line of `score` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub surprise_object: f64,
    pub surprise_context: f64,
    pub surprise_scene: f64,
}

impl ScoreRecord {
    pub fn new(image_id: String, t: SurpriseTriple) -> Self {
        Self {
            image_id,
            surprise_object: t.object,
            surprise_context: t.context,
            surprise_scene: t.scene,
        }
    }

    pub fn triple(&self) -> SurpriseTriple {
        SurpriseTriple {
            object: self.surprise_object,
            context: self.surprise_context,
            scene: self.surprise_scene,
        }
    }
}

/// One line of `reason` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonRecord {
    pub image_id: String,
    pub normalized: NormalizedScores,
    pub reason: Reason,
    #[serde(flatten)]
    pub classification: Classification,
}

/// One line of `rank` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub rank: usize,
    pub image_id: String,
    pub score: f64,
}

/// Raw scores for every image, in input order.
pub fn score_all(
    evidence: &[ImageEvidence],
    model: &ModelDocument,
    scoring: &ScoringConfig,
) -> Result<Vec<ScoreRecord>, PipelineError> {
    evidence
        .par_iter()
        .map(|e| {
            score(e, &model.typicality, scoring)
                .map(|t| ScoreRecord::new(e.image_id.clone(), t))
                .map_err(|source| PipelineError::Scoring {
                    image_id: e.image_id.clone(),
                    source,
                })
        })
        .collect()
}

/// Fits the typicality model, then the surprise priors on the scores of the
/// hold-out records, which the conditionals never saw. Falls back to all
/// records when the hold-out slice is too small.
pub fn train_model(
    records: &[NormalTrainingRecord],
    vocab: &CategoryVocab,
    config: &EngineConfig,
) -> Result<ModelDocument, PipelineError> {
    config.validate()?;
    let training = config.training();
    let scoring = config.scoring();
    let typicality = train(records, vocab, &training)?;
    let mut prior_set: Vec<&ImageEvidence> = records
        .iter()
        .filter(|r| is_holdout(&r.evidence.image_id, training.holdout_fraction))
        .map(|r| &r.evidence)
        .collect();
    if prior_set.len() < MIN_PRIOR_SAMPLES {
        log::warn!(
            "only {} hold-out records; fitting priors on all {} records",
            prior_set.len(),
            records.len()
        );
        prior_set = records.iter().map(|r| &r.evidence).collect();
    }
    let triples: Vec<SurpriseTriple> = prior_set
        .par_iter()
        .map(|e| {
            score(e, &typicality, &scoring).map_err(|source| PipelineError::Scoring {
                image_id: e.image_id.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    log::info!("fitting surprise priors on {} normal images", triples.len());
    let reasoning = fit_surprise_priors(&triples, config.decision_threshold, config.shift_epsilon)?;
    Ok(ModelDocument::new(training, scoring, typicality, reasoning))
}

/// Normalized scores and decision for each score record.
pub fn reason_all(scores: &[ScoreRecord], model: &ModelDocument, threshold: f64) -> Vec<ReasonRecord> {
    scores
        .iter()
        .map(|s| {
            let normalized = normalized_scores(&s.triple(), &model.reasoning);
            ReasonRecord {
                image_id: s.image_id.clone(),
                normalized,
                reason: normalized.argmax(),
                classification: classify_normalized(&normalized, threshold),
            }
        })
        .collect()
}

/// Images ordered by one reason's normalized score, highest first.
pub fn rank_all(scores: &[ScoreRecord], model: &ModelDocument, reason: Reason) -> Vec<RankRecord> {
    let scored: Vec<ScoredImage> = scores
        .iter()
        .map(|s| ScoredImage {
            image_id: s.image_id.clone(),
            normalized: normalized_scores(&s.triple(), &model.reasoning),
        })
        .collect();
    crate::reasoning::rank_by_reason(&scored, reason)
        .into_iter()
        .enumerate()
        .map(|(i, s)| RankRecord {
            rank: i + 1,
            image_id: s.image_id.clone(),
            score: s.normalized.get(reason),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EngineConfig {
        EngineConfig {
            synthetic: SyntheticSpec {
                normal_train: 300,
                normal_test: 20,
                abnormal_per_reason: 5,
                ..SyntheticSpec::default()
            },
            ..EngineConfig::default()
        }
    }

    #[test]
    fn model_document_round_trips_exactly() {
        let config = small_config();
        let data = synth_generate(&config.synthetic, 21).unwrap();
        let doc = train_model(&data.training, &data.planted.vocab, &config).unwrap();
        let mut buf = Vec::new();
        persist_model(&doc, &mut buf).unwrap();
        let back = load_model(&buf[..]).unwrap();
        assert_eq!(back, doc);
        let truncated = &buf[..buf.len() / 2];
        assert!(matches!(load_model(truncated), Err(PipelineError::CorruptDocument(_))));
    }

    #[test]
    fn rank_is_descending() {
        let config = small_config();
        let data = synth_generate(&config.synthetic, 4).unwrap();
        let doc = train_model(&data.training, &data.planted.vocab, &config).unwrap();
        let scores = score_all(&data.test[..3], &doc, &doc.scoring).unwrap();
        let ranked = rank_all(&scores, &doc, Reason::Object);
        assert_eq!(ranked.len(), 3);
        assert!(ranked.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(ranked[0].rank, 1);
    }

    #[test]
    fn error_classes() {
        assert_eq!(PipelineError::MissingModel("m".into()).class().exit_code(), 3);
        assert_eq!(PipelineError::MissingModel("m".into()).kind(), "MissingModel");
        assert_eq!(PipelineError::MissingSeed.class().exit_code(), 2);
        assert_eq!(PipelineError::Internal("x".into()).class().exit_code(), 4);
    }
}
