use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use atypia::evaluation::{evaluate, run_ablation, AblationReport, GroundTruth, LabeledEvidence};
use atypia::pipeline::{
    load_model, parse_evidence, parse_training, persist_model, rank_all, read_jsonl, reason_all, score_all,
    synth_generate, train_model, write_jsonl, EngineConfig, ModelDocument, PipelineError, ScoreRecord,
};
use atypia::reasoning::Reason;
use atypia::surprise::{ScoringConfig, Variant};
use atypia::taxonomy::{agglomerate, cut_k, group_reasons, AnnotationMatrix, Dendrogram, Linkage};
use atypia::typicality::CategoryVocab;

#[derive(Parser)]
#[command(
    name = "atypia",
    version,
    about = "Abnormal-image scoring from models of typical images"
)]
struct Cli {
    /// Engine configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model document: written by `train`, read by everything downstream.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Location grid size G.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Abnormality decision threshold on the normalized scores.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    ablation: Option<Variant>,
    #[arg(long, global = true)]
    reason: Option<Reason>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a planted model.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the typicality model and surprise priors on normal images.
    Train {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        records: PathBuf,
    },
    /// Raw surprise scores for test evidence.
    Score {
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalized scores, verdict and dominant reason per image.
    Reason {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Images ordered by one reason's normalized score (needs --reason).
    Rank {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster an annotation table and group its reasons.
    Taxonomy {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value = "ward")]
        linkage: Linkage,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluation report for scored images against ground truth.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Test evidence; when given, the ablation table is included.
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

/// Output files are written to temporaries and moved into place; on failure
/// everything already placed is removed again.
#[derive(Default)]
struct Outputs {
    placed: Vec<PathBuf>,
}

impl Outputs {
    fn write(
        &mut self,
        path: &Path,
        f: impl FnOnce(&mut dyn Write) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(path, e))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            f(&mut w)?;
            w.flush().map_err(|e| PipelineError::io(path, e))?;
        }
        tmp.persist(path).map_err(|e| PipelineError::io(path, e.error))?;
        self.placed.push(path.to_path_buf());
        Ok(())
    }

    /// Writes to `path`, or to stdout when there is none.
    fn emit(
        &mut self,
        path: Option<&Path>,
        f: impl FnOnce(&mut dyn Write) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        match path {
            Some(p) => self.write(p, f),
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                f(&mut lock)?;
                lock.flush().map_err(|e| PipelineError::io(Path::new("<stdout>"), e))
            }
        }
    }

    fn rollback(&mut self) {
        for p in self.placed.drain(..).rev() {
            let _ = std::fs::remove_file(&p);
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::io(path, e)
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn jsonl<T: Serialize>(items: &[T]) -> impl FnOnce(&mut dyn Write) -> Result<(), PipelineError> + '_ {
    move |w| write_jsonl(w, items).map_err(|e| PipelineError::Internal(e.to_string()))
}

fn json<T: Serialize>(value: &T) -> impl FnOnce(&mut dyn Write) -> Result<(), PipelineError> + '_ {
    move |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| PipelineError::Internal(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| PipelineError::Internal(e.to_string()))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let reader = open(path)?;
    let mut de = serde_json::Deserializer::from_reader(reader);
    serde_path_to_error::deserialize(&mut de).map_err(|e| PipelineError::Config(format!("{}: {}", path.display(), e)))
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    Ok(read_jsonl(open(path)?)?)
}

impl Cli {
    fn engine_config(&self) -> Result<EngineConfig, PipelineError> {
        let mut config = match &self.config {
            Some(p) => EngineConfig::load(p)?,
            None => EngineConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = Some(s);
        }
        if let Some(g) = self.grid {
            config.grid_size = g;
        }
        if let Some(t) = self.threshold {
            config.decision_threshold = t;
        }
        if let Some(v) = self.ablation {
            config.ablation = v.ablation();
        }
        config.validate()?;
        Ok(config)
    }

    fn load_model(&self) -> Result<ModelDocument, PipelineError> {
        let path = self
            .model
            .as_deref()
            .ok_or_else(|| PipelineError::MissingModel("no --model given".into()))?;
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::MissingModel(path.display().to_string()),
            _ => PipelineError::io(path, e),
        })?;
        load_model(BufReader::new(file))
    }

    /// Scoring settings: the model's own unless --ablation overrides them.
    fn scoring(&self, model: &ModelDocument) -> ScoringConfig {
        match self.ablation {
            Some(v) => ScoringConfig {
                ablation: v.ablation(),
                ..model.scoring
            },
            None => model.scoring,
        }
    }

    fn threshold(&self, model: &ModelDocument) -> f64 {
        self.threshold.unwrap_or(model.reasoning.decision_threshold)
    }

    fn run(&self, out: &mut Outputs) -> Result<(), PipelineError> {
        match &self.command {
            Command::Synth { out: dir } => {
                let config = self.engine_config()?;
                let seed = config.require_seed()?;
                let data = synth_generate(&config.synthetic, seed)?;
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
                log::info!(
                    "synthetic set: {} training, {} test images",
                    data.training.len(),
                    data.test.len()
                );
                out.write(&dir.join("vocab.json"), json(&data.planted.vocab))?;
                out.write(&dir.join("planted.json"), json(&data.planted))?;
                out.write(&dir.join("train.jsonl"), jsonl(&data.training))?;
                out.write(&dir.join("test.jsonl"), jsonl(&data.test))?;
                out.write(&dir.join("labels.jsonl"), jsonl(&data.truth))?;
                out.write(&dir.join("annotations.csv"), |w| Ok(data.annotations.write_csv(w)?))
            }
            Command::Train { vocab, records } => {
                let config = self.engine_config()?;
                let path = self
                    .model
                    .as_deref()
                    .ok_or_else(|| PipelineError::Config("train needs --model <path> for its output".into()))?;
                let vocab: CategoryVocab = read_json(vocab)?;
                let records = parse_training(open(records)?, &vocab)?;
                log::info!("training on {} normal images", records.len());
                let doc = train_model(&records, &vocab, &config)?;
                out.write(path, |w| persist_model(&doc, w))
            }
            Command::Score { evidence, out: dest } => {
                let model = self.load_model()?;
                let evidence = parse_evidence(open(evidence)?, &model.typicality.vocab)?;
                let scores = score_all(&evidence, &model, &self.scoring(&model))?;
                out.emit(dest.as_deref(), jsonl(&scores))
            }
            Command::Reason { scores, out: dest } => {
                let model = self.load_model()?;
                let scores: Vec<ScoreRecord> = read_lines(scores)?;
                let records = reason_all(&scores, &model, self.threshold(&model));
                out.emit(dest.as_deref(), jsonl(&records))
            }
            Command::Rank { scores, out: dest } => {
                let reason = self
                    .reason
                    .ok_or_else(|| PipelineError::Config("rank needs --reason".into()))?;
                let model = self.load_model()?;
                let scores: Vec<ScoreRecord> = read_lines(scores)?;
                out.emit(dest.as_deref(), jsonl(&rank_all(&scores, &model, reason)))
            }
            Command::Taxonomy {
                annotations,
                k,
                linkage,
                out: dest,
            } => {
                let matrix = AnnotationMatrix::read_csv(open(annotations)?)?;
                let dendrogram = agglomerate(&matrix.values, *linkage)?;
                let clusters = cut_k(&dendrogram, *k)?;
                let groups = group_reasons(&matrix, &clusters);
                let report = TaxonomyReport::new(&matrix, *linkage, dendrogram, clusters, groups);
                out.emit(dest.as_deref(), json(&report))
            }
            Command::Eval {
                scores,
                labels,
                evidence,
                out: dest,
            } => {
                let model = self.load_model()?;
                let scores: Vec<ScoreRecord> = read_lines(scores)?;
                let truth: Vec<GroundTruth> = read_lines(labels)?;
                let threshold = self.threshold(&model);
                let scored: Vec<_> = reason_all(&scores, &model, threshold)
                    .into_iter()
                    .map(|r| (r.image_id, r.normalized))
                    .collect();
                let mut report = evaluate(&scored, &truth, threshold)?;
                if let Some(path) = evidence {
                    let evidence = parse_evidence(open(path)?, &model.typicality.vocab)?;
                    let by_id: std::collections::HashMap<&str, Option<Reason>> =
                        truth.iter().map(|t| (t.image_id.as_str(), t.reason)).collect();
                    let labeled = evidence
                        .into_iter()
                        .map(|e| match by_id.get(e.image_id.as_str()) {
                            Some(&reason) => Ok(LabeledEvidence { evidence: e, reason }),
                            None => Err(PipelineError::Evaluation(
                                atypia::evaluation::EvaluationError::MissingLabel(e.image_id),
                            )),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let table = run_ablation(&labeled, &model.typicality, &Variant::ALL, model.scoring.clamp_max)?;
                    report.ablation = Some(AblationReport::from(&table));
                }
                out.emit(dest.as_deref(), json(&report))
            }
        }
    }
}

#[derive(Serialize)]
struct TaxonomyReport {
    linkage: Linkage,
    dendrogram: Dendrogram,
    clusters: Vec<Assignment>,
    reason_groups: Vec<Assignment>,
}

#[derive(Serialize)]
struct Assignment {
    id: String,
    cluster: usize,
}

impl TaxonomyReport {
    fn new(
        m: &AnnotationMatrix,
        linkage: Linkage,
        dendrogram: Dendrogram,
        clusters: Vec<usize>,
        groups: Vec<usize>,
    ) -> Self {
        let zip = |ids: &[String], c: Vec<usize>| {
            ids.iter()
                .zip(c)
                .map(|(id, cluster)| Assignment {
                    id: id.clone(),
                    cluster,
                })
                .collect()
        };
        Self {
            linkage,
            dendrogram,
            clusters: zip(&m.image_ids, clusters),
            reason_groups: zip(&m.reason_names, groups),
        }
    }
}

fn report_error(kind: &str, message: String, exit_code: i32) -> ExitCode {
    let record = ErrorRecord {
        error: kind,
        message,
        exit_code,
    };
    eprintln!("{}", serde_json::to_string(&record).unwrap_or_default());
    ExitCode::from(exit_code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATYPIA_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_error("Usage", e.to_string().trim_end().to_string(), 2),
    };
    let mut outputs = Outputs::default();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| cli.run(&mut outputs)));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            outputs.rollback();
            report_error(e.kind(), e.to_string(), e.class().exit_code())
        }
        Err(panic) => {
            outputs.rollback();
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            report_error("Internal", message, 4)
        }
    }
}
