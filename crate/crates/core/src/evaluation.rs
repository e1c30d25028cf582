//! Metrics: abnormality AUC, reason KL-divergence, confusion matrices, the
//! variant ablation table and the evaluation report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoning::{classify_normalized, NormalizedScores, Reason, Verdict};
use crate::surprise::{score, ScoringConfig, SurpriseError, Variant};
use crate::typicality::{ImageEvidence, TypicalityModel};

/// Floor applied to predicted reason scores before renormalizing.
pub const REASON_SCORE_FLOOR: f64 = 1e-6;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("AUC needs both classes, got {positives} positive / {negatives} negative")]
    SingleClassSample { positives: usize, negatives: usize },
    #[error("invalid simplex: {0}")]
    InvalidSimplex(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("image {0:?} has no ground-truth label")]
    MissingLabel(String),
    #[error("duplicate image id {0:?}")]
    DuplicateImage(String),
    #[error(transparent)]
    Surprise(#[from] SurpriseError),
}

type Result<T> = std::result::Result<T, EvaluationError>;

/// Probability that a random positive outranks a random negative, ties ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| s.is_nan()) {
        return Err(EvaluationError::NonFiniteScore(s));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvaluationError::SingleClassSample { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Counted in half-units so the sum is an exact integer.
    let mut half_wins: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        let group_neg = (end - start) as u64 - group_pos;
        half_wins += 2 * group_pos * negatives_below + group_pos * group_neg;
        negatives_below += group_neg;
        start = end;
    }
    Ok(half_wins as f64 / (2 * positives * negatives) as f64)
}

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(EvaluationError::InvalidSimplex(format!("{name} has entry {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(EvaluationError::InvalidSimplex(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Σ p_i ln(p_i / q_i) in nats, with 0·ln(0/q) = 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(EvaluationError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    check_simplex("p", p)?;
    check_simplex("q", q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Predicted reason distribution: the normalized scores floored at
/// [`REASON_SCORE_FLOOR`] and rescaled to sum to 1.
pub fn to_reason_simplex(scores: &NormalizedScores) -> [f64; 3] {
    let floored = scores.as_array().map(|s| s.max(REASON_SCORE_FLOOR));
    let sum: f64 = floored.iter().sum();
    floored.map(|s| s / sum)
}

/// Mean response per reason group, normalized to a simplex. Rows with no
/// response in any group map to the uniform distribution.
pub fn ground_truth_reason_scores(row: &[f64], grouping: &[Reason]) -> [f64; 3] {
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (&v, &g) in row.iter().zip(grouping) {
        sums[g.index()] += v;
        counts[g.index()] += 1;
    }
    let means: [f64; 3] = std::array::from_fn(|i| {
        if counts[i] == 0 {
            0.0
        } else {
            sums[i] / counts[i] as f64
        }
    });
    let total: f64 = means.iter().sum();
    if total <= 0.0 {
        [1.0 / 3.0; 3]
    } else {
        means.map(|m| m / total)
    }
}

/// 3×3 counts, rows = predicted reason, columns = true reason.
pub fn confusion_matrix(predicted: &[Reason], truth: &[Reason]) -> Result<[[usize; 3]; 3]> {
    if predicted.len() != truth.len() {
        return Err(EvaluationError::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let mut m = [[0; 3]; 3];
    for (p, t) in predicted.iter().zip(truth) {
        m[p.index()][t.index()] += 1;
    }
    Ok(m)
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvaluationError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len());
    let expected = if total == 0.0 { 0.0 } else { sum_rows * sum_cols / total };
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // both labelings trivial (all singletons or a single cluster)
        return Ok(if sum_rows == sum_cols { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Ground truth for one test image: `reason` is `None` for normal images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub reason: Option<Reason>,
    /// Grouped human responses (object, context, scene) as a simplex.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_scores: Option<[f64; 3]>,
}

/// One test image with its ablation label.
#[derive(Clone, Debug)]
pub struct LabeledEvidence {
    pub evidence: ImageEvidence,
    pub reason: Option<Reason>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub reason: Reason,
    /// One AUC per requested variant, same order.
    pub auc: Result<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub variants: Vec<Variant>,
    pub rows: Vec<AblationRow>,
}

/// Per (reason, variant) AUC of the raw reason score. A reason's positives are
/// its abnormal images; all other images, normal or not, are negatives.
pub fn run_ablation(
    dataset: &[LabeledEvidence],
    model: &TypicalityModel,
    variants: &[Variant],
    clamp_max: f64,
) -> Result<AblationTable> {
    let per_variant: Vec<Vec<[f64; 3]>> = variants
        .iter()
        .map(|v| {
            let config = ScoringConfig {
                ablation: v.ablation(),
                clamp_max,
            };
            dataset
                .par_iter()
                .map(|item| score(&item.evidence, model, &config).map(|t| [t.object, t.context, t.scene]))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, _>>()?;

    let rows = Reason::ALL
        .iter()
        .map(|&reason| {
            let labels: Vec<bool> = dataset.iter().map(|d| d.reason == Some(reason)).collect();
            let auc = per_variant
                .iter()
                .map(|scores| {
                    let s: Vec<f64> = scores.iter().map(|t| t[reason.index()]).collect();
                    auc(&s, &labels)
                })
                .collect();
            AblationRow { reason, auc }
        })
        .collect();
    Ok(AblationTable {
        variants: variants.to_vec(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRowReport {
    pub reason: Reason,
    pub auc: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<Variant>,
    pub rows: Vec<AblationRowReport>,
}

impl From<&AblationTable> for AblationReport {
    fn from(t: &AblationTable) -> Self {
        Self {
            variants: t.variants.clone(),
            rows: t
                .rows
                .iter()
                .map(|r| AblationRowReport {
                    reason: r.reason,
                    auc: r.auc.as_ref().ok().cloned(),
                    error: r.auc.as_ref().err().map(|e| e.to_string()),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonAuc {
    pub reason: Reason,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlSummary {
    pub images: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub images: usize,
    pub normal: usize,
    pub abnormal: usize,
    pub threshold: f64,
    /// AUC of the final (largest normalized) score, abnormal vs normal.
    pub abnormality_auc: Option<f64>,
    pub detection: DetectionCounts,
    /// Per reason: its abnormal images against everything else.
    pub reason_auc: Vec<ReasonAuc>,
    /// Share of abnormal images whose dominant reason is the true one.
    pub reason_accuracy: Option<f64>,
    /// Rows = predicted reason, columns = true reason, abnormal images only.
    pub confusion: [[usize; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_divergence: Option<KlSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationReport>,
}

/// Evaluates normalized scores against ground truth. Every scored image must
/// have a label; labels for unscored images are ignored.
pub fn evaluate(
    scored: &[(String, NormalizedScores)],
    truth: &[GroundTruth],
    threshold: f64,
) -> Result<EvaluationReport> {
    let mut by_id: BTreeMap<&str, &GroundTruth> = BTreeMap::new();
    for t in truth {
        if by_id.insert(&t.image_id, t).is_some() {
            return Err(EvaluationError::DuplicateImage(t.image_id.clone()));
        }
    }
    let labels: Vec<&GroundTruth> = scored
        .iter()
        .map(|(id, _)| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| EvaluationError::MissingLabel(id.clone()))
        })
        .collect::<Result<_>>()?;

    let finals: Vec<f64> = scored.iter().map(|(_, s)| s.max()).collect();
    let is_abnormal: Vec<bool> = labels.iter().map(|t| t.reason.is_some()).collect();
    let abnormal = is_abnormal.iter().filter(|&&a| a).count();

    let mut detection = DetectionCounts {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
    };
    for ((_, s), &truly) in scored.iter().zip(&is_abnormal) {
        let flagged = classify_normalized(s, threshold).verdict == Verdict::Abnormal;
        match (flagged, truly) {
            (true, true) => detection.true_positive += 1,
            (true, false) => detection.false_positive += 1,
            (false, false) => detection.true_negative += 1,
            (false, true) => detection.false_negative += 1,
        }
    }

    let reason_auc = Reason::ALL
        .iter()
        .map(|&r| {
            let s: Vec<f64> = scored.iter().map(|(_, n)| n.get(r)).collect();
            let l: Vec<bool> = labels.iter().map(|t| t.reason == Some(r)).collect();
            ReasonAuc {
                reason: r,
                auc: auc(&s, &l).ok(),
            }
        })
        .collect();

    let (predicted, actual): (Vec<Reason>, Vec<Reason>) = scored
        .iter()
        .zip(&labels)
        .filter_map(|((_, s), t)| t.reason.map(|r| (s.argmax(), r)))
        .unzip();
    let confusion = confusion_matrix(&predicted, &actual)?;
    let reason_accuracy = (!predicted.is_empty())
        .then(|| predicted.iter().zip(&actual).filter(|(p, a)| p == a).count() as f64 / predicted.len() as f64);

    let kls: Vec<f64> = scored
        .iter()
        .zip(&labels)
        .filter_map(|((_, s), t)| t.reason_scores.map(|gt| (s, gt)))
        .map(|(s, gt)| kl_divergence(&gt, &to_reason_simplex(s)))
        .collect::<Result<_>>()?;
    let kl_divergence = (!kls.is_empty()).then(|| KlSummary {
        images: kls.len(),
        mean: kls.iter().sum::<f64>() / kls.len() as f64,
    });

    Ok(EvaluationReport {
        images: scored.len(),
        normal: scored.len() - abnormal,
        abnormal,
        threshold,
        abnormality_auc: auc(&finals, &is_abnormal).ok(),
        detection,
        reason_auc,
        reason_accuracy,
        confusion,
        kl_divergence,
        ablation: None,
    })
}

impl EvaluationReport {
    /// Flat `(metric, value)` pairs for the delimited summary. Missing values
    /// are written as empty strings.
    pub fn summary_rows(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut rows = vec![
            ("images".to_string(), self.images.to_string()),
            ("normal".into(), self.normal.to_string()),
            ("abnormal".into(), self.abnormal.to_string()),
            ("threshold".into(), self.threshold.to_string()),
            ("abnormality_auc".into(), opt(self.abnormality_auc)),
            ("true_positive".into(), self.detection.true_positive.to_string()),
            ("false_positive".into(), self.detection.false_positive.to_string()),
            ("true_negative".into(), self.detection.true_negative.to_string()),
            ("false_negative".into(), self.detection.false_negative.to_string()),
        ];
        for r in &self.reason_auc {
            rows.push((format!("auc_{}", r.reason.name()), opt(r.auc)));
        }
        rows.push(("reason_accuracy".into(), opt(self.reason_accuracy)));
        for p in Reason::ALL {
            for t in Reason::ALL {
                rows.push((
                    format!("confusion_{}_{}", p.name(), t.name()),
                    self.confusion[p.index()][t.index()].to_string(),
                ));
            }
        }
        if let Some(kl) = &self.kl_divergence {
            rows.push(("kl_mean".into(), kl.mean.to_string()));
        }
        if let Some(ab) = &self.ablation {
            for row in &ab.rows {
                for (i, v) in ab.variants.iter().enumerate() {
                    let value = row.auc.as_ref().map(|a| a[i]);
                    rows.push((format!("ablation_{}_{}", row.reason.name(), v.name()), opt(value)));
                }
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::default_grouping;

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4, 0.5, 0.1], &[true, true, false, false]).unwrap(), 0.75);
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(EvaluationError::SingleClassSample {
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn kl_cases() {
        let third = 1.0 / 3.0;
        let kl = kl_divergence(&[0.5, 0.25, 0.25], &[third; 3]).unwrap();
        assert!((kl - 0.05889).abs() < 1e-4);
        assert!((kl - (3f64.ln() - 1.5 * 2f64.ln())).abs() < 1e-12);
        assert_eq!(kl_divergence(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[1.0, 0.0, 0.0], &[0.5, 0.25, 0.25]).unwrap(), 2f64.ln());
        assert!(matches!(
            kl_divergence(&[0.5, 0.5, 0.5], &[third; 3]),
            Err(EvaluationError::InvalidSimplex(_))
        ));
        assert!(matches!(
            kl_divergence(&[1.2, -0.2, 0.0], &[third; 3]),
            Err(EvaluationError::InvalidSimplex(_))
        ));
    }

    #[test]
    fn ground_truth_grouping() {
        let g = default_grouping();
        let mut row = vec![0.0; 21];
        row[..15].fill(1.0);
        assert_eq!(ground_truth_reason_scores(&row, &g), [1.0, 0.0, 0.0]);
        assert_eq!(ground_truth_reason_scores(&[0.0; 21], &g), [1.0 / 3.0; 3]);
        let mut mixed = vec![0.5; 15];
        mixed.extend([0.25; 6]);
        let gt = ground_truth_reason_scores(&mixed, &g);
        for (a, b) in gt.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn predicted_simplex_floors_zeros() {
        let p = to_reason_simplex(&NormalizedScores::new(1.0, 0.0, 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[1] > 0.0 && p[1] < 1e-5);
    }

    #[test]
    fn confusion_cases() {
        use Reason::*;
        let m = confusion_matrix(&[Object, Context, Scene], &[Object, Object, Scene]).unwrap();
        assert_eq!(m, [[1, 0, 0], [1, 0, 0], [0, 0, 1]]);
        assert_eq!(confusion_matrix(&[], &[]).unwrap(), [[0; 3]; 3]);
        assert!(matches!(
            confusion_matrix(&[Object], &[]),
            Err(EvaluationError::LengthMismatch { .. })
        ));
        let diag = confusion_matrix(&[Scene, Object], &[Scene, Object]).unwrap();
        assert_eq!(diag, [[1, 0, 0], [0, 0, 0], [0, 0, 1]]);
    }

    #[test]
    fn ari_cases() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap(), 1.0);
        // scikit-learn reference: adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((v - 4.0 / 7.0).abs() < 1e-12);
        assert!(adjusted_rand_index(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap() < 0.0);
    }

    #[test]
    fn evaluate_small_report() {
        let s = |o, c, sc| NormalizedScores::new(o, c, sc);
        let scored = vec![
            ("a".to_string(), s(0.2, 0.3, 0.1)),
            ("b".to_string(), s(0.99, 0.2, 0.3)),
            ("c".to_string(), s(0.1, 0.97, 0.2)),
            ("d".to_string(), s(0.5, 0.4, 0.96)),
        ];
        let gt = |id: &str, r| GroundTruth {
            image_id: id.into(),
            reason: r,
            reason_scores: None,
        };
        let truth = vec![
            gt("d", Some(Reason::Context)),
            gt("a", None),
            gt("b", Some(Reason::Object)),
            gt("c", Some(Reason::Context)),
        ];
        let r = evaluate(&scored, &truth, 0.95).unwrap();
        assert_eq!(r.abnormality_auc, Some(1.0));
        assert_eq!(r.reason_accuracy, Some(2.0 / 3.0));
        assert_eq!(r.confusion[Reason::Scene.index()][Reason::Context.index()], 1);
        assert_eq!(r.detection.true_positive, 3);
        assert_eq!(r.reason_auc[2].auc, None);
        assert!(matches!(
            evaluate(&scored, &truth[1..], 0.95),
            Err(EvaluationError::MissingLabel(id)) if id == "d"
        ));
    }
}
