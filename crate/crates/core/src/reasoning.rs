//! Turning raw surprise scores into comparable probabilities.
//!
//! For each reason an inverse-Gaussian prior is fitted to the scores of normal
//! images. Its CDF maps a raw score onto [0, 1]; the largest of the three values
//! decides abnormality, and its index names the dominant reason.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    select_family, AicEntry, ContinuousDistribution, DistributionError, Family, InverseGaussianParams,
};
use crate::surprise::SurpriseTriple;

pub const MIN_PRIOR_SAMPLES: usize = 30;
pub const DEFAULT_SHIFT_EPSILON: f64 = 1e-3;
pub const DEFAULT_THRESHOLD: f64 = 0.95;

/// AIC margin beyond which a better-fitting family is logged.
const AIC_WARN_MARGIN: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("need at least {MIN_PRIOR_SAMPLES} normal score triples, got {0}")]
    InsufficientData(usize),
    #[error("{reason} scores are degenerate: {source}")]
    DegenerateSample {
        reason: Reason,
        #[source]
        source: DistributionError,
    },
    #[error("decision threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// The three abnormality reasons, in tie-break priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Object,
    Context,
    Scene,
}

impl Reason {
    pub const ALL: [Reason; 3] = [Reason::Object, Reason::Context, Reason::Scene];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Reason::Object => "object",
            Reason::Context => "context",
            Reason::Scene => "scene",
        }
    }

    pub fn raw(self, triple: &SurpriseTriple) -> f64 {
        match self {
            Reason::Object => triple.object,
            Reason::Context => triple.context,
            Reason::Scene => triple.scene,
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "object" | "object-centric" => Ok(Reason::Object),
            "context" | "context-centric" => Ok(Reason::Context),
            "scene" | "scene-centric" => Ok(Reason::Scene),
            _ => Err(format!("unknown reason {s:?} (expected object|context|scene)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonPrior {
    /// Added to raw scores before the CDF; moves the normal population onto (0, ∞).
    pub shift: f64,
    pub prior: InverseGaussianParams,
    /// AIC of every candidate family on the shifted normal scores.
    pub aic_report: Vec<AicEntry>,
}

impl ReasonPrior {
    pub fn fit(reason: Reason, scores: &[f64], epsilon: f64) -> Result<Self, ReasoningError> {
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = if min <= 0.0 { -min + epsilon } else { 0.0 };
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let prior = InverseGaussianParams::fit(&shifted)
            .map_err(|source| ReasoningError::DegenerateSample { reason, source })?;
        let aic_report = match select_family(&shifted, &Family::ALL) {
            Ok(sel) => {
                let ig_aic = sel
                    .table
                    .iter()
                    .find(|e| e.family == Family::InverseGaussian)
                    .and_then(|e| e.aic);
                if let (Some(ig), Some(best)) = (ig_aic, sel.table.iter().filter_map(|e| e.aic).reduce(f64::min)) {
                    if ig - best > AIC_WARN_MARGIN {
                        log::warn!(
                            "{reason} scores: {} fits better than inverse-Gaussian by {:.1} AIC",
                            sel.family(),
                            ig - best
                        );
                    }
                }
                sel.table
            }
            Err(_) => Vec::new(),
        };
        Ok(Self {
            shift,
            prior,
            aic_report,
        })
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        self.prior.cdf(raw + self.shift)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningModel {
    pub object: ReasonPrior,
    pub context: ReasonPrior,
    pub scene: ReasonPrior,
    pub decision_threshold: f64,
}

impl ReasoningModel {
    pub fn prior(&self, reason: Reason) -> &ReasonPrior {
        match reason {
            Reason::Object => &self.object,
            Reason::Context => &self.context,
            Reason::Scene => &self.scene,
        }
    }
}

/// Fits one inverse-Gaussian prior per reason to normal-image scores.
pub fn fit_surprise_priors(
    normal: &[SurpriseTriple],
    decision_threshold: f64,
    shift_epsilon: f64,
) -> Result<ReasoningModel, ReasoningError> {
    if !(decision_threshold > 0.0 && decision_threshold < 1.0) {
        return Err(ReasoningError::InvalidThreshold(decision_threshold));
    }
    if normal.len() < MIN_PRIOR_SAMPLES {
        return Err(ReasoningError::InsufficientData(normal.len()));
    }
    let fit = |reason: Reason| {
        let scores: Vec<f64> = normal.iter().map(|t| reason.raw(t)).collect();
        ReasonPrior::fit(reason, &scores, shift_epsilon)
    };
    Ok(ReasoningModel {
        object: fit(Reason::Object)?,
        context: fit(Reason::Context)?,
        scene: fit(Reason::Scene)?,
        decision_threshold,
    })
}

/// CDF-normalized scores, indexed by [`Reason::index`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScores {
    pub object: f64,
    pub context: f64,
    pub scene: f64,
}

impl NormalizedScores {
    pub fn new(object: f64, context: f64, scene: f64) -> Self {
        Self { object, context, scene }
    }

    pub fn get(&self, reason: Reason) -> f64 {
        match reason {
            Reason::Object => self.object,
            Reason::Context => self.context,
            Reason::Scene => self.scene,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.object, self.context, self.scene]
    }

    /// Largest score; ties resolve object > context > scene.
    pub fn argmax(&self) -> Reason {
        let mut best = Reason::Object;
        for r in [Reason::Context, Reason::Scene] {
            if self.get(r) > self.get(best) {
                best = r;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.object.max(self.context).max(self.scene)
    }
}

pub fn normalized_scores(triple: &SurpriseTriple, model: &ReasoningModel) -> NormalizedScores {
    NormalizedScores {
        object: model.object.normalize(triple.object),
        context: model.context.normalize(triple.context),
        scene: model.scene.normalize(triple.scene),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Abnormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub final_score: f64,
}

/// Abnormal iff the largest normalized score exceeds the threshold.
pub fn classify_normalized(scores: &NormalizedScores, threshold: f64) -> Classification {
    let final_score = scores.max();
    Classification {
        verdict: if final_score > threshold {
            Verdict::Abnormal
        } else {
            Verdict::Normal
        },
        final_score,
    }
}

pub fn classify_abnormality(triple: &SurpriseTriple, model: &ReasoningModel) -> Classification {
    classify_normalized(&normalized_scores(triple, model), model.decision_threshold)
}

pub fn reason_argmax(triple: &SurpriseTriple, model: &ReasoningModel) -> Reason {
    normalized_scores(triple, model).argmax()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub normalized: NormalizedScores,
}

/// Images in descending order of one reason's normalized score; equal scores
/// keep their input order.
pub fn rank_by_reason(images: &[ScoredImage], reason: Reason) -> Vec<&ScoredImage> {
    let mut out: Vec<&ScoredImage> = images.iter().collect();
    out.sort_by(|a, b| b.normalized.get(reason).total_cmp(&a.normalized.get(reason)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution as _;

    fn triples(xs: &[f64]) -> Vec<SurpriseTriple> {
        xs.iter()
            .map(|&x| SurpriseTriple {
                object: x,
                context: x + 1.0,
                scene: 2.0 * x,
            })
            .collect()
    }

    fn spread(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn shift_rule() {
        let pos = ReasonPrior::fit(Reason::Object, &spread(40, 0.5, 3.0), 1e-3).unwrap();
        assert_eq!(pos.shift, 0.0);
        let mut xs = spread(39, -1.0, 2.0);
        xs.push(-2.0);
        let neg = ReasonPrior::fit(Reason::Object, &xs, 1e-3).unwrap();
        assert!((neg.shift - 2.001).abs() < 1e-12);
    }

    #[test]
    fn aic_report_covers_all_families() {
        let p = ReasonPrior::fit(Reason::Scene, &spread(50, 0.2, 4.0), 1e-3).unwrap();
        let fams: Vec<Family> = p.aic_report.iter().map(|e| e.family).collect();
        assert_eq!(fams, Family::ALL.to_vec());
        assert!(p.aic_report.iter().all(|e| e.aic.is_some()));
    }

    #[test]
    fn recovers_seeded_inverse_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ig = rand_distr::InverseGaussian::new(1.5, 4.0).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| ig.sample(&mut rng)).collect();
        let p = ReasonPrior::fit(Reason::Context, &xs, 1e-3).unwrap();
        assert_eq!(p.shift, 0.0);
        assert!((p.prior.mean - 1.5).abs() / 1.5 < 0.05);
        assert!((p.prior.shape - 4.0).abs() / 4.0 < 0.05);
    }

    #[test]
    fn precondition_errors() {
        assert_eq!(
            fit_surprise_priors(&triples(&spread(29, 1.0, 2.0)), 0.95, 1e-3),
            Err(ReasoningError::InsufficientData(29))
        );
        assert!(matches!(
            fit_surprise_priors(&triples(&[1.0; 40]), 0.95, 1e-3),
            Err(ReasoningError::DegenerateSample {
                reason: Reason::Object,
                ..
            })
        ));
        assert_eq!(
            fit_surprise_priors(&triples(&spread(40, 1.0, 2.0)), 1.0, 1e-3),
            Err(ReasoningError::InvalidThreshold(1.0))
        );
    }

    #[test]
    fn normalization_limits_and_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ig = rand_distr::InverseGaussian::new(2.0, 6.0).unwrap();
        let mut xs: Vec<f64> = (0..4000).map(|_| ig.sample(&mut rng)).collect();
        let model = fit_surprise_priors(&triples(&xs), 0.95, 1e-3).unwrap();
        xs.sort_by(f64::total_cmp);
        let median = xs[xs.len() / 2];
        let at_median = normalized_scores(&triples(&[median])[0], &model);
        assert!((at_median.object - 0.5).abs() < 0.03, "{at_median:?}");
        let far = normalized_scores(&triples(&[1e9])[0], &model);
        assert!((far.object - 1.0).abs() < 1e-12);
        // score + shift ≤ 0 → 0
        let below = normalized_scores(&triples(&[-1.0])[0], &model);
        assert_eq!(below.object, 0.0);
    }

    #[test]
    fn classification_examples() {
        let c = classify_normalized(&NormalizedScores::new(0.9, 0.1, 0.2), 0.95);
        assert_eq!((c.verdict, c.final_score), (Verdict::Normal, 0.9));
        let c = classify_normalized(&NormalizedScores::new(0.99, 0.2, 0.1), 0.95);
        assert_eq!(c.verdict, Verdict::Abnormal);
        let c = classify_normalized(&NormalizedScores::new(0.0, 0.0, 0.0), 0.95);
        assert_eq!((c.verdict, c.final_score), (Verdict::Normal, 0.0));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(NormalizedScores::new(0.9, 0.1, 0.2).argmax(), Reason::Object);
        assert_eq!(NormalizedScores::new(0.5, 0.5, 0.1).argmax(), Reason::Object);
        assert_eq!(NormalizedScores::new(0.1, 0.2, 0.9).argmax(), Reason::Scene);
        assert_eq!(NormalizedScores::new(0.1, 0.7, 0.7).argmax(), Reason::Context);
    }

    #[test]
    fn ranking_examples() {
        let img = |id: &str, o: f64| ScoredImage {
            image_id: id.into(),
            normalized: NormalizedScores::new(o, 0.0, 0.0),
        };
        let imgs = vec![img("1", 0.9), img("2", 0.5), img("3", 0.7)];
        let ids: Vec<&str> = rank_by_reason(&imgs, Reason::Object)
            .iter()
            .map(|s| s.image_id.as_str())
            .collect();
        assert_eq!(ids, ["1", "3", "2"]);
        let ties = vec![img("a", 0.4), img("b", 0.4), img("c", 0.4)];
        let ids: Vec<&str> = rank_by_reason(&ties, Reason::Object)
            .iter()
            .map(|s| s.image_id.as_str())
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(rank_by_reason(&[], Reason::Scene).is_empty());
    }

    #[test]
    fn normalized_scores_are_monotone() {
        let model = fit_surprise_priors(&triples(&spread(60, -3.0, 5.0)), 0.95, 1e-3).unwrap();
        let mut prev = normalized_scores(&triples(&[-10.0])[0], &model);
        for i in 0..400 {
            let x = -10.0 + i as f64 * 0.1;
            let cur = normalized_scores(&triples(&[x])[0], &model);
            for r in Reason::ALL {
                assert!(cur.get(r) >= prev.get(r));
                assert!((0.0..=1.0).contains(&cur.get(r)));
            }
            prev = cur;
        }
    }
}
