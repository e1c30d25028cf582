//! Raw surprise scores: expected information content of the evidence under the
//! typicality model, one score per abnormality reason.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{ContinuousDistribution, GammaParams};
use crate::typicality::{cell_ratios, ImageEvidence, ObjectEvidence, TypicalityModel};

/// Cap on the information of a single grid cell, in nats.
pub const DEFAULT_CLAMP_MAX: f64 = 30.0;

/// Quantile used as the size-density normalizer when the gamma density has no
/// interior mode.
const EDGE_MODE_QUANTILE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurpriseError {
    #[error("{field}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurpriseTriple {
    pub object: f64,
    pub context: f64,
    pub scene: f64,
}

/// Which weighting terms enter the scores. A disabled factor becomes 1 and a
/// disabled additive term becomes 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub use_relevance: bool,
    pub use_reliability: bool,
    pub use_location: bool,
    pub use_size_modulation: bool,
}

impl AblationConfig {
    pub const FULL: AblationConfig = AblationConfig {
        use_relevance: true,
        use_reliability: true,
        use_location: true,
        use_size_modulation: true,
    };
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::FULL
    }
}

/// The score variants of the ablation study.
///
/// For the object and scene scores: `Var1` keeps only the information terms,
/// `Var2` drops relevance, `Var3` drops reliability. For the context score:
/// `Var1` is co-occurrence alone, `Var2` adds size modulation, `Var3` adds the
/// location term. One flag set covers both readings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Var1,
    Var2,
    Var3,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Var1, Variant::Var2, Variant::Var3, Variant::Full];

    pub fn ablation(self) -> AblationConfig {
        match self {
            Variant::Var1 => AblationConfig {
                use_relevance: false,
                use_reliability: false,
                use_location: false,
                use_size_modulation: false,
            },
            Variant::Var2 => AblationConfig {
                use_relevance: false,
                use_reliability: true,
                use_location: false,
                use_size_modulation: true,
            },
            Variant::Var3 => AblationConfig {
                use_relevance: true,
                use_reliability: false,
                use_location: true,
                use_size_modulation: false,
            },
            Variant::Full => AblationConfig::FULL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Var1 => "var1",
            Variant::Var2 => "var2",
            Variant::Var3 => "var3",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown ablation variant {s:?} (expected var1|var2|var3|full)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub ablation: AblationConfig,
    pub clamp_max: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            ablation: AblationConfig::FULL,
            clamp_max: DEFAULT_CLAMP_MAX,
        }
    }
}

impl ScoringConfig {
    pub fn with_ablation(ablation: AblationConfig) -> Self {
        Self {
            ablation,
            ..Self::default()
        }
    }
}

fn expect_len(field: impl Into<String>, expected: usize, found: usize) -> Result<(), SurpriseError> {
    if expected == found {
        Ok(())
    } else {
        Err(SurpriseError::DimensionMismatch {
            field: field.into(),
            expected,
            found,
        })
    }
}

fn check_dims(evidence: &ImageEvidence, model: &TypicalityModel) -> Result<(), SurpriseError> {
    let v = &model.vocab;
    expect_len("scene_probs", v.num_scenes(), evidence.scene_probs.len())?;
    expect_len("scene_attrs", v.num_scene_attrs(), evidence.scene_attrs.len())?;
    for (k, o) in evidence.objects.iter().enumerate() {
        expect_len(
            format!("objects[{k}].object_probs"),
            v.num_objects(),
            o.object_probs.len(),
        )?;
        expect_len(
            format!("objects[{k}].object_attrs"),
            v.num_object_attrs(),
            o.object_attrs.len(),
        )?;
    }
    Ok(())
}

/// Σ_j P(S_j) Σ_i I(A^s_i|S_j)·Υ(A^s_i)·Ω(A^s_i,S_j)
pub fn scene_surprise(
    evidence: &ImageEvidence,
    model: &TypicalityModel,
    ablation: &AblationConfig,
) -> Result<f64, SurpriseError> {
    check_dims(evidence, model)?;
    let mut total = 0.0;
    for (j, &p_scene) in evidence.scene_probs.iter().enumerate() {
        let inner: f64 = evidence
            .scene_attrs
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let info = -model.scene_attr_cond[j][i].log_pdf(a);
                let reliability = if ablation.use_reliability {
                    model.scene_reliability[i]
                } else {
                    1.0
                };
                let relevance = if ablation.use_relevance {
                    model.scene_relevance[j][i]
                } else {
                    1.0
                };
                info * reliability * relevance
            })
            .sum();
        total += p_scene * inner;
    }
    Ok(total)
}

/// Σ_j Σ_c P(S_j)·P(O=c)·(−ln P(O=c|S_j)).
pub fn cooccurrence_term(object_probs: &[f64], scene_probs: &[f64], model: &TypicalityModel) -> f64 {
    scene_probs
        .iter()
        .zip(&model.object_given_scene)
        .map(|(&ps, column)| {
            ps * object_probs
                .iter()
                .zip(column)
                .map(|(&po, &cond)| if po == 0.0 { 0.0 } else { -po * cond.ln() })
                .sum::<f64>()
        })
        .sum()
}

/// Mean over the grid of the clamped per-cell information of the object's
/// coverage, assuming category `category`.
pub fn location_information(object: &ObjectEvidence, category: usize, model: &TypicalityModel, clamp_max: f64) -> f64 {
    let loc = &model.location;
    let ratios = cell_ratios(&object.bbox, loc.grid_size);
    let cells = &loc.cells[category];
    ratios
        .iter()
        .zip(cells)
        .map(|(&r, cell)| cell.information(r, clamp_max))
        .sum::<f64>()
        / ratios.len() as f64
}

fn log_size_normalizer(size: &GammaParams) -> f64 {
    match size.mode() {
        Some(mode) => size.log_pdf(mode),
        None => size.log_pdf(size.quantile(EDGE_MODE_QUANTILE)),
    }
}

/// Λ: Σ_c P(O=c)·g_c(r)/g_c(mode_c), each ratio capped at 1.
pub fn size_modulation(relative_size: f64, object_probs: &[f64], model: &TypicalityModel) -> f64 {
    object_probs
        .iter()
        .zip(&model.size)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, g)| {
            let ratio = (g.log_pdf(relative_size) - log_size_normalizer(g)).exp();
            p * if ratio.is_nan() { 0.0 } else { ratio.min(1.0) }
        })
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Per-object context surprise: Λ·[co-occurrence + location].
fn object_context(
    object: &ObjectEvidence,
    scene_probs: &[f64],
    model: &TypicalityModel,
    config: &ScoringConfig,
) -> f64 {
    let ab = &config.ablation;
    let cooc = cooccurrence_term(&object.object_probs, scene_probs, model);
    let location = if ab.use_location {
        object
            .object_probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| p * location_information(object, c, model, config.clamp_max))
            .sum()
    } else {
        0.0
    };
    let lambda = if ab.use_size_modulation {
        size_modulation(object.relative_size(), &object.object_probs, model)
    } else {
        1.0
    };
    lambda * (cooc + location)
}

/// Σ_k Λ(O_k)·[Σ_j Î(O_k|S_j) + I(L_k|O_k)]; 0 when the image has no objects.
/// Neither classifier's reliability enters this score.
pub fn context_surprise(
    evidence: &ImageEvidence,
    model: &TypicalityModel,
    config: &ScoringConfig,
) -> Result<f64, SurpriseError> {
    check_dims(evidence, model)?;
    Ok(evidence
        .objects
        .iter()
        .map(|o| object_context(o, &evidence.scene_probs, model, config))
        .sum())
}

fn single_object_surprise(object: &ObjectEvidence, model: &TypicalityModel, ab: &AblationConfig) -> f64 {
    object
        .object_probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(c, &p)| {
            let inner: f64 = object
                .object_attrs
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let info = -model.object_attr_cond[c][i].log_pdf(a);
                    let reliability = if ab.use_reliability {
                        model.object_reliability[i]
                    } else {
                        1.0
                    };
                    let relevance = if ab.use_relevance {
                        model.object_relevance[c][i]
                    } else {
                        1.0
                    };
                    info * reliability * relevance
                })
                .sum();
            p * inner
        })
        .sum()
}

/// Σ_k Σ_c P(O_k=c)·Σ_i I(A^o_i|c)·Υ(A^o_i)·Ω(A^o_i,c); 0 without objects.
pub fn object_surprise(
    evidence: &ImageEvidence,
    model: &TypicalityModel,
    ablation: &AblationConfig,
) -> Result<f64, SurpriseError> {
    check_dims(evidence, model)?;
    Ok(evidence
        .objects
        .iter()
        .map(|o| single_object_surprise(o, model, ablation))
        .sum())
}

/// All three raw scores for one image.
pub fn score(
    evidence: &ImageEvidence,
    model: &TypicalityModel,
    config: &ScoringConfig,
) -> Result<SurpriseTriple, SurpriseError> {
    Ok(SurpriseTriple {
        object: object_surprise(evidence, model, &config.ablation)?,
        context: context_surprise(evidence, model, config)?,
        scene: scene_surprise(evidence, model, &config.ablation)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{ExponentialParams, GaussianParams};
    use crate::typicality::{BoundingBox, CategoryVocab, CellModel, LocationModel};

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

    /// V object categories, J scenes, one attribute each, unit weights, 1×1 grid.
    fn toy_model(v: usize, j: usize) -> TypicalityModel {
        let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let unit = GaussianParams::new(0.0, 1.0).unwrap();
        TypicalityModel {
            vocab: CategoryVocab {
                object_categories: names("o", v),
                scene_categories: names("s", j),
                object_attributes: names("oa", 1),
                scene_attributes: names("sa", 1),
            },
            object_attr_cond: vec![vec![unit]; v],
            scene_attr_cond: vec![vec![unit]; j],
            object_given_scene: vec![vec![1.0 / v as f64; v]; j],
            scene_relevance: vec![vec![1.0]; j],
            object_relevance: vec![vec![1.0]; v],
            scene_reliability: vec![1.0],
            object_reliability: vec![1.0],
            location: LocationModel {
                grid_size: 1,
                cells: vec![
                    vec![CellModel {
                        zero_mass: 0.0,
                        positive: ExponentialParams { rate: 1.0 },
                    }];
                    v
                ],
            },
            size: vec![GammaParams::new(2.0, 0.1).unwrap(); v],
            scene_prior: vec![1.0 / j as f64; j],
        }
    }

    fn one_hot(k: usize, i: usize) -> Vec<f64> {
        let mut p = vec![0.0; k];
        p[i] = 1.0;
        p
    }

    fn object(v: usize, c: usize, attr: f64) -> ObjectEvidence {
        ObjectEvidence {
            object_probs: one_hot(v, c),
            object_attrs: vec![attr],
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0),
            relative_size: None,
        }
    }

    fn image(j: usize, scene: usize, scene_attr: f64, objects: Vec<ObjectEvidence>) -> ImageEvidence {
        ImageEvidence {
            image_id: "t".into(),
            scene_probs: one_hot(j, scene),
            scene_attrs: vec![scene_attr],
            objects,
        }
    }

    #[test]
    fn scene_score_closed_form() {
        let m = toy_model(1, 1);
        let s = scene_surprise(&image(1, 0, 0.0, vec![]), &m, &AblationConfig::FULL).unwrap();
        assert!((s - HALF_LN_2PI).abs() < 1e-12);
        assert!((s - 0.9189).abs() < 1e-4);
    }

    #[test]
    fn scene_score_grows_away_from_mean() {
        let mut m = toy_model(1, 1);
        m.scene_attr_cond[0][0] = GaussianParams::new(0.5, 1e-4).unwrap();
        let near = scene_surprise(&image(1, 0, 0.5, vec![]), &m, &AblationConfig::FULL).unwrap();
        let far = scene_surprise(&image(1, 0, 0.9, vec![]), &m, &AblationConfig::FULL).unwrap();
        assert!(far > near);
    }

    #[test]
    fn concentrated_scene_posterior_picks_one_inner_sum() {
        let mut m = toy_model(1, 3);
        m.scene_attr_cond[1][0] = GaussianParams::new(0.3, 0.04).unwrap();
        m.scene_relevance[1][0] = 2.5;
        let s = scene_surprise(&image(3, 1, 0.6, vec![]), &m, &AblationConfig::FULL).unwrap();
        let inner = -m.scene_attr_cond[1][0].log_pdf(0.6) * 2.5;
        assert!((s - inner).abs() < 1e-12);
    }

    #[test]
    fn cooccurrence_cases() {
        let mut m = toy_model(4, 1);
        let e = one_hot(4, 2);
        assert!((cooccurrence_term(&e, &[1.0], &m) - 4f64.ln()).abs() < 1e-12);
        m.object_given_scene[0] = one_hot(4, 2);
        assert_eq!(cooccurrence_term(&e, &[1.0], &m), 0.0);
    }

    #[test]
    fn context_hand_case_ln2() {
        let mut m = toy_model(2, 1);
        m.object_given_scene[0] = vec![0.5, 0.5];
        let img = image(1, 0, 0.0, vec![object(2, 0, 0.0)]);
        let cfg = ScoringConfig::with_ablation(AblationConfig {
            use_location: false,
            use_size_modulation: false,
            ..AblationConfig::FULL
        });
        let c = context_surprise(&img, &m, &cfg).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn context_without_objects_is_zero() {
        let m = toy_model(2, 1);
        let c = context_surprise(&image(1, 0, 0.0, vec![]), &m, &ScoringConfig::default()).unwrap();
        assert_eq!(c, 0.0);
        let o = object_surprise(&image(1, 0, 0.0, vec![]), &m, &AblationConfig::FULL).unwrap();
        assert_eq!(o, 0.0);
    }

    #[test]
    fn extreme_size_zeroes_context() {
        let mut m = toy_model(2, 1);
        m.size = vec![GammaParams::new(50.0, 0.0002).unwrap(); 2];
        let img = image(1, 0, 0.0, vec![object(2, 0, 0.0)]);
        let c = context_surprise(&img, &m, &ScoringConfig::default()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn size_modulation_cases() {
        let m = toy_model(1, 1);
        assert!((size_modulation(0.1, &[1.0], &m) - 1.0).abs() < 1e-12);
        let expected = 5.0 * (-4.0f64).exp();
        assert!((size_modulation(0.5, &[1.0], &m) - expected).abs() < 1e-12);
        assert!((size_modulation(0.5, &[1.0], &m) - 0.0916).abs() < 1e-4);
        // 10·e^{-9} at r = 1
        assert!((size_modulation(1.0, &[1.0], &m) - 10.0 * (-9.0f64).exp()).abs() < 1e-12);
        assert!(size_modulation(1.0, &[1.0], &m) < size_modulation(0.5, &[1.0], &m));

        let mut edge = toy_model(1, 1);
        edge.size = vec![GammaParams::new(0.8, 0.2).unwrap()];
        for r in [1e-6, 0.001, 0.1, 0.9] {
            let l = size_modulation(r, &[1.0], &edge);
            assert!((0.0..=1.0).contains(&l), "{r}: {l}");
        }
    }

    #[test]
    fn object_score_closed_form_and_additivity() {
        let m = toy_model(1, 1);
        let one = image(1, 0, 0.0, vec![object(1, 0, 0.0)]);
        let s1 = object_surprise(&one, &m, &AblationConfig::FULL).unwrap();
        assert!((s1 - HALF_LN_2PI).abs() < 1e-12);
        let two = image(1, 0, 0.0, vec![object(1, 0, 0.0), object(1, 0, 0.0)]);
        let s2 = object_surprise(&two, &m, &AblationConfig::FULL).unwrap();
        assert_eq!(s2, 2.0 * s1);

        let mut zero = m.clone();
        zero.object_relevance = vec![vec![0.0]];
        assert_eq!(object_surprise(&one, &zero, &AblationConfig::FULL).unwrap(), 0.0);
    }

    #[test]
    fn location_clamp_and_argmin() {
        let mut m = toy_model(1, 1);
        m.location.grid_size = 2;
        // trained on a single box covering exactly the top-left cell
        m.location.cells = vec![vec![
            CellModel {
                zero_mass: 0.0,
                positive: ExponentialParams { rate: 1.0 },
            },
            CellModel {
                zero_mass: 1.0,
                positive: ExponentialParams { rate: 1.0 },
            },
            CellModel {
                zero_mass: 1.0,
                positive: ExponentialParams { rate: 1.0 },
            },
            CellModel {
                zero_mass: 1.0,
                positive: ExponentialParams { rate: 1.0 },
            },
        ]];
        let at = |x: f64, y: f64| {
            let mut o = object(1, 0, 0.0);
            o.bbox = BoundingBox::new(x, y, 0.5, 0.5);
            location_information(&o, 0, &m, 30.0)
        };
        let home = at(0.0, 0.0);
        // cell 0: −ln(e^{-1}) = 1; others 0
        assert!((home - 0.25).abs() < 1e-12);
        let away = at(0.5, 0.5);
        assert!((away - (30.0 + 30.0) / 4.0).abs() < 1e-12);
        for (x, y) in [(0.1, 0.0), (0.0, 0.3), (0.25, 0.25), (0.5, 0.0)] {
            assert!(at(x, y) > home);
        }
    }

    #[test]
    fn location_hand_built_grid() {
        let mut m = toy_model(1, 1);
        m.location.grid_size = 2;
        let cell = |z: f64, rate: f64| CellModel {
            zero_mass: z,
            positive: ExponentialParams { rate },
        };
        m.location.cells = vec![vec![cell(0.2, 2.0), cell(0.5, 1.0), cell(0.9, 4.0), cell(0.6, 0.5)]];
        let mut o = object(1, 0, 0.0);
        o.bbox = BoundingBox::new(0.25, 0.0, 0.5, 0.5);
        // coverage (0.5, 0.5, 0, 0)
        let expected =
            (-(0.8f64.ln() + 2f64.ln() - 1.0) - (0.5f64.ln() + 1f64.ln() - 0.5) - 0.9f64.ln() - 0.6f64.ln()) / 4.0;
        assert!((location_information(&o, 0, &m, 30.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = toy_model(2, 2);
        let bad = image(3, 0, 0.0, vec![]);
        assert!(matches!(
            scene_surprise(&bad, &m, &AblationConfig::FULL),
            Err(SurpriseError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn variants_parse() {
        assert_eq!("var2".parse::<Variant>().unwrap(), Variant::Var2);
        assert!("var9".parse::<Variant>().is_err());
        assert_eq!(Variant::Full.ablation(), AblationConfig::FULL);
    }
}
