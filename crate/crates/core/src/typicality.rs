//! The typicality model: what normal images look like.
//!
//! A model is learned from normal images only. It holds Gaussian conditionals of
//! attribute responses given categories, a smoothed object-given-scene table,
//! attribute relevance and reliability weights, a zero-inflated exponential
//! model of how much of each grid cell an object covers, and a gamma model of
//! relative object size.
//!
//! Per-category tables are indexed `[category][attribute]`; the co-occurrence
//! table is indexed `[scene][object category]`, so each inner vector is a simplex.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{gaussian_entropy, ExponentialParams, GammaParams, GaussianParams};

/// Tolerance on simplex sums for validated evidence.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("{field}: expected length {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("{field}: probabilities sum to {sum}")]
    SimplexViolation { field: String, sum: f64 },
    #[error("{field}: value {value} out of range")]
    OutOfRange { field: String, value: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypicalityError {
    #[error("insufficient training data for {0}")]
    InsufficientData(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("record {image_id}: {source}")]
    InvalidEvidence {
        image_id: String,
        #[source]
        source: EvidenceError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryVocab {
    pub object_categories: Vec<String>,
    pub scene_categories: Vec<String>,
    pub object_attributes: Vec<String>,
    pub scene_attributes: Vec<String>,
}

impl CategoryVocab {
    /// V
    pub fn num_objects(&self) -> usize {
        self.object_categories.len()
    }

    /// J
    pub fn num_scenes(&self) -> usize {
        self.scene_categories.len()
    }

    /// n
    pub fn num_object_attrs(&self) -> usize {
        self.object_attributes.len()
    }

    /// m
    pub fn num_scene_attrs(&self) -> usize {
        self.scene_attributes.len()
    }

    pub fn validate(&self) -> Result<(), TypicalityError> {
        for (name, list) in [
            ("object_categories", &self.object_categories),
            ("scene_categories", &self.scene_categories),
            ("object_attributes", &self.object_attributes),
            ("scene_attributes", &self.scene_attributes),
        ] {
            if list.is_empty() {
                return Err(TypicalityError::InvalidVocab(format!("{name} is empty")));
            }
            let mut seen = HashSet::new();
            for item in list {
                if !seen.insert(item) {
                    return Err(TypicalityError::InvalidVocab(format!(
                        "duplicate name {item:?} in {name}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Normalized rectangle; `(x, y)` is the top-left corner, y grows downward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn validate(&self, field: &str) -> Result<(), EvidenceError> {
        let tol = 1e-9;
        for (name, v) in [("x", self.x), ("y", self.y), ("w", self.w), ("h", self.h)] {
            if !(v.is_finite() && (-tol..=1.0 + tol).contains(&v)) {
                return Err(EvidenceError::OutOfRange {
                    field: format!("{field}.{name}"),
                    value: v,
                });
            }
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(EvidenceError::OutOfRange {
                field: format!("{field}.area"),
                value: self.area(),
            });
        }
        if self.x + self.w > 1.0 + tol || self.y + self.h > 1.0 + tol {
            return Err(EvidenceError::OutOfRange {
                field: format!("{field}.extent"),
                value: (self.x + self.w).max(self.y + self.h),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvidence {
    /// Distribution over the V object categories.
    pub object_probs: Vec<f64>,
    /// Calibrated responses of the n object-attribute classifiers.
    pub object_attrs: Vec<f64>,
    pub bbox: BoundingBox,
    /// Box area over image area; defaults to the bbox area when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_size: Option<f64>,
}

impl ObjectEvidence {
    pub fn relative_size(&self) -> f64 {
        self.relative_size.unwrap_or_else(|| self.bbox.area())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEvidence {
    pub image_id: String,
    /// Distribution over the J scene categories.
    pub scene_probs: Vec<f64>,
    /// Calibrated responses of the m scene-attribute classifiers.
    pub scene_attrs: Vec<f64>,
    #[serde(default)]
    pub objects: Vec<ObjectEvidence>,
}

fn check_len(field: &str, expected: usize, found: usize) -> Result<(), EvidenceError> {
    if expected == found {
        Ok(())
    } else {
        Err(EvidenceError::DimensionMismatch {
            field: field.to_string(),
            expected,
            found,
        })
    }
}

fn check_simplex(field: &str, probs: &[f64]) -> Result<(), EvidenceError> {
    for &p in probs {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(EvidenceError::OutOfRange {
                field: field.to_string(),
                value: p,
            });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(EvidenceError::SimplexViolation {
            field: field.to_string(),
            sum,
        });
    }
    Ok(())
}

fn check_unit(field: &str, values: &[f64]) -> Result<(), EvidenceError> {
    match values.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
        Some(&value) => Err(EvidenceError::OutOfRange {
            field: field.to_string(),
            value,
        }),
        None => Ok(()),
    }
}

impl ImageEvidence {
    pub fn validate(&self, vocab: &CategoryVocab) -> Result<(), EvidenceError> {
        check_len("scene_probs", vocab.num_scenes(), self.scene_probs.len())?;
        check_simplex("scene_probs", &self.scene_probs)?;
        check_len("scene_attrs", vocab.num_scene_attrs(), self.scene_attrs.len())?;
        check_unit("scene_attrs", &self.scene_attrs)?;
        for (k, obj) in self.objects.iter().enumerate() {
            let f = |name: &str| format!("objects[{k}].{name}");
            check_len(&f("object_probs"), vocab.num_objects(), obj.object_probs.len())?;
            check_simplex(&f("object_probs"), &obj.object_probs)?;
            check_len(&f("object_attrs"), vocab.num_object_attrs(), obj.object_attrs.len())?;
            check_unit(&f("object_attrs"), &obj.object_attrs)?;
            obj.bbox.validate(&f("bbox"))?;
            if let Some(r) = obj.relative_size {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(EvidenceError::OutOfRange {
                        field: f("relative_size"),
                        value: r,
                    });
                }
                if (r - obj.bbox.area()).abs() > 1e-6 {
                    return Err(EvidenceError::OutOfRange {
                        field: f("relative_size"),
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Ground truth attached to one object of a normal training image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub object_label: usize,
    /// Binary attribute annotations; `null` when not annotated.
    #[serde(default)]
    pub attr_annotations: Vec<Option<bool>>,
    /// Per-cell fraction of pixels belonging to the object (row-major, G²
    /// entries). Box coverage is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_ratios: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalTrainingRecord {
    pub evidence: ImageEvidence,
    pub scene_label: usize,
    /// Binary scene-attribute annotations, used only for reliability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_attr_annotations: Option<Vec<Option<bool>>>,
    /// One entry per object in `evidence.objects`, same order.
    #[serde(default)]
    pub object_annotations: Vec<ObjectAnnotation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellModel {
    /// π₀: probability the object covers none of the cell.
    pub zero_mass: f64,
    pub positive: ExponentialParams,
}

impl CellModel {
    /// −ln p(ratio) under the zero-inflated exponential, capped at `clamp_max`.
    pub fn information(&self, ratio: f64, clamp_max: f64) -> f64 {
        let info = if ratio <= 0.0 {
            -self.zero_mass.ln()
        } else {
            -((1.0 - self.zero_mass).ln() + self.positive.rate.ln() - self.positive.rate * ratio)
        };
        if info.is_nan() {
            clamp_max
        } else {
            info.min(clamp_max)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationModel {
    pub grid_size: usize,
    /// `[category][cell]`, cells row-major.
    pub cells: Vec<Vec<CellModel>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalityModel {
    pub vocab: CategoryVocab,
    /// P(A^o_i | O_k), `[category][attribute]`.
    pub object_attr_cond: Vec<Vec<GaussianParams>>,
    /// P(A^s_i | S_j), `[scene][attribute]`.
    pub scene_attr_cond: Vec<Vec<GaussianParams>>,
    /// P(O | S_j), `[scene][category]`.
    pub object_given_scene: Vec<Vec<f64>>,
    /// Ω for scene attributes, `[scene][attribute]`.
    pub scene_relevance: Vec<Vec<f64>>,
    /// Ω for object attributes, `[category][attribute]`.
    pub object_relevance: Vec<Vec<f64>>,
    /// Υ per scene attribute.
    pub scene_reliability: Vec<f64>,
    /// Υ per object attribute.
    pub object_reliability: Vec<f64>,
    pub location: LocationModel,
    /// Relative-size model per object category.
    pub size: Vec<GammaParams>,
    pub scene_prior: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub grid_size: usize,
    /// Additive smoothing of the co-occurrence counts.
    pub smoothing: f64,
    pub entropy_floor: f64,
    pub holdout_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            grid_size: 8,
            smoothing: 0.5,
            entropy_floor: 0.05,
            holdout_fraction: 0.2,
        }
    }
}

/// FNV-1a, used for the deterministic hold-out split.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Whether a record with this id falls in the hold-out slice.
pub fn is_holdout(image_id: &str, fraction: f64) -> bool {
    (fnv1a(image_id.as_bytes()) % 10_000) < (fraction * 10_000.0).round() as u64
}

/// Splits records into (fit slice, hold-out slice) by id hash.
pub fn split_holdout(
    records: &[NormalTrainingRecord],
    fraction: f64,
) -> (Vec<&NormalTrainingRecord>, Vec<&NormalTrainingRecord>) {
    records
        .iter()
        .partition(|r| !is_holdout(&r.evidence.image_id, fraction))
}

/// Per-cell coverage of the box: the fraction of each grid cell it overlaps.
pub fn cell_ratios(bbox: &BoundingBox, grid: usize) -> Vec<f64> {
    let g = grid as f64;
    let overlap = |lo: f64, len: f64, i: usize| -> f64 {
        let (c0, c1) = (i as f64 / g, (i + 1) as f64 / g);
        (c1.min(lo + len) - c0.max(lo)).max(0.0)
    };
    let mut out = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        let oy = overlap(bbox.y, bbox.h, row);
        for col in 0..grid {
            let ox = overlap(bbox.x, bbox.w, col);
            out.push((ox * oy * g * g).clamp(0.0, 1.0));
        }
    }
    out
}

/// Ω(A^s_i, S_j) = 1 / max(H(A^s_i | S_j), floor).
pub fn scene_attr_relevance(cond: &GaussianParams, entropy_floor: f64) -> f64 {
    1.0 / gaussian_entropy(cond).max(entropy_floor)
}

/// Fraction of annotated objects of one category marked positive for one
/// attribute; 0 when nothing is annotated.
pub fn object_attr_relevance(annotations: &[Option<bool>]) -> f64 {
    let (pos, total) = annotations
        .iter()
        .flatten()
        .fold((0usize, 0usize), |(p, t), &a| (p + a as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        pos as f64 / total as f64
    }
}

/// Balanced accuracy of `response ≥ 0.5` against the binary truth; 0.5 when
/// the truth lacks either class.
pub fn attribute_reliability(responses: &[f64], truth: &[bool]) -> f64 {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&r, &t) in responses.iter().zip(truth) {
        let pred = r >= 0.5;
        if t {
            pos += 1;
            tp += pred as usize;
        } else {
            neg += 1;
            tn += (!pred) as usize;
        }
    }
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64)
}

fn check_record(r: &NormalTrainingRecord, vocab: &CategoryVocab) -> Result<(), TypicalityError> {
    let id = &r.evidence.image_id;
    r.evidence
        .validate(vocab)
        .map_err(|source| TypicalityError::InvalidEvidence {
            image_id: id.clone(),
            source,
        })?;
    let mismatch = |msg: String| Err(TypicalityError::VocabMismatch(format!("record {id}: {msg}")));
    if r.scene_label >= vocab.num_scenes() {
        return mismatch(format!("scene_label {} >= {}", r.scene_label, vocab.num_scenes()));
    }
    if let Some(ann) = &r.scene_attr_annotations {
        if ann.len() != vocab.num_scene_attrs() {
            return mismatch(format!("{} scene attribute annotations", ann.len()));
        }
    }
    if r.object_annotations.len() != r.evidence.objects.len() {
        return mismatch(format!(
            "{} object annotations for {} objects",
            r.object_annotations.len(),
            r.evidence.objects.len()
        ));
    }
    for a in &r.object_annotations {
        if a.object_label >= vocab.num_objects() {
            return mismatch(format!("object_label {} >= {}", a.object_label, vocab.num_objects()));
        }
        if !a.attr_annotations.is_empty() && a.attr_annotations.len() != vocab.num_object_attrs() {
            return mismatch(format!("{} object attribute annotations", a.attr_annotations.len()));
        }
    }
    Ok(())
}

fn fit_cell(ratios: &[f64]) -> CellModel {
    let positives: Vec<f64> = ratios.iter().copied().filter(|&r| r > 0.0).collect();
    let zero_mass = 1.0 - positives.len() as f64 / ratios.len() as f64;
    let positive = ExponentialParams::fit(&positives).unwrap_or(ExponentialParams { rate: 1.0 });
    CellModel { zero_mass, positive }
}

/// Learns a [`TypicalityModel`] from normal images.
///
/// Conditionals, co-occurrence, relevance, location and size are fitted on the
/// records outside the hold-out slice; reliability is measured on the hold-out
/// slice (or on all records when the slice is empty).
pub fn train(
    records: &[NormalTrainingRecord],
    vocab: &CategoryVocab,
    config: &TrainingConfig,
) -> Result<TypicalityModel, TypicalityError> {
    vocab.validate()?;
    if config.grid_size == 0 {
        return Err(TypicalityError::InvalidVocab("grid_size must be >= 1".into()));
    }
    for r in records {
        check_record(r, vocab)?;
    }
    let (fit_slice, holdout) = split_holdout(records, config.holdout_fraction);
    let holdout = if holdout.is_empty() {
        records.iter().collect()
    } else {
        holdout
    };

    let (v, j_count) = (vocab.num_objects(), vocab.num_scenes());
    let (n, m) = (vocab.num_object_attrs(), vocab.num_scene_attrs());
    let cells = config.grid_size * config.grid_size;

    // Scene side.
    let mut scene_attr_samples = vec![vec![Vec::new(); m]; j_count];
    let mut scene_counts = vec![0usize; j_count];
    let mut cooc = vec![vec![0usize; v]; j_count];
    // Object side.
    let mut obj_attr_samples = vec![vec![Vec::new(); n]; v];
    let mut obj_annotations = vec![vec![Vec::new(); n]; v];
    let mut cell_samples = vec![vec![Vec::new(); cells]; v];
    let mut sizes = vec![Vec::new(); v];

    for r in &fit_slice {
        let j = r.scene_label;
        scene_counts[j] += 1;
        for (i, &a) in r.evidence.scene_attrs.iter().enumerate() {
            scene_attr_samples[j][i].push(a);
        }
        for (obj, ann) in r.evidence.objects.iter().zip(&r.object_annotations) {
            let c = ann.object_label;
            cooc[j][c] += 1;
            for (i, &a) in obj.object_attrs.iter().enumerate() {
                obj_attr_samples[c][i].push(a);
            }
            for (i, a) in ann.attr_annotations.iter().enumerate() {
                obj_annotations[c][i].push(*a);
            }
            let ratios = match &ann.cell_ratios {
                Some(rs) if rs.len() == cells => rs.clone(),
                Some(rs) => {
                    return Err(TypicalityError::VocabMismatch(format!(
                        "record {}: {} cell ratios for a {}x{} grid",
                        r.evidence.image_id,
                        rs.len(),
                        config.grid_size,
                        config.grid_size
                    )))
                }
                None => cell_ratios(&obj.bbox, config.grid_size),
            };
            for (cell, &ratio) in ratios.iter().enumerate() {
                cell_samples[c][cell].push(ratio);
            }
            sizes[c].push(obj.relative_size());
        }
    }

    let fit_cond = |samples: &[f64], what: String| -> Result<GaussianParams, TypicalityError> {
        if samples.len() < 2 {
            return Err(TypicalityError::InsufficientData(what));
        }
        GaussianParams::fit(samples).map_err(|_| TypicalityError::InsufficientData(what))
    };

    let mut scene_attr_cond = Vec::with_capacity(j_count);
    for (j, per_attr) in scene_attr_samples.iter().enumerate() {
        let row = per_attr
            .iter()
            .enumerate()
            .map(|(i, s)| {
                fit_cond(
                    s,
                    format!(
                        "scene attribute {:?} given scene {:?}",
                        vocab.scene_attributes[i], vocab.scene_categories[j]
                    ),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        scene_attr_cond.push(row);
    }

    let mut object_attr_cond = Vec::with_capacity(v);
    for (c, per_attr) in obj_attr_samples.iter().enumerate() {
        let row = per_attr
            .iter()
            .enumerate()
            .map(|(i, s)| {
                fit_cond(
                    s,
                    format!(
                        "object attribute {:?} given object {:?}",
                        vocab.object_attributes[i], vocab.object_categories[c]
                    ),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        object_attr_cond.push(row);
    }

    let alpha = config.smoothing;
    let object_given_scene: Vec<Vec<f64>> = cooc
        .iter()
        .map(|counts| {
            let total = counts.iter().sum::<usize>() as f64 + alpha * v as f64;
            counts.iter().map(|&c| (c as f64 + alpha) / total).collect()
        })
        .collect();

    let scene_relevance = scene_attr_cond
        .iter()
        .map(|row| {
            row.iter()
                .map(|g| scene_attr_relevance(g, config.entropy_floor))
                .collect()
        })
        .collect();
    let object_relevance = obj_annotations
        .iter()
        .map(|per_attr| {
            (0..n)
                .map(|i| per_attr.get(i).map_or(0.0, |a| object_attr_relevance(a)))
                .collect()
        })
        .collect();

    let scene_reliability = (0..m)
        .map(|i| {
            let (resp, truth): (Vec<f64>, Vec<bool>) = holdout
                .iter()
                .filter_map(|r| {
                    let t = r.scene_attr_annotations.as_ref()?[i]?;
                    Some((r.evidence.scene_attrs[i], t))
                })
                .unzip();
            attribute_reliability(&resp, &truth)
        })
        .collect();
    let object_reliability = (0..n)
        .map(|i| {
            let (resp, truth): (Vec<f64>, Vec<bool>) = holdout
                .iter()
                .flat_map(|r| r.evidence.objects.iter().zip(&r.object_annotations))
                .filter_map(|(o, a)| Some((o.object_attrs[i], (*a.attr_annotations.get(i)?)?)))
                .unzip();
            attribute_reliability(&resp, &truth)
        })
        .collect();

    let location = LocationModel {
        grid_size: config.grid_size,
        cells: cell_samples
            .iter()
            .map(|per_cell| per_cell.iter().map(|rs| fit_cell(rs)).collect())
            .collect(),
    };

    let size = sizes
        .iter()
        .enumerate()
        .map(|(c, s)| {
            GammaParams::fit(s).map_err(|e| {
                TypicalityError::InsufficientData(format!("relative size of {:?} ({e})", vocab.object_categories[c]))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let total = fit_slice.len() as f64;
    for (j, &count) in scene_counts.iter().enumerate() {
        if count == 0 {
            return Err(TypicalityError::InsufficientData(format!(
                "scene {:?} has no training records",
                vocab.scene_categories[j]
            )));
        }
    }
    let scene_prior = scene_counts.iter().map(|&c| c as f64 / total).collect();

    Ok(TypicalityModel {
        vocab: vocab.clone(),
        object_attr_cond,
        scene_attr_cond,
        object_given_scene,
        scene_relevance,
        object_relevance,
        scene_reliability,
        object_reliability,
        location,
        size,
        scene_prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab(v: usize, j: usize, n: usize, m: usize) -> CategoryVocab {
        let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect();
        CategoryVocab {
            object_categories: names("obj", v),
            scene_categories: names("scene", j),
            object_attributes: names("oa", n),
            scene_attributes: names("sa", m),
        }
    }

    fn record(id: &str, scene: usize, scene_attr: f64, objs: &[(usize, f64, BoundingBox)]) -> NormalTrainingRecord {
        NormalTrainingRecord {
            evidence: ImageEvidence {
                image_id: id.into(),
                scene_probs: {
                    let mut p = vec![0.0; 2];
                    p[scene] = 1.0;
                    p
                },
                scene_attrs: vec![scene_attr],
                objects: objs
                    .iter()
                    .map(|&(c, a, bbox)| ObjectEvidence {
                        object_probs: {
                            let mut p = vec![0.0; 2];
                            p[c] = 1.0;
                            p
                        },
                        object_attrs: vec![a],
                        bbox,
                        relative_size: None,
                    })
                    .collect(),
            },
            scene_label: scene,
            scene_attr_annotations: Some(vec![Some(scene_attr > 0.5)]),
            object_annotations: objs
                .iter()
                .map(|&(c, a, _)| ObjectAnnotation {
                    object_label: c,
                    attr_annotations: vec![Some(a > 0.5)],
                    cell_ratios: None,
                })
                .collect(),
        }
    }

    fn no_holdout() -> TrainingConfig {
        TrainingConfig {
            grid_size: 2,
            holdout_fraction: 0.0,
            ..TrainingConfig::default()
        }
    }

    fn street_bedroom_records() -> Vec<NormalTrainingRecord> {
        // "car" (0) only in street (0); "bed" (1) only in bedroom (1)
        let mut out = Vec::new();
        for i in 0..10 {
            let a = 0.4 + 0.02 * i as f64;
            let b = BoundingBox::new(0.1 + 0.01 * i as f64, 0.5, 0.3, 0.3 + 0.01 * i as f64);
            out.push(record(&format!("s{i}"), 0, a, &[(0, a, b)]));
            out.push(record(&format!("b{i}"), 1, 1.0 - a, &[(1, 1.0 - a, b)]));
        }
        out
    }

    #[test]
    fn cooccurrence_smoothing_by_hand() {
        let model = train(&street_bedroom_records(), &vocab(2, 2, 1, 1), &no_holdout()).unwrap();
        // street: counts car 10, bed 0 → (10.5/11, 0.5/11)
        assert!((model.object_given_scene[0][0] - 10.5 / 11.0).abs() < 1e-15);
        assert!((model.object_given_scene[0][1] - 0.5 / 11.0).abs() < 1e-15);
        // bedroom: car 0, bed 10 → P(car | bedroom) = 0.5 / 11
        assert!((model.object_given_scene[1][0] - 0.5 / 11.0).abs() < 1e-15);
        for col in &model.object_given_scene {
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(col.iter().all(|&p| p > 0.0));
        }
        assert_eq!(model.scene_prior, vec![0.5, 0.5]);
    }

    #[test]
    fn constant_attribute_cell_is_floored() {
        let mut recs = street_bedroom_records();
        for r in recs.iter_mut().filter(|r| r.scene_label == 0) {
            r.evidence.scene_attrs[0] = 0.7;
        }
        let model = train(&recs, &vocab(2, 2, 1, 1), &no_holdout()).unwrap();
        assert_eq!(
            model.scene_attr_cond[0][0].variance,
            crate::distributions::VARIANCE_FLOOR
        );
        // entropy below the floor → relevance 1/0.05
        assert_eq!(model.scene_relevance[0][0], 20.0);
    }

    #[test]
    fn scene_label_out_of_range() {
        let mut recs = street_bedroom_records();
        recs[3].scene_label = 2;
        assert!(matches!(
            train(&recs, &vocab(2, 2, 1, 1), &no_holdout()),
            Err(TypicalityError::VocabMismatch(_))
        ));
    }

    #[test]
    fn sparse_cell_is_insufficient() {
        let recs: Vec<_> = street_bedroom_records()
            .into_iter()
            .filter(|r| r.scene_label == 0 || r.evidence.image_id == "b0")
            .collect();
        assert!(matches!(
            train(&recs, &vocab(2, 2, 1, 1), &no_holdout()),
            Err(TypicalityError::InsufficientData(_))
        ));
    }

    #[test]
    fn scene_relevance_values() {
        let unit = GaussianParams::new(0.0, 1.0).unwrap();
        assert!((scene_attr_relevance(&unit, 0.05) - 1.0 / 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!((scene_attr_relevance(&unit, 0.05) - 0.7048).abs() < 1e-4);
        let zero_entropy = GaussianParams::new(0.0, 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E)).unwrap();
        assert!((scene_attr_relevance(&zero_entropy, 0.05) - 20.0).abs() < 1e-9);
        let wide = GaussianParams::new(0.0, 4.0).unwrap();
        assert!(scene_attr_relevance(&wide, 0.05) < scene_attr_relevance(&unit, 0.05));
    }

    #[test]
    fn object_relevance_counts() {
        let mut ann = vec![Some(true); 8];
        ann.extend([Some(false), Some(false), None, None]);
        assert!((object_attr_relevance(&ann) - 0.8).abs() < 1e-15);
        assert_eq!(object_attr_relevance(&[None, None]), 0.0);
        assert_eq!(object_attr_relevance(&[Some(true); 3]), 1.0);
    }

    #[test]
    fn reliability_cases() {
        let truth = [true, false, true, false, true];
        let perfect = [0.9, 0.1, 0.8, 0.2, 0.7];
        assert_eq!(attribute_reliability(&perfect, &truth), 1.0);
        let inverted: Vec<f64> = perfect.iter().map(|p| 1.0 - p).collect();
        assert_eq!(attribute_reliability(&inverted, &truth), 0.0);
        assert_eq!(attribute_reliability(&perfect, &[true; 5]), 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let resp: Vec<f64> = (0..4000).map(|_| rng.random()).collect();
        let truth: Vec<bool> = (0..4000).map(|_| rng.random()).collect();
        assert!((attribute_reliability(&resp, &truth) - 0.5).abs() < 0.05);
    }

    #[test]
    fn cell_ratio_cases() {
        assert_eq!(cell_ratios(&BoundingBox::new(0.0, 0.0, 1.0, 1.0), 2), vec![1.0; 4]);
        assert_eq!(
            cell_ratios(&BoundingBox::new(0.0, 0.0, 0.5, 0.5), 2),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        let r = cell_ratios(&BoundingBox::new(0.25, 0.25, 0.5, 0.5), 2);
        for v in r {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_ratios_preserve_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let w: f64 = rng.random_range(0.01..1.0);
            let h: f64 = rng.random_range(0.01..1.0);
            let b = BoundingBox::new(rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h), w, h);
            for g in [1usize, 3, 8] {
                let r = cell_ratios(&b, g);
                let area: f64 = r.iter().sum::<f64>() / (g * g) as f64;
                assert!((area - b.area()).abs() < 1e-9);
                assert!(r.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn zero_inflated_cell_information() {
        let cell = CellModel {
            zero_mass: 1.0,
            positive: ExponentialParams { rate: 1.0 },
        };
        assert_eq!(cell.information(0.0, 30.0), 0.0);
        assert_eq!(cell.information(0.4, 30.0), 30.0);
        let cell = CellModel {
            zero_mass: 0.25,
            positive: ExponentialParams { rate: 2.0 },
        };
        assert!((cell.information(0.0, 30.0) - 4f64.ln()).abs() < 1e-15);
        let expected = -(0.75f64.ln() + 2f64.ln() - 2.0 * 0.5);
        assert!((cell.information(0.5, 30.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn retraining_is_bit_identical_and_order_free() {
        let recs = street_bedroom_records();
        let cfg = TrainingConfig {
            grid_size: 2,
            ..TrainingConfig::default()
        };
        // with the hold-out on, a slice must still cover every cell; use all
        let cfg = TrainingConfig {
            holdout_fraction: 0.0,
            ..cfg
        };
        let a = train(&recs, &vocab(2, 2, 1, 1), &cfg).unwrap();
        let b = train(&recs, &vocab(2, 2, 1, 1), &cfg).unwrap();
        assert_eq!(a, b);
        let mut rev = recs.clone();
        rev.reverse();
        let c = train(&rev, &vocab(2, 2, 1, 1), &cfg).unwrap();
        for (x, y) in a
            .object_relevance
            .iter()
            .flatten()
            .zip(c.object_relevance.iter().flatten())
        {
            assert_eq!(x, y);
        }
        assert_eq!(a.scene_reliability, c.scene_reliability);
        assert_eq!(a.object_reliability, c.object_reliability);
    }

    #[test]
    fn holdout_split_is_deterministic_and_sized() {
        let ids: Vec<String> = (0..10_000).map(|i| format!("img-{i:05}")).collect();
        let hits = ids.iter().filter(|id| is_holdout(id, 0.2)).count();
        assert!((hits as f64 / 10_000.0 - 0.2).abs() < 0.02, "{hits}");
        assert!(ids.iter().all(|id| is_holdout(id, 0.2) == is_holdout(id, 0.2)));
        assert!(!ids.iter().any(|id| is_holdout(id, 0.0)));
    }

    #[test]
    fn evidence_validation() {
        let v = vocab(2, 2, 1, 1);
        let mut e = street_bedroom_records()[0].evidence.clone();
        assert!(e.validate(&v).is_ok());
        e.scene_probs = vec![0.5, 0.3];
        assert!(matches!(e.validate(&v), Err(EvidenceError::SimplexViolation { .. })));
        e.scene_probs = vec![1.0];
        assert!(matches!(e.validate(&v), Err(EvidenceError::DimensionMismatch { .. })));
    }
}
