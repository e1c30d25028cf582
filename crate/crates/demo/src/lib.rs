//! Browser bindings for the demo page. Every export returns a JSON string;
//! the `*_json` functions behind them are plain Rust so they can be tested
//! natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, InverseGaussian};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use atypia::distributions::ContinuousDistribution;
use atypia::pipeline::{
    planted_annotation_matrix, reason_all, synth_generate, train_model, EngineConfig, ModelDocument, ScoreRecord,
};
use atypia::reasoning::{Reason, ReasonPrior};
use atypia::surprise::score;
use atypia::taxonomy::{agglomerate, cut_k, group_reasons, AnnotationMatrix, Linkage};
use atypia::typicality::{BoundingBox, ImageEvidence};

const SYNTHETIC_CONFIG: &str = include_str!("../../../configs/synthetic.toml");

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// `n` seeded draws from IG(mean, shape).
pub fn ig_samples(mean: f64, shape: f64, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    let ig = InverseGaussian::new(mean, shape).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| ig.sample(&mut rng)).collect())
}

/// Shifted inverse-Gaussian fit of a score sample: parameters, AIC table,
/// a 20-bin histogram and the fitted density and CDF over its range.
pub fn ig_fit_json(samples: &[f64], epsilon: f64) -> Result<String, String> {
    let prior = ReasonPrior::fit(Reason::Object, samples, epsilon).map_err(|e| e.to_string())?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = 20;
    let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; bins];
    for &s in samples {
        counts[(((s - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let curve: Vec<[f64; 3]> = (0..=100)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 100.0;
            [x, prior.prior.pdf(x + prior.shift), prior.normalize(x)]
        })
        .collect();
    to_json(&json!({
        "shift": prior.shift,
        "mean": prior.prior.mean,
        "shape": prior.prior.shape,
        "aic": prior.aic_report,
        "histogram": { "low": lo, "width": width, "counts": counts },
        "curve": curve,
    }))
}

#[wasm_bindgen]
pub fn sample_inverse_gaussian(mean: f64, shape: f64, n: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    js(ig_samples(mean, shape, n, seed))
}

#[wasm_bindgen]
pub fn fit_inverse_gaussian(samples: &[f64], epsilon: f64) -> Result<String, JsError> {
    js(ig_fit_json(samples, epsilon))
}

/// A model trained on a synthetic population, with its test images available
/// for editing and rescoring.
#[wasm_bindgen]
pub struct Explorer {
    doc: ModelDocument,
    test: Vec<ImageEvidence>,
    labels: Vec<Option<Reason>>,
}

/// Edits applied to a test image before scoring.
#[derive(Clone, Copy, Debug, Default)]
pub struct Edit {
    /// Added to every attribute response of the first object, then clamped.
    pub object_attr_shift: f64,
    /// Added to every scene attribute response, then clamped.
    pub scene_attr_shift: f64,
    /// Box translation of the first object, in image fractions.
    pub dx: f64,
    pub dy: f64,
}

impl Explorer {
    pub fn build(seed: u64) -> Result<Explorer, String> {
        let config = EngineConfig::from_toml_str(SYNTHETIC_CONFIG).map_err(|e| e.to_string())?;
        let data = synth_generate(&config.synthetic, seed).map_err(|e| e.to_string())?;
        let doc = train_model(&data.training, &data.planted.vocab, &config).map_err(|e| e.to_string())?;
        Ok(Explorer {
            doc,
            test: data.test,
            labels: data.truth.iter().map(|t| t.reason).collect(),
        })
    }

    pub fn edited(&self, index: usize, edit: Edit) -> Result<ImageEvidence, String> {
        let mut ev = self
            .test
            .get(index)
            .ok_or_else(|| format!("no test image {index}"))?
            .clone();
        for a in &mut ev.scene_attrs {
            *a = (*a + edit.scene_attr_shift).clamp(0.0, 1.0);
        }
        if let Some(o) = ev.objects.first_mut() {
            for a in &mut o.object_attrs {
                *a = (*a + edit.object_attr_shift).clamp(0.0, 1.0);
            }
            let b = o.bbox;
            o.bbox = BoundingBox::new(
                (b.x + edit.dx).clamp(0.0, 1.0 - b.w),
                (b.y + edit.dy).clamp(0.0, 1.0 - b.h),
                b.w,
                b.h,
            );
        }
        Ok(ev)
    }

    pub fn score_json(&self, index: usize, edit: Edit) -> Result<String, String> {
        let ev = self.edited(index, edit)?;
        let triple = score(&ev, &self.doc.typicality, &self.doc.scoring).map_err(|e| e.to_string())?;
        let record = ScoreRecord::new(ev.image_id.clone(), triple);
        let reasoned = reason_all(
            std::slice::from_ref(&record),
            &self.doc,
            self.doc.reasoning.decision_threshold,
        )
        .pop()
        .ok_or("no result")?;
        to_json(&json!({
            "image_id": ev.image_id,
            "label": self.labels[index].map_or("normal", |r| r.name()),
            "raw": record,
            "normalized": reasoned.normalized,
            "reason": reasoned.reason,
            "verdict": reasoned.classification.verdict,
            "boxes": ev.objects.iter().map(|o| o.bbox).collect::<Vec<_>>(),
        }))
    }
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Explorer, JsError> {
        js(Explorer::build(seed))
    }

    pub fn len(&self) -> usize {
        self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test.is_empty()
    }

    pub fn score(
        &self,
        index: usize,
        object_attr_shift: f64,
        scene_attr_shift: f64,
        dx: f64,
        dy: f64,
    ) -> Result<String, JsError> {
        let edit = Edit {
            object_attr_shift,
            scene_attr_shift,
            dx,
            dy,
        };
        js(self.score_json(index, edit))
    }
}

/// Planted 21-reason annotation table as CSV.
pub fn planted_csv(per_group: usize, seed: u64) -> Result<String, String> {
    let (m, _) = planted_annotation_matrix([per_group; 3], seed);
    let mut buf = Vec::new();
    m.write_csv(&mut buf).map_err(|e| e.to_string())?;
    String::from_utf8(buf).map_err(|e| e.to_string())
}

/// Dendrogram, k-way cut and reason grouping of an annotation CSV.
pub fn dendrogram_json(csv: &str, k: usize, linkage: &str) -> Result<String, String> {
    let linkage: Linkage = linkage.parse()?;
    let m = AnnotationMatrix::read_csv(csv.as_bytes()).map_err(|e| e.to_string())?;
    let d = agglomerate(&m.values, linkage).map_err(|e| e.to_string())?;
    let clusters = cut_k(&d, k).map_err(|e| e.to_string())?;
    let groups = group_reasons(&m, &clusters);
    to_json(&json!({
        "image_ids": m.image_ids,
        "reason_names": m.reason_names,
        "merges": d.merges,
        "clusters": clusters,
        "reason_groups": groups,
    }))
}

#[wasm_bindgen]
pub fn planted_annotations(per_group: usize, seed: u64) -> Result<String, JsError> {
    js(planted_csv(per_group, seed))
}

#[wasm_bindgen]
pub fn dendrogram(csv: &str, k: usize, linkage: &str) -> Result<String, JsError> {
    js(dendrogram_json(csv, k, linkage))
}
