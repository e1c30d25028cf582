//! Synthetic data from a planted typicality model.
//!
//! Normal images follow the planted model. Abnormal images are normal draws
//! with one planted defect: shifted object attributes (object), an
//! out-of-context category or a displaced box (context, alternating), or
//! shifted scene attributes (scene).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evaluation::{ground_truth_reason_scores, GroundTruth};
use crate::reasoning::Reason;
use crate::taxonomy::{default_grouping, AnnotationMatrix, REASON_NAMES};
use crate::typicality::{
    BoundingBox, CategoryVocab, ImageEvidence, NormalTrainingRecord, ObjectAnnotation, ObjectEvidence,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub object_categories: usize,
    pub scene_categories: usize,
    /// Attributes whose mean depends on the category; the rest are pure noise.
    pub informative_object_attrs: usize,
    pub noisy_object_attrs: usize,
    pub informative_scene_attrs: usize,
    pub noisy_scene_attrs: usize,
    pub objects_per_image: usize,
    /// Categories that are common in each scene.
    pub frequent_objects_per_scene: usize,
    /// Ratio between the weights of successive common categories of a scene.
    pub frequent_decay: f64,
    /// Total P(O|S) mass spread over the uncommon categories of a scene.
    pub rare_object_mass: f64,
    /// Mean response of an informative attribute when present / absent.
    pub attr_present: f64,
    pub attr_absent: f64,
    pub attr_sigma: f64,
    /// Mean probability mass the classifiers put on wrong classes; drawn
    /// from an exponential and capped at one half.
    pub object_confusion: f64,
    pub scene_confusion: f64,
    /// Spread of a noisy attribute's response around 0.5.
    pub noisy_attr_spread: f64,
    /// Chance that a noisy attribute's response is replaced by a uniform draw.
    pub noisy_attr_glitch: f64,
    /// Chance that an object other than the first is a small background
    /// object: any category, area scaled by `incidental_scale`, anywhere in
    /// the image.
    pub incidental_rate: f64,
    pub incidental_scale: f64,
    /// Standard deviation of a box centre around its category's position.
    pub box_jitter: f64,
    /// Gamma shape of a category's relative-size distribution.
    pub size_shape: f64,
    /// Range from which each category's mean relative size is drawn.
    pub size_mean: [f64; 2],
    /// Grid used to express the location displacement.
    pub grid_size: usize,
    pub normal_train: usize,
    pub normal_test: usize,
    pub abnormal_per_reason: usize,
    /// Attribute shift of abnormal images, in units of `attr_sigma`.
    pub attribute_displacement: f64,
    /// Share of context anomalies drawn from the scene's rarest categories
    /// instead of its usual ones.
    pub cooccurrence_inversion: f64,
    /// Box shift of abnormal images, in grid cells.
    pub location_displacement: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            object_categories: 6,
            scene_categories: 3,
            informative_object_attrs: 6,
            noisy_object_attrs: 4,
            informative_scene_attrs: 5,
            noisy_scene_attrs: 3,
            objects_per_image: 2,
            frequent_objects_per_scene: 3,
            frequent_decay: 0.5,
            rare_object_mass: 0.0,
            attr_present: 0.7,
            attr_absent: 0.3,
            attr_sigma: 0.06,
            object_confusion: 0.03,
            scene_confusion: 0.03,
            noisy_attr_spread: 0.03,
            noisy_attr_glitch: 0.1,
            incidental_rate: 0.1,
            incidental_scale: 0.05,
            box_jitter: 0.02,
            size_shape: 36.0,
            size_mean: [0.04, 0.09],
            grid_size: 8,
            normal_train: 500,
            normal_test: 200,
            abnormal_per_reason: 100,
            attribute_displacement: 3.0,
            cooccurrence_inversion: 1.0,
            location_displacement: 3.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(format!("synthetic: {m}")));
        if self.object_categories == 0 || self.scene_categories == 0 {
            return fail("need at least one object and one scene category".into());
        }
        if self.informative_object_attrs < 2 || self.informative_scene_attrs < 2 {
            return fail("need at least two informative attributes of each kind".into());
        }
        if self.informative_object_attrs > 20 || self.informative_scene_attrs > 20 {
            return fail("at most 20 informative attributes of each kind".into());
        }
        let n = self.informative_object_attrs;
        let object_patterns: usize = (object_min_present(n)..n).map(|k| binomial(n, k)).sum();
        if self.object_categories > object_patterns {
            return fail(format!(
                "{} object categories need more informative attributes",
                self.object_categories
            ));
        }
        if self.scene_categories > (1usize << self.informative_scene_attrs) - 2 {
            return fail(format!(
                "{} scenes need more informative attributes",
                self.scene_categories
            ));
        }
        if self.frequent_objects_per_scene == 0 || self.frequent_objects_per_scene > self.object_categories {
            return fail("frequent_objects_per_scene outside 1..=object_categories".into());
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.frequent_decay > 0.0 && self.frequent_decay <= 1.0) {
            return fail("frequent_decay outside (0, 1]".into());
        }
        if !(unit(self.rare_object_mass) && self.rare_object_mass < 1.0) {
            return fail("rare_object_mass outside [0, 1)".into());
        }
        if !(unit(self.attr_present) && unit(self.attr_absent) && self.attr_sigma > 0.0) {
            return fail("attribute means must lie in [0, 1] with positive sigma".into());
        }
        if !(self.object_confusion >= 0.0 && self.scene_confusion >= 0.0) {
            return fail("confusion means must be non-negative".into());
        }
        if !(self.noisy_attr_spread >= 0.0 && unit(self.noisy_attr_glitch)) {
            return fail("noisy_attr_spread must be non-negative and noisy_attr_glitch in [0, 1]".into());
        }
        if !(unit(self.incidental_rate) && self.incidental_scale > 0.0 && self.incidental_scale <= 1.0) {
            return fail("incidental_rate must lie in [0, 1] and incidental_scale in (0, 1]".into());
        }
        let [smin, smax] = self.size_mean;
        if !(smin > 0.0 && smin <= smax && smax < 0.25 && self.size_shape > 0.0) {
            return fail("size_mean must satisfy 0 < lo <= hi < 0.25 with positive size_shape".into());
        }
        if self.grid_size == 0 || self.box_jitter < 0.0 {
            return fail("grid_size must be positive and box_jitter non-negative".into());
        }
        // Zero magnitudes are allowed: they produce a null-effect data set.
        if !(self.attribute_displacement >= 0.0 && self.location_displacement >= 0.0) {
            return fail("displacements must be non-negative".into());
        }
        if !unit(self.cooccurrence_inversion) {
            return fail("cooccurrence_inversion outside [0, 1]".into());
        }
        Ok(())
    }

    fn num_object_attrs(&self) -> usize {
        self.informative_object_attrs + self.noisy_object_attrs
    }

    fn num_scene_attrs(&self) -> usize {
        self.informative_scene_attrs + self.noisy_scene_attrs
    }
}

/// Ground-truth parameters the synthetic images are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub vocab: CategoryVocab,
    /// Presence of each informative object attribute, `[category][attr]`.
    pub object_profiles: Vec<Vec<bool>>,
    /// Presence of each informative scene attribute, `[scene][attr]`.
    pub scene_profiles: Vec<Vec<bool>>,
    /// `[scene][category]`
    pub object_given_scene: Vec<Vec<f64>>,
    /// Typical box centre per category.
    pub centers: Vec<[f64; 2]>,
    /// Mean relative size per category.
    pub size_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub planted: PlantedModel,
    pub training: Vec<NormalTrainingRecord>,
    pub test: Vec<ImageEvidence>,
    pub truth: Vec<GroundTruth>,
    /// Simulated 21-reason responses for the abnormal test images.
    pub annotations: AnnotationMatrix,
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Object categories show at least half of the informative attributes.
fn object_min_present(n: usize) -> usize {
    n.div_ceil(2).max(2)
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Distinct presence patterns over `n` attributes with popcount in `min..=n-1`.
fn profiles(rng: &mut ChaCha8Rng, n: usize, count: usize, min_present: u32) -> Vec<Vec<bool>> {
    let mut patterns: Vec<u32> = (1..(1u32 << n) - 1).filter(|p| p.count_ones() >= min_present).collect();
    patterns.shuffle(rng);
    patterns[..count]
        .iter()
        .map(|p| (0..n).map(|i| p >> i & 1 == 1).collect())
        .collect()
}

fn plant(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> PlantedModel {
    let (v, j, f) = (
        spec.object_categories,
        spec.scene_categories,
        spec.frequent_objects_per_scene,
    );
    let vocab = CategoryVocab {
        object_categories: names("object", v),
        scene_categories: names("scene", j),
        object_attributes: names("object_attr", spec.num_object_attrs()),
        scene_attributes: names("scene_attr", spec.num_scene_attrs()),
    };
    let object_given_scene = (0..j)
        .map(|s| {
            let weights: Vec<f64> = (0..f).map(|t| spec.frequent_decay.powi(t as i32)).collect();
            let total: f64 = weights.iter().sum();
            let rare = if f == v { 0.0 } else { spec.rare_object_mass };
            let mut row = vec![if f == v { 0.0 } else { rare / (v - f) as f64 }; v];
            for (t, w) in weights.iter().enumerate() {
                row[(s * v / j + t) % v] = (1.0 - rare) * w / total;
            }
            row
        })
        .collect();
    PlantedModel {
        vocab,
        object_profiles: profiles(
            rng,
            spec.informative_object_attrs,
            v,
            object_min_present(spec.informative_object_attrs) as u32,
        ),
        scene_profiles: profiles(rng, spec.informative_scene_attrs, j, 1),
        object_given_scene,
        centers: (0..v)
            .map(|_| [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)])
            .collect(),
        size_means: (0..v)
            .map(|_| rng.random_range(spec.size_mean[0]..=spec.size_mean[1]))
            .collect(),
    }
}

fn categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Classifier output: exponential wrong-class mass with mean `confusion`,
/// spread at random over the other classes.
fn posterior(rng: &mut ChaCha8Rng, k: usize, truth: usize, confusion: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let wrong = if confusion > 0.0 {
        Exp::new(1.0 / confusion).expect("positive rate").sample(rng)
    } else {
        0.0
    };
    let conf = 1.0 - wrong.min(0.5);
    let weights: Vec<f64> = (0..k)
        .map(|i| if i == truth { 0.0 } else { rng.random::<f64>() + 1e-3 })
        .collect();
    let rest: f64 = weights.iter().sum();
    let mut p: Vec<f64> = weights.iter().map(|w| (1.0 - conf) * w / rest).collect();
    p[truth] = conf;
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    planted: &'a PlantedModel,
    noise: Normal<f64>,
}

struct DrawnObject {
    incidental: bool,
    evidence: ObjectEvidence,
    annotation: ObjectAnnotation,
}

struct DrawnImage {
    scene: usize,
    evidence: ImageEvidence,
    scene_annotations: Vec<Option<bool>>,
    objects: Vec<DrawnObject>,
}

impl DrawnImage {
    /// The object an anomaly is planted on: the first one that is not a small
    /// background object, or the first object if all of them are.
    fn target(&self) -> Option<usize> {
        if self.objects.is_empty() {
            return None;
        }
        Some(self.objects.iter().position(|o| !o.incidental).unwrap_or(0))
    }
}

impl Generator<'_> {
    fn attributes(&self, rng: &mut ChaCha8Rng, profile: &[bool], noisy: usize) -> (Vec<f64>, Vec<Option<bool>>) {
        let mut values = Vec::with_capacity(profile.len() + noisy);
        let mut truth = Vec::with_capacity(profile.len() + noisy);
        for &present in profile {
            let mean = if present {
                self.spec.attr_present
            } else {
                self.spec.attr_absent
            };
            values.push((mean + self.noise.sample(rng)).clamp(0.0, 1.0));
            truth.push(Some(present));
        }
        for _ in 0..noisy {
            let v = if rng.random::<f64>() < self.spec.noisy_attr_glitch {
                rng.random::<f64>()
            } else {
                0.5 + self.spec.noisy_attr_spread * self.noise.sample(rng) / self.spec.attr_sigma
            };
            values.push(v.clamp(0.0, 1.0));
            truth.push(Some(rng.random::<bool>()));
        }
        (values, truth)
    }

    fn object(&self, rng: &mut ChaCha8Rng, category: usize, incidental: bool) -> DrawnObject {
        let spec = self.spec;
        let p = self.planted;
        let mean = p.size_means[category];
        let gamma = Gamma::new(spec.size_shape, mean / spec.size_shape).expect("validated size parameters");
        let mut area = gamma.sample(rng).clamp(1e-4, 0.5);
        if incidental {
            area *= spec.incidental_scale;
        }
        let side = area.sqrt();
        let jitter = Normal::new(0.0, spec.box_jitter).expect("validated jitter");
        let [cx, cy] = if incidental {
            [rng.random(), rng.random()]
        } else {
            p.centers[category]
        };
        let x = (cx + jitter.sample(rng) - side / 2.0).clamp(0.0, 1.0 - side);
        let y = (cy + jitter.sample(rng) - side / 2.0).clamp(0.0, 1.0 - side);
        let (attrs, truth) = self.attributes(rng, &p.object_profiles[category], spec.noisy_object_attrs);
        DrawnObject {
            incidental,
            evidence: ObjectEvidence {
                object_probs: posterior(rng, spec.object_categories, category, spec.object_confusion),
                object_attrs: attrs,
                bbox: BoundingBox::new(x, y, side, side),
                relative_size: None,
            },
            annotation: ObjectAnnotation {
                object_label: category,
                attr_annotations: truth,
                cell_ratios: None,
            },
        }
    }

    fn image(&self, rng: &mut ChaCha8Rng, id: String) -> DrawnImage {
        let spec = self.spec;
        let p = self.planted;
        let scene = rng.random_range(0..spec.scene_categories);
        let (scene_attrs, scene_annotations) = self.attributes(rng, &p.scene_profiles[scene], spec.noisy_scene_attrs);
        let scene_probs = posterior(rng, spec.scene_categories, scene, spec.scene_confusion);
        let objects: Vec<DrawnObject> = (0..spec.objects_per_image)
            .map(|k| {
                if k > 0 && rng.random::<f64>() < spec.incidental_rate {
                    let c = rng.random_range(0..spec.object_categories);
                    self.object(rng, c, true)
                } else {
                    let c = categorical(rng, &p.object_given_scene[scene]);
                    self.object(rng, c, false)
                }
            })
            .collect();
        DrawnImage {
            scene,
            evidence: ImageEvidence {
                image_id: id,
                scene_probs,
                scene_attrs,
                objects: objects.iter().map(|o| o.evidence.clone()).collect(),
            },
            scene_annotations,
            objects,
        }
    }

    fn shift(&self) -> f64 {
        self.spec.attribute_displacement * self.spec.attr_sigma
    }

    /// Lowers the present informative attributes of the target object.
    fn object_anomaly(&self, image: &mut DrawnImage) {
        let shift = self.shift();
        if let Some(k) = image.target() {
            let obj = &mut image.objects[k];
            let profile = &self.planted.object_profiles[obj.annotation.object_label];
            for (a, &present) in obj.evidence.object_attrs.iter_mut().zip(profile) {
                if present {
                    *a = (*a - shift).clamp(0.0, 1.0);
                }
            }
            image.evidence.objects[k] = obj.evidence.clone();
        }
    }

    /// Moves every informative scene attribute toward its opposite state.
    fn scene_anomaly(&self, image: &mut DrawnImage) {
        let shift = self.shift();
        let profile = &self.planted.scene_profiles[image.scene];
        for (a, &present) in image.evidence.scene_attrs.iter_mut().zip(profile) {
            *a = if present { *a - shift } else { *a + shift }.clamp(0.0, 1.0);
        }
    }

    /// Replaces the target object with one drawn against the co-occurrence table.
    fn cooccurrence_anomaly(&self, rng: &mut ChaCha8Rng, image: &mut DrawnImage) {
        let Some(k) = image.target() else {
            return;
        };
        let row = &self.planted.object_given_scene[image.scene];
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let rarest = row.iter().filter(|&&p| p == min).count() as f64;
        let s = self.spec.cooccurrence_inversion;
        let weights: Vec<f64> = row
            .iter()
            .map(|&p| (1.0 - s) * p + if p == min { s / rarest } else { 0.0 })
            .collect();
        let c = categorical(rng, &weights);
        let incidental = image.objects[k].incidental;
        image.objects[k] = self.object(rng, c, incidental);
        image.evidence.objects[k] = image.objects[k].evidence.clone();
    }

    /// Shifts the target object's box horizontally, toward the wider side.
    fn location_anomaly(&self, image: &mut DrawnImage) {
        let shift = self.spec.location_displacement / self.spec.grid_size as f64;
        if let Some(k) = image.target() {
            let b = &mut image.evidence.objects[k].bbox;
            let dir = if b.x + b.w / 2.0 < 0.5 { 1.0 } else { -1.0 };
            b.x = (b.x + dir * shift).clamp(0.0, 1.0 - b.w);
            image.objects[k].evidence.bbox = *b;
        }
    }
}

/// Simulated human responses for one abnormal image: high on the reasons of
/// its group, low elsewhere.
pub fn simulated_responses(rng: &mut impl Rng, reason: Reason, grouping: &[Reason]) -> Vec<f64> {
    grouping
        .iter()
        .map(|&g| {
            if g == reason {
                rng.random_range(0.5..=1.0)
            } else {
                rng.random_range(0.0..=0.25)
            }
        })
        .collect()
}

/// An annotation matrix with `rows_per_group[r]` images of each reason group,
/// in group order.
pub fn planted_annotation_matrix(rows_per_group: [usize; 3], seed: u64) -> (AnnotationMatrix, Vec<Reason>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grouping = default_grouping();
    let mut values = Vec::new();
    let mut truth = Vec::new();
    for (reason, &n) in Reason::ALL.iter().zip(&rows_per_group) {
        for _ in 0..n {
            values.push(simulated_responses(&mut rng, *reason, &grouping));
            truth.push(*reason);
        }
    }
    let m = AnnotationMatrix {
        image_ids: (0..values.len()).map(|i| format!("img-{i:05}")).collect(),
        reason_names: REASON_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    };
    (m, truth)
}

const STREAM_PLANT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_ANNOTATE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a planted model, normal training records and a labelled test set.
/// The planted model depends only on the seed and the model-shape fields.
pub fn synth_generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset, PipelineError> {
    spec.validate()?;
    let planted = plant(spec, &mut stream(seed, STREAM_PLANT));
    let gen = Generator {
        spec,
        planted: &planted,
        noise: Normal::new(0.0, spec.attr_sigma).expect("validated sigma"),
    };

    let mut rng = stream(seed, STREAM_TRAIN);
    let training = (0..spec.normal_train)
        .map(|i| {
            let img = gen.image(&mut rng, format!("train-{i:05}"));
            NormalTrainingRecord {
                evidence: img.evidence,
                scene_label: img.scene,
                scene_attr_annotations: Some(img.scene_annotations),
                object_annotations: img.objects.into_iter().map(|o| o.annotation).collect(),
            }
        })
        .collect();

    let mut rng = stream(seed, STREAM_TEST);
    let mut labels: Vec<Option<Reason>> = vec![None; spec.normal_test];
    for r in Reason::ALL {
        labels.extend(std::iter::repeat_n(Some(r), spec.abnormal_per_reason));
    }
    labels.shuffle(&mut rng);
    let mut context_count = 0usize;
    let mut test = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let mut img = gen.image(&mut rng, format!("test-{i:05}"));
        match label {
            None => {}
            Some(Reason::Object) => gen.object_anomaly(&mut img),
            Some(Reason::Scene) => gen.scene_anomaly(&mut img),
            Some(Reason::Context) => {
                if context_count.is_multiple_of(2) {
                    gen.cooccurrence_anomaly(&mut rng, &mut img);
                } else {
                    gen.location_anomaly(&mut img);
                }
                context_count += 1;
            }
        }
        test.push(img.evidence);
    }

    let mut rng = stream(seed, STREAM_ANNOTATE);
    let grouping = default_grouping();
    let mut annotations = AnnotationMatrix {
        image_ids: Vec::new(),
        reason_names: REASON_NAMES.iter().map(|s| s.to_string()).collect(),
        values: Vec::new(),
    };
    let truth = test
        .iter()
        .zip(&labels)
        .map(|(ev, &reason)| {
            let reason_scores = reason.map(|r| {
                let row = simulated_responses(&mut rng, r, &grouping);
                let gt = ground_truth_reason_scores(&row, &grouping);
                annotations.image_ids.push(ev.image_id.clone());
                annotations.values.push(row);
                gt
            });
            GroundTruth {
                image_id: ev.image_id.clone(),
                reason,
                reason_scores,
            }
        })
        .collect();

    Ok(SyntheticDataset {
        planted,
        training,
        test,
        truth,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            normal_train: 40,
            normal_test: 10,
            abnormal_per_reason: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn zero_counts_give_empty_sets() {
        let spec = SyntheticSpec {
            normal_train: 0,
            normal_test: 0,
            abnormal_per_reason: 0,
            ..SyntheticSpec::default()
        };
        let d = synth_generate(&spec, 1).unwrap();
        assert!(d.training.is_empty() && d.test.is_empty() && d.truth.is_empty());
        assert!(d.annotations.values.is_empty());
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            synth_generate(&small(), 5).unwrap(),
            synth_generate(&small(), 5).unwrap()
        );
        assert_ne!(
            synth_generate(&small(), 5).unwrap().test,
            synth_generate(&small(), 6).unwrap().test
        );
    }

    #[test]
    fn records_are_valid_and_labelled() {
        let d = synth_generate(&small(), 11).unwrap();
        let v = &d.planted.vocab;
        for r in &d.training {
            r.evidence.validate(v).unwrap();
        }
        for e in &d.test {
            e.validate(v).unwrap();
        }
        assert_eq!(d.test.len(), 22);
        for r in Reason::ALL {
            assert_eq!(d.truth.iter().filter(|t| t.reason == Some(r)).count(), 4);
        }
        assert_eq!(d.annotations.values.len(), 12);
        for t in d.truth.iter().filter(|t| t.reason.is_some()) {
            let s = t.reason_scores.unwrap();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(
                Reason::ALL[(0..3).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap()],
                t.reason.unwrap()
            );
        }
    }

    #[test]
    fn planted_model_ignores_counts() {
        let a = synth_generate(&small(), 3).unwrap().planted;
        let b = synth_generate(
            &SyntheticSpec {
                normal_train: 7,
                ..small()
            },
            3,
        )
        .unwrap()
        .planted;
        assert_eq!(a, b);
    }

    #[test]
    fn profiles_are_distinct() {
        let p = synth_generate(&small(), 2).unwrap().planted;
        for i in 0..p.object_profiles.len() {
            for j in 0..i {
                assert_ne!(p.object_profiles[i], p.object_profiles[j]);
            }
            assert!(p.object_profiles[i].iter().filter(|&&x| x).count() >= 2);
        }
        for row in &p.object_given_scene {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec {
            cooccurrence_inversion: 1.5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            object_categories: 50,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            attribute_displacement: 0.0,
            location_displacement: 0.0,
            ..small()
        }
        .validate()
        .is_ok());
    }
}
