//! Taxonomy discovery from human abnormality annotations.
//!
//! Images are embedded as 21-dimensional mean-response vectors, clustered
//! bottom-up with Ward's minimum-variance linkage on Euclidean distances, and
//! the dendrogram is cut into `k` image clusters. Each reason is then assigned
//! to the cluster in which it is answered most strongly.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoning::Reason;

/// The 21 fine-grained reasons, numbered 1..=21 (index 0 is reason 1).
pub const REASON_NAMES: [&str; 21] = [
    "Strange object contour",
    "Object in the shape of another object",
    "Object is not complete",
    "Missing part",
    "Misplaced part",
    "Weird shaped part",
    "Unexpected part",
    "Weird texture",
    "Weird color",
    "Atypical pattern",
    "Strange material",
    "Un-nameable shape",
    "Mixture of object classes",
    "Body posture",
    "Unknown object",
    "Weird combination of objects and scene",
    "Atypical object pose",
    "Strange location of the object",
    "Atypical object size",
    "Strange scene",
    "Strange event happening in the scene",
];

/// Coarse group of each fine-grained reason (same indexing as [`REASON_NAMES`]):
/// reasons 16–19 are context-centric, 20–21 scene-centric, the rest object-centric.
pub fn reason_group(index: usize) -> Reason {
    match index {
        15..=18 => Reason::Context,
        19 | 20 => Reason::Scene,
        _ => Reason::Object,
    }
}

/// The default grouping as a per-reason vector.
pub fn default_grouping() -> Vec<Reason> {
    (0..REASON_NAMES.len()).map(reason_group).collect()
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("k = {k} outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid annotation matrix: {0}")]
    InvalidMatrix(String),
    #[error("annotation table: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    pub image_ids: Vec<String>,
    pub reason_names: Vec<String>,
    /// `[image][reason]`, each entry the mean response in [0, 1].
    pub values: Vec<Vec<f64>>,
}

impl AnnotationMatrix {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let bad = |m: String| Err(TaxonomyError::InvalidMatrix(m));
        if self.values.len() < 2 {
            return bad(format!("{} rows, need at least 2", self.values.len()));
        }
        if self.image_ids.len() != self.values.len() {
            return bad(format!("{} ids for {} rows", self.image_ids.len(), self.values.len()));
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.reason_names.len() {
                return bad(format!(
                    "row {i} has {} entries for {} reasons",
                    row.len(),
                    self.reason_names.len()
                ));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return bad(format!("row {i} has entry {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Reads a delimited table: header `image_id,<reason>,...`, one image per row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TaxonomyError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let reason_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut image_ids = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut fields = rec.iter();
            image_ids.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| TaxonomyError::InvalidMatrix(format!("data row {}: {f:?}: {e}", line + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            values.push(row);
        }
        let m = Self {
            image_ids,
            reason_names,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TaxonomyError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["image_id".to_string()];
        header.extend(self.reason_names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.image_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Node ids: leaves are `0..n`, the node created by merge `i` is `n + i`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Number of leaves under the new node.
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub num_leaves: usize,
    pub merges: Vec<Merge>,
}

/// Cluster-distance update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Ward,
    Single,
    Complete,
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ward" => Ok(Linkage::Ward),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            _ => Err(format!("unknown linkage {s:?}")),
        }
    }
}

impl Linkage {
    /// Lance–Williams update of d(k, i∪j).
    fn update(self, d_ki: f64, d_kj: f64, d_ij: f64, n_i: f64, n_j: f64, n_k: f64) -> f64 {
        match self {
            Linkage::Single => d_ki.min(d_kj),
            Linkage::Complete => d_ki.max(d_kj),
            Linkage::Average => (n_i * d_ki + n_j * d_kj) / (n_i + n_j),
            Linkage::Ward => {
                let sq =
                    ((n_i + n_k) * d_ki * d_ki + (n_j + n_k) * d_kj * d_kj - n_k * d_ij * d_ij) / (n_i + n_j + n_k);
                sq.max(0.0).sqrt()
            }
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn ward_linkage(vectors: &[Vec<f64>]) -> Result<Dendrogram, TaxonomyError> {
    agglomerate(vectors, Linkage::Ward)
}

/// Bottom-up agglomeration. At each step the closest pair of active clusters is
/// merged; equal distances go to the smallest `(left id, right id)`.
pub fn agglomerate(vectors: &[Vec<f64>], linkage: Linkage) -> Result<Dendrogram, TaxonomyError> {
    let n = vectors.len();
    if n < 2 {
        return Err(TaxonomyError::TooFewVectors(n));
    }
    let dim = vectors[0].len();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(TaxonomyError::DimensionMismatch {
                index,
                expected: dim,
                found: v.len(),
            });
        }
    }

    // dist[a][b] for slots a > b
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..a).map(|b| euclidean(&vectors[a], &vectors[b])).collect())
        .collect();
    let d = |dist: &Vec<Vec<f64>>, a: usize, b: usize| if a > b { dist[a][b] } else { dist[b][a] };

    let mut node_of_slot: Vec<usize> = (0..n).collect();
    let mut size_of_slot = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let dab = d(&dist, a, b);
                let (na, nb) = (node_of_slot[a], node_of_slot[b]);
                let key = (na.min(nb), na.max(nb));
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _, _)) => dab < *bd || (dab == *bd && key < *bkey),
                };
                if better {
                    best = Some((dab, key, a, b));
                }
            }
        }
        let (height, (left, right), a, b) = best.expect("at least two active clusters");
        let (keep, drop) = (a.min(b), a.max(b));
        let (n_i, n_j) = (size_of_slot[keep] as f64, size_of_slot[drop] as f64);
        for &k in &active {
            if k == keep || k == drop {
                continue;
            }
            let updated = linkage.update(
                d(&dist, k, keep),
                d(&dist, k, drop),
                height,
                n_i,
                n_j,
                size_of_slot[k] as f64,
            );
            if k > keep {
                dist[k][keep] = updated;
            } else {
                dist[keep][k] = updated;
            }
        }
        size_of_slot[keep] += size_of_slot[drop];
        node_of_slot[keep] = n + step;
        active.retain(|&s| s != drop);
        merges.push(Merge {
            left,
            right,
            height,
            size: size_of_slot[keep],
        });
    }
    Ok(Dendrogram { num_leaves: n, merges })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cluster ids after undoing the last `k − 1` merges. Ids are numbered in
/// order of each cluster's smallest member.
pub fn cut_k(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>, TaxonomyError> {
    let n = dendrogram.num_leaves;
    if k < 1 || k > n {
        return Err(TaxonomyError::InvalidK { k, n });
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    for (i, m) in dendrogram.merges.iter().take(n - k).enumerate() {
        let node = n + i;
        let (l, r) = (find(&mut parent, m.left), find(&mut parent, m.right));
        parent[l] = node;
        parent[r] = node;
    }
    let mut label_of_root = std::collections::HashMap::new();
    Ok((0..n)
        .map(|leaf| {
            let root = find(&mut parent, leaf);
            let next = label_of_root.len();
            *label_of_root.entry(root).or_insert(next)
        })
        .collect())
}

/// Assigns each reason (column) to the image cluster with the highest mean
/// response; ties go to the lower cluster id.
pub fn group_reasons(matrix: &AnnotationMatrix, clusters: &[usize]) -> Vec<usize> {
    let k = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; matrix.reason_names.len()]; k];
    let mut counts = vec![0usize; k];
    for (row, &c) in matrix.values.iter().zip(clusters) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    (0..matrix.reason_names.len())
        .map(|r| {
            let mut best = 0;
            let mut best_mean = f64::NEG_INFINITY;
            for c in 0..k {
                if counts[c] == 0 {
                    continue;
                }
                let mean = sums[c][r] / counts[c] as f64;
                if mean > best_mean {
                    best = c;
                    best_mean = mean;
                }
            }
            best
        })
        .collect()
}

impl Dendrogram {
    /// Indented rendering, root first; leaves show `labels[i]` when given.
    pub fn render_text(&self, labels: Option<&[String]>) -> String {
        let n = self.num_leaves;
        let mut out = String::new();
        if self.merges.is_empty() {
            return out;
        }
        let mut stack = vec![(2 * n - 2, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            let indent = "  ".repeat(depth);
            if node < n {
                let label = labels
                    .and_then(|l| l.get(node))
                    .map_or_else(|| node.to_string(), |s| s.clone());
                let _ = writeln!(out, "{indent}- {label}");
            } else {
                let m = &self.merges[node - n];
                let _ = writeln!(out, "{indent}+ node {node} height={:.6} size={}", m.height, m.size);
                stack.push((m.right, depth + 1));
                stack.push((m.left, depth + 1));
            }
        }
        out
    }
}
