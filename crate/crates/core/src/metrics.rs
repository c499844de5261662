//! Layout quality metrics: coverage, overlap, decisiveness, geometric
//! relation score and layout-space diversity.

use serde::{Deserialize, Serialize};

use crate::geometry::{box_above, infer_relation, GeometryError, LayoutSet};
use crate::graph::{SceneGraph, Vocab};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn owner_counts(ls: &LayoutSet, threshold: f64) -> Vec<usize> {
    let (h, w) = ls.grid();
    let mut counts = vec![0usize; h * w];
    for l in &ls.layouts {
        for (c, &v) in counts.iter_mut().zip(&l.data) {
            *c += (v >= threshold) as usize;
        }
    }
    counts
}

/// Fraction of pixels owned by at least one thresholded layout.
pub fn coverage(ls: &LayoutSet, threshold: f64) -> f64 {
    let counts = owner_counts(ls, threshold);
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().filter(|&&c| c >= 1).count() as f64 / counts.len() as f64
}

/// Fraction of pixels claimed by two or more thresholded layouts.
pub fn overlap(ls: &LayoutSet, threshold: f64) -> f64 {
    let counts = owner_counts(ls, threshold);
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().filter(|&&c| c >= 2).count() as f64 / counts.len() as f64
}

fn squared_distance_from_half(ls: &LayoutSet) -> f64 {
    ls.layouts.iter().flat_map(|l| &l.data).map(|&v| (0.5 - v) * (0.5 - v)).sum()
}

/// Decisiveness normalized by `n * H * W`, so binary layouts score 1.
pub fn decisiveness(ls: &LayoutSet) -> f64 {
    let (h, w) = ls.grid();
    let denom = (ls.len() * h * w) as f64;
    if denom == 0.0 {
        return 0.0;
    }
    4.0 * squared_distance_from_half(ls) / denom
}

/// Decisiveness normalized by `H * W` only; binary layouts score `n`.
pub fn decisiveness_per_pixel(ls: &LayoutSet) -> f64 {
    let (h, w) = ls.grid();
    if h * w == 0 {
        return 0.0;
    }
    4.0 * squared_distance_from_half(ls) / (h * w) as f64
}

/// Share of the graph's geometric edges whose relation is reproduced by the
/// boxes of pixels strictly above 0.5. Edges touching an empty layout count
/// as misses. `None` when the graph has no geometric edges.
pub fn grs(ls: &LayoutSet, g: &SceneGraph, vocab: &Vocab) -> Option<f64> {
    let boxes: Vec<Option<_>> = ls.layouts.iter().map(|l| box_above(l, DEFAULT_THRESHOLD).ok()).collect();
    let mut total = 0usize;
    let mut hits = 0usize;
    for e in g.real_edges(vocab) {
        let Some(expected) = vocab.relation_of(e.rel) else { continue };
        total += 1;
        if let (Some(Some(bs)), Some(Some(bo))) = (boxes.get(e.src), boxes.get(e.dst)) {
            hits += (infer_relation(bs, bo) == expected) as usize;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Mean normalized L1 distance over all unordered pairs of layout sets
/// generated from one graph.
pub fn layout_diversity(sets: &[LayoutSet]) -> Result<f64, GeometryError> {
    if sets.len() < 2 {
        return Err(GeometryError::Shape("diversity needs at least two layout sets".into()));
    }
    let n = sets[0].len();
    let grid = sets[0].grid();
    if sets.iter().any(|s| s.len() != n || s.grid() != grid) {
        return Err(GeometryError::Shape("layout sets differ in object count or grid".into()));
    }
    let norm = (n * grid.0 * grid.1) as f64;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            let dist: f64 = sets[a]
                .layouts
                .iter()
                .zip(&sets[b].layouts)
                .flat_map(|(x, y)| x.data.iter().zip(&y.data))
                .map(|(p, q)| (p - q).abs())
                .sum();
            sum += dist / norm;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: usize,
    pub coverage: f64,
    pub overlap: f64,
    pub decisiveness: f64,
    pub grs: Option<f64>,
    pub diversity: Option<f64>,
}

impl SceneMetrics {
    pub fn compute(scene_id: usize, ls: &LayoutSet, g: &SceneGraph, vocab: &Vocab, threshold: f64) -> Self {
        SceneMetrics {
            scene_id,
            coverage: coverage(ls, threshold),
            overlap: overlap(ls, threshold),
            decisiveness: decisiveness(ls),
            grs: grs(ls, g, vocab),
            diversity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub threshold: f64,
    pub mask_size: usize,
    pub decisiveness_normalization: String,
    pub samples_per_graph: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coverage: f64,
    pub overlap: f64,
    pub decisiveness: f64,
    /// Decisiveness normalized by `H * W` alone.
    pub decisiveness_per_pixel: f64,
    pub grs: f64,
    pub diversity: Option<f64>,
    /// Mean coverage over every generated sample, including diversity draws.
    pub sample_coverage: f64,
    pub scenes: Vec<SceneMetrics>,
    pub config: MetricsConfig,
}

impl MetricsReport {
    /// Averages per-scene metrics; GRS and diversity skip scenes where they are undefined.
    pub fn aggregate(scenes: Vec<SceneMetrics>, decisiveness_per_pixel: f64, sample_coverage: f64, config: MetricsConfig) -> Self {
        let count = scenes.len().max(1) as f64;
        let mean = |f: &dyn Fn(&SceneMetrics) -> f64| scenes.iter().map(f).sum::<f64>() / count;
        let optional_mean = |f: &dyn Fn(&SceneMetrics) -> Option<f64>| {
            let vals: Vec<f64> = scenes.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        MetricsReport {
            coverage: mean(&|s| s.coverage),
            overlap: mean(&|s| s.overlap),
            decisiveness: mean(&|s| s.decisiveness),
            decisiveness_per_pixel,
            grs: optional_mean(&|s| s.grs).unwrap_or(0.0),
            diversity: optional_mean(&|s| s.diversity),
            sample_coverage,
            scenes,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table with the columns COV, OVL, DEC, GRS, DIV.
    pub fn table(&self, label: &str) -> String {
        let div = self.diversity.map_or_else(|| "-".to_string(), |d| format!("{d:.3}"));
        format!(
            "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7}\n{:<16} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7}\n",
            "model", "COV↑", "OVL↓", "DEC↑", "GRS↑", "DIV↑", label, self.coverage, self.overlap, self.decisiveness, self.grs, div
        )
    }
}
