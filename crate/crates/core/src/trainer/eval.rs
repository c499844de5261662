use rayon::prelude::*;

use super::{generate, Prepared, TrainError};
use crate::geometry::LayoutSet;
use crate::graph::{SceneGraph, Vocab};
use crate::metrics::{coverage, decisiveness_per_pixel, layout_diversity, MetricsConfig, MetricsReport, SceneMetrics, DEFAULT_THRESHOLD};
use crate::nn::{Forward, Model};
use crate::scenes::Scene;
use crate::seeding::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Generations per graph; diversity needs at least two.
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { samples: 1, seed: 0, threshold: DEFAULT_THRESHOLD }
    }
}

/// Layouts for one scene with eval-mode normalization.
pub fn generate_layouts(model: &Model, p: &Prepared, seed: u64) -> Result<LayoutSet, TrainError> {
    layouts_for_graph(model, &p.graph, seed)
}

/// Layouts for a dummy-augmented graph with eval-mode normalization.
pub fn layouts_for_graph(model: &Model, graph: &SceneGraph, seed: u64) -> Result<LayoutSet, TrainError> {
    let mut f = Forward::new(&model.store, false);
    f.frozen = true;
    let gen = generate(model, &mut f, graph, seed)?;
    let t = f.tape.value(gen.layouts);
    Ok(LayoutSet::from_flat(t.shape[0], t.shape[2], t.shape[3], &t.data))
}

pub fn sample_seed(seed: u64, scene: usize, sample: usize) -> u64 {
    seeding::derive(seeding::derive(seed, tags::EVAL, scene as u64), tags::EVAL, sample as u64)
}

fn config(model_mask: usize, opts: &EvalOptions) -> MetricsConfig {
    MetricsConfig {
        threshold: opts.threshold,
        mask_size: model_mask,
        decisiveness_normalization: "n*H*W".into(),
        samples_per_graph: opts.samples,
    }
}

/// Metrics of the model's generations on `scenes`; the first sample of each
/// graph feeds COV/OVL/DEC/GRS, all samples feed diversity and sample coverage.
pub fn evaluate(model: &Model, vocab: &Vocab, scenes: &[Prepared], opts: &EvalOptions) -> Result<MetricsReport, TrainError> {
    let per_scene: Vec<Result<(SceneMetrics, f64, f64), TrainError>> = scenes
        .par_iter()
        .map(|p| {
            let samples = (0..opts.samples)
                .map(|j| generate_layouts(model, p, sample_seed(opts.seed, p.id, j)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut m = SceneMetrics::compute(p.id, &samples[0], &p.graph, vocab, opts.threshold);
            if samples.len() >= 2 {
                m.diversity = Some(layout_diversity(&samples)?);
            }
            let sample_cov = samples.iter().map(|s| coverage(s, opts.threshold)).sum::<f64>() / samples.len() as f64;
            Ok((m, decisiveness_per_pixel(&samples[0]), sample_cov))
        })
        .collect();
    let mut metrics = Vec::with_capacity(scenes.len());
    let (mut dec_pp, mut sample_cov) = (0.0, 0.0);
    for r in per_scene {
        let (m, d, c) = r?;
        metrics.push(m);
        dec_pp += d;
        sample_cov += c;
    }
    let count = scenes.len().max(1) as f64;
    Ok(MetricsReport::aggregate(metrics, dec_pp / count, sample_cov / count, config(model.config.mask_size, opts)))
}

/// Metrics of the corpus's own layouts.
pub fn evaluate_ground_truth(scenes: &[Scene], vocab: &Vocab, opts: &EvalOptions) -> MetricsReport {
    let per_scene: Vec<(SceneMetrics, f64)> = scenes
        .par_iter()
        .map(|s| {
            let ls = s.layouts();
            (SceneMetrics::compute(s.id, &ls, &s.graph, vocab, opts.threshold), decisiveness_per_pixel(&ls))
        })
        .collect();
    let count = scenes.len().max(1) as f64;
    let dec_pp = per_scene.iter().map(|x| x.1).sum::<f64>() / count;
    let metrics: Vec<SceneMetrics> = per_scene.into_iter().map(|x| x.0).collect();
    let sample_cov = metrics.iter().map(|m| m.coverage).sum::<f64>() / count;
    let opts = EvalOptions { samples: 1, ..*opts };
    MetricsReport::aggregate(metrics, dec_pp, sample_cov, config(0, &opts))
}
