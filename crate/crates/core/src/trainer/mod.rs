//! Adversarial training: alternating discriminator and generator substeps,
//! evaluation, and checkpoints.

pub mod checkpoint;
mod eval;
pub mod gradcheck;
mod optim;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::autodiff::{Gradients, Tensor, Var};
use crate::geometry::{box_from_layout, mask_from_layout, GeometryError};
use crate::graph::{GraphError, SceneGraph, Vocab};
use crate::nn::{sample_pairs, BaselineOutput, Forward, GeneratorKind, Model, ModelConfig, NnError};
use crate::objectives::{self, LossWeights, ObjectiveError, PairLabel};
use crate::scenes::Scene;
use crate::seeding::{self, tags};

pub use eval::{evaluate, evaluate_ground_truth, generate_layouts, layouts_for_graph, sample_seed, EvalOptions};
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dataset {field} is {dataset} but the config expects {config}")]
    DatasetMismatch { field: &'static str, config: usize, dataset: usize },
    #[error("no training scenes")]
    EmptyDataset,
    #[error("non-finite {term} at step {step} on scene {scene_id}")]
    NonFinite { step: u64, scene_id: usize, term: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config differs from checkpoint at: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Drop the pairwise discriminator and its adversarial term.
    pub disable_discriminator: bool,
    /// Drop the supervised layout term.
    pub disable_layout_loss: bool,
    /// Train the box + mask generator instead of the refinement stack.
    pub baseline_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub steps: u64,
    /// Evaluate every this many steps; 0 disables periodic evaluation.
    pub eval_every: u64,
    /// Generations per graph during evaluation.
    pub eval_samples: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: AdamConfig::default(),
            batch_size: 8,
            steps: 20_000,
            eval_every: 0,
            eval_samples: 1,
            seed: 0,
            ablation: Ablation::default(),
        }
    }
}

/// Keys that may change between a checkpoint and a resumed run.
const RESUMABLE_KEYS: [&str; 3] = ["steps", "eval_every", "eval_samples"];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.eval_samples == 0 {
            return Err(TrainError::Config("eval_samples must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.lr_generator > 0.0 && o.lr_discriminator > 0.0 && o.eps > 0.0) {
            return Err(TrainError::Config("learning rates and eps must be positive".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(TrainError::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn generator_kind(&self) -> GeneratorKind {
        if self.ablation.baseline_mode {
            GeneratorKind::Baseline
        } else {
            GeneratorKind::Color
        }
    }

    pub fn discriminator_enabled(&self) -> bool {
        !self.ablation.disable_discriminator && !self.ablation.baseline_mode
    }

    /// Loss weights with ablated terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.discriminator_enabled() {
            w.adv = 0.0;
        }
        if self.ablation.disable_layout_loss {
            w.layout = 0.0;
        }
        w
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `dotted.key=value`; the value is parsed as JSON, falling back
    /// to a plain string. Unknown keys and ill-typed values are rejected.
    pub fn set(&mut self, assignment: &str) -> Result<(), TrainError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| TrainError::Config(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| TrainError::Config(format!("unknown config key {key}")))?;
        }
        if node.is_object() {
            return Err(TrainError::Config(format!("{key} is a section, not a value")));
        }
        *node = value;
        let updated: TrainConfig =
            serde_json::from_value(tree).map_err(|e| TrainError::Config(format!("{key}: {e}")))?;
        *self = updated;
        Ok(())
    }

    /// Dotted paths at which two configs differ, ignoring run-length keys.
    pub fn differences(&self, other: &TrainConfig) -> Vec<String> {
        fn walk(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
            match (a, b) {
                (Value::Object(x), Value::Object(y)) => {
                    for (k, va) in x {
                        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        match y.get(k) {
                            Some(vb) => walk(&path, va, vb, out),
                            None => out.push(path),
                        }
                    }
                }
                _ if a != b => out.push(prefix.to_string()),
                _ => {}
            }
        }
        let mut out = Vec::new();
        let (a, b) = (serde_json::to_value(self).unwrap(), serde_json::to_value(other).unwrap());
        walk("", &a, &b, &mut out);
        out.retain(|k| !RESUMABLE_KEYS.contains(&k.as_str()));
        out
    }

    /// Checks a dataset's grid against the model config.
    pub fn check_grid(&self, height: usize, width: usize) -> Result<(), TrainError> {
        if height != self.model.height {
            return Err(TrainError::DatasetMismatch { field: "H", config: self.model.height, dataset: height });
        }
        if width != self.model.width {
            return Err(TrainError::DatasetMismatch { field: "W", config: self.model.width, dataset: width });
        }
        Ok(())
    }
}

/// A scene converted into training targets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: usize,
    /// Dummy-augmented graph.
    pub graph: SceneGraph,
    pub classes: Vec<usize>,
    /// Ground-truth layouts, `[n, 1, H, W]` flattened.
    pub truth: Vec<f64>,
    /// Geometric edges `(s, o, relation ordinal)`.
    pub edges: Vec<(usize, usize, usize)>,
    /// Ground-truth boxes `[n, 4]` and masks `[n, W_m, W_m]` for the baseline.
    pub boxes: Vec<f64>,
    pub masks: Vec<f64>,
}

impl Prepared {
    pub fn new(scene: &Scene, vocab: &Vocab, mask_size: usize) -> Result<Self, TrainError> {
        let graph = if scene.graph.dummy { scene.graph.clone() } else { scene.graph.augment_with_dummy(vocab)? };
        let mut edges = Vec::new();
        for e in scene.graph.real_edges(vocab) {
            if vocab.relation_of(e.rel).is_some() {
                edges.push((e.src, e.dst, PairLabel::from_index(vocab, e.rel, true)?.relation.ordinal()));
            }
        }
        let mut boxes = Vec::new();
        let mut masks = Vec::new();
        for o in &scene.objects {
            let b = box_from_layout(&o.layout, 0.5)?;
            boxes.extend(b.to_array());
            masks.extend(mask_from_layout(&o.layout, &b, mask_size)?.data);
        }
        Ok(Prepared {
            id: scene.id,
            graph,
            classes: scene.objects.iter().map(|o| o.class).collect(),
            truth: scene.layouts().to_flat(),
            edges,
            boxes,
            masks,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.classes.len()
    }

    pub fn prepare_all(scenes: &[Scene], vocab: &Vocab, mask_size: usize) -> Result<Vec<Prepared>, TrainError> {
        scenes.par_iter().map(|s| Prepared::new(s, vocab, mask_size)).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(rename = "L_d", skip_serializing_if = "Option::is_none", default)]
    pub loss_d: Option<f64>,
    #[serde(rename = "L_g", skip_serializing_if = "Option::is_none", default)]
    pub loss_g: Option<f64>,
    #[serde(rename = "L_layout")]
    pub loss_layout: f64,
    #[serde(rename = "L_cov")]
    pub loss_cov: f64,
    #[serde(rename = "L_ovl")]
    pub loss_ovl: f64,
    #[serde(rename = "L_box", skip_serializing_if = "Option::is_none", default)]
    pub loss_box: Option<f64>,
    #[serde(rename = "L_mask", skip_serializing_if = "Option::is_none", default)]
    pub loss_mask: Option<f64>,
    #[serde(rename = "L_total")]
    pub loss_total: f64,
}

impl StepRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Noise and per-stage pair samples for one generation.
pub fn draw_inputs(cfg: &ModelConfig, n: usize, seed: u64) -> (Tensor, Vec<Vec<(usize, usize)>>) {
    let mut rng = seeding::rng(seed);
    let z = cfg.noise_channels;
    let noise = Tensor::new(&[n, z], (0..n * z).map(|_| rng.sample(StandardNormal)).collect());
    let pairs = (0..cfg.stages()).map(|_| sample_pairs(&mut rng, n, cfg.pair_budget)).collect();
    (noise, pairs)
}

pub(crate) struct Generated {
    pub layouts: Var,
    pub baseline: Option<BaselineOutput>,
}

/// Runs encoder and generator on one scene graph inside `f`.
pub(crate) fn generate(model: &Model, f: &mut Forward, graph: &SceneGraph, seed: u64) -> Result<Generated, TrainError> {
    let emb = model.encoder.forward(f, graph)?;
    let n = graph.num_objects();
    match (&model.color, &model.baseline) {
        (Some(color), _) => {
            let (noise, pairs) = draw_inputs(&model.config, n, seed);
            Ok(Generated { layouts: color.forward(f, emb, &noise, &pairs)?.layouts, baseline: None })
        }
        (None, Some(base)) => {
            let out = base.forward(f, emb);
            let (h, w) = out.layouts.grid();
            let layouts = f.tape.constant(Tensor::new(&[n, 1, h, w], out.layouts.to_flat()));
            Ok(Generated { layouts, baseline: Some(out) })
        }
        (None, None) => unreachable!("model without generator"),
    }
}

/// Scalar values of the generator-side terms for one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SceneTerms {
    pub adv: Option<f64>,
    pub layout: f64,
    pub cov: f64,
    pub ovl: f64,
    pub boxes: Option<f64>,
    pub mask: Option<f64>,
    pub total: f64,
}

/// Weighted generator loss for one scene, built on `f`. With
/// `freeze_disc` the discriminator is evaluated without binding its
/// parameters.
pub fn generator_loss(
    model: &Model,
    f: &mut Forward,
    p: &Prepared,
    seed: u64,
    w: &LossWeights,
    adversarial: bool,
    freeze_disc: bool,
) -> Result<(Var, SceneTerms), TrainError> {
    let gen = generate(model, f, &p.graph, seed)?;
    let tape = &mut f.tape;
    let cov = objectives::coverage_term(tape, gen.layouts);
    let ovl = objectives::overlap_term(tape, gen.layouts);
    let layout = objectives::layout_term(tape, gen.layouts, &p.truth);
    let mut t = SceneTerms {
        cov: tape.value(cov).item(),
        ovl: tape.value(ovl).item(),
        layout: tape.value(layout).item(),
        ..Default::default()
    };
    let total = if let Some(base) = &gen.baseline {
        let bx = objectives::box_term(tape, base.boxes, &p.boxes);
        let mk = objectives::mask_term(tape, base.masks, &p.masks);
        t.boxes = Some(tape.value(bx).item());
        t.mask = Some(tape.value(mk).item());
        let bx = tape.scale(bx, w.boxes);
        let mk = tape.scale(mk, w.mask);
        tape.add(bx, mk)
    } else {
        let weighted_ovl = tape.scale(ovl, w.overlap);
        let reg = tape.add(cov, weighted_ovl);
        let reg = tape.scale(reg, w.reg);
        let layout = tape.scale(layout, w.layout);
        let mut total = tape.add(reg, layout);
        if adversarial && !p.edges.is_empty() {
            let was_frozen = f.frozen;
            f.frozen = was_frozen || freeze_disc;
            let pairs: Vec<(usize, usize)> = p.edges.iter().map(|&(s, o, _)| (s, o)).collect();
            let classes: Vec<(usize, usize)> = pairs.iter().map(|&(s, o)| (p.classes[s], p.classes[o])).collect();
            let out = model.disc.forward(f, gen.layouts, &pairs, &classes)?;
            f.frozen = was_frozen;
            let ones = vec![1.0; pairs.len()];
            let labels: Vec<usize> = p.edges.iter().map(|&(_, _, r)| r).collect();
            let adv = objectives::pair_term(&mut f.tape, out.real_logit, out.relation_logits, &ones, &labels);
            t.adv = Some(f.tape.value(adv).item());
            let adv = f.tape.scale(adv, w.adv);
            total = f.tape.add(total, adv);
        }
        total
    };
    t.total = f.tape.value(total).item();
    Ok((total, t))
}

/// Discriminator loss for one scene: its real edge pairs labeled real and
/// the same pairs over `fake` (`[n, 1, H, W]`) labeled fake.
pub fn discriminator_loss(model: &Model, d: &mut Forward, p: &Prepared, fake: &Tensor) -> Result<Var, TrainError> {
    let n = p.num_objects();
    let mut both = p.truth.clone();
    both.extend_from_slice(&fake.data);
    let mut shape = fake.shape.clone();
    shape[0] = 2 * n;
    let layouts = d.tape.constant(Tensor::new(&shape, both));
    let mut pairs: Vec<(usize, usize)> = p.edges.iter().map(|&(s, o, _)| (s, o)).collect();
    pairs.extend(p.edges.iter().map(|&(s, o, _)| (s + n, o + n)));
    let classes: Vec<(usize, usize)> = pairs.iter().map(|&(s, o)| (p.classes[s % n], p.classes[o % n])).collect();
    let out = model.disc.forward(d, layouts, &pairs, &classes)?;
    let e = p.edges.len();
    let targets: Vec<f64> = (0..2 * e).map(|k| if k < e { 1.0 } else { 0.0 }).collect();
    let labels: Vec<usize> = p.edges.iter().chain(&p.edges).map(|&(_, _, r)| r).collect();
    Ok(objectives::pair_term(&mut d.tape, out.real_logit, out.relation_logits, &targets, &labels))
}

const HISTORY_LEN: usize = 256;

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub model: Model,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub step: u64,
    /// Most recent step records.
    pub history: Vec<StepRecord>,
}

fn sum_gradients(store_len: usize, grads: Vec<Gradients>, scale: f64) -> Vec<Option<Tensor>> {
    let mut out: Vec<Option<Tensor>> = vec![None; store_len];
    for g in grads {
        let mut entries: Vec<_> = g.by_param.into_iter().collect();
        entries.sort_by_key(|(id, _)| id.0);
        for (id, t) in entries {
            match &mut out[id.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        }
    }
    for t in out.iter_mut().flatten() {
        t.data.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

fn check(step: u64, scene_id: usize, term: &'static str, v: f64) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite { step, scene_id, term })
    }
}

impl TrainState {
    pub fn new(config: TrainConfig, vocab: Vocab) -> Result<Self, TrainError> {
        config.validate()?;
        vocab.check()?;
        let model = Model::new(&config.model, config.generator_kind(), &vocab, config.seed)?;
        let adam_g = Adam::new(&model.store);
        let adam_d = Adam::new(&model.store);
        Ok(TrainState { config, vocab, model, adam_g, adam_d, step: 0, history: Vec::new() })
    }

    /// Indices of the scenes used at the current step.
    pub fn batch_indices(&self, count: usize) -> Vec<usize> {
        let mut rng = seeding::rng(seeding::derive(self.config.seed, tags::BATCH, self.step));
        sample(&mut rng, count, self.config.batch_size.min(count)).into_vec()
    }

    /// Seed for the noise and pair sample of batch slot `slot` at the current step.
    pub fn slot_seed(&self, slot: usize) -> u64 {
        seeding::derive(self.config.seed, tags::NOISE, self.step * self.config.batch_size as u64 + slot as u64)
    }

    /// Updates the discriminator on real and detached generated pairs.
    /// Returns the mean loss, or `None` when the discriminator is disabled.
    pub fn discriminator_substep(&mut self, batch: &[&Prepared]) -> Result<Option<f64>, TrainError> {
        if !self.config.discriminator_enabled() {
            return Ok(None);
        }
        let model = &self.model;
        let step = self.step;
        let seeds: Vec<u64> = (0..batch.len()).map(|i| self.slot_seed(i)).collect();
        let results: Vec<Result<(f64, Gradients), TrainError>> = batch
            .par_iter()
            .zip(&seeds)
            .map(|(p, &seed)| {
                if p.edges.is_empty() {
                    return Ok((0.0, Gradients::default()));
                }
                let mut f = Forward::new(&model.store, true);
                f.frozen = true;
                let gen = generate(model, &mut f, &p.graph, seed)?;
                let fake = f.tape.value(gen.layouts).clone();
                drop(f);

                let mut d = Forward::new(&model.store, true);
                let loss = discriminator_loss(model, &mut d, p, &fake)?;
                let value = check(step, p.id, "L_d", d.tape.value(loss).item())?;
                Ok((value, d.tape.backward(loss)))
            })
            .collect();
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(results.len());
        for r in results {
            let (v, g) = r?;
            total += v;
            grads.push(g);
        }
        let scale = 1.0 / batch.len() as f64;
        let grads = sum_gradients(self.model.store.entries().len(), grads, scale);
        let ids = self.model.discriminator_params();
        let lr = self.config.optimizer.lr_discriminator;
        self.adam_d.step(&mut self.model.store, &ids, &grads, lr, &self.config.optimizer);
        Ok(Some(total * scale))
    }

    /// Updates encoder and generator; folds batch-norm statistics into the
    /// running averages afterwards.
    fn generator_terms(&mut self, batch: &[&Prepared]) -> Result<SceneTerms, TrainError> {
        let w = self.config.effective_weights();
        let adversarial = self.config.discriminator_enabled();
        let model = &self.model;
        let step = self.step;
        let seeds: Vec<u64> = (0..batch.len()).map(|i| self.slot_seed(i)).collect();
        type SceneOut = (SceneTerms, Gradients, Vec<(crate::nn::Norm, crate::autodiff::BatchStats)>);
        let results: Vec<Result<SceneOut, TrainError>> = batch
            .par_iter()
            .zip(&seeds)
            .map(|(p, &seed)| {
                let mut f = Forward::new(&model.store, true);
                let (total, t) = generator_loss(model, &mut f, p, seed, &w, adversarial, true)?;
                let t = SceneTerms {
                    adv: t.adv.map(|v| check(step, p.id, "L_g", v)).transpose()?,
                    layout: check(step, p.id, "L_layout", t.layout)?,
                    cov: check(step, p.id, "L_cov", t.cov)?,
                    ovl: check(step, p.id, "L_ovl", t.ovl)?,
                    boxes: t.boxes.map(|v| check(step, p.id, "L_box", v)).transpose()?,
                    mask: t.mask.map(|v| check(step, p.id, "L_mask", v)).transpose()?,
                    total: t.total,
                };
                let t = SceneTerms { total: check(step, p.id, "L_total", t.total)?, ..t };
                let grads = f.tape.backward(total);
                Ok((t, grads, std::mem::take(&mut f.bn_updates)))
            })
            .collect();

        let scale = 1.0 / batch.len() as f64;
        let mut mean = SceneTerms::default();
        let mut grads = Vec::with_capacity(results.len());
        let mut bn = Vec::new();
        let add_opt = |acc: &mut Option<f64>, v: Option<f64>| {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0.0) + v * scale);
            }
        };
        for r in results {
            let (t, g, stats) = r?;
            add_opt(&mut mean.adv, t.adv);
            add_opt(&mut mean.boxes, t.boxes);
            add_opt(&mut mean.mask, t.mask);
            mean.layout += t.layout * scale;
            mean.cov += t.cov * scale;
            mean.ovl += t.ovl * scale;
            mean.total += t.total * scale;
            grads.push(g);
            bn.push(stats);
        }
        let grads = sum_gradients(self.model.store.entries().len(), grads, scale);
        let ids = self.model.generator_params();
        let lr = self.config.optimizer.lr_generator;
        self.adam_g.step(&mut self.model.store, &ids, &grads, lr, &self.config.optimizer);
        let momentum = self.config.model.bn_momentum;
        for stats in bn {
            for (norm, s) in stats {
                norm.update_running(&mut self.model.store, &s, momentum);
            }
        }
        Ok(mean)
    }

    /// Updates encoder and generator parameters, returning the mean terms.
    pub fn generator_substep(&mut self, batch: &[&Prepared]) -> Result<StepRecord, TrainError> {
        let t = self.generator_terms(batch)?;
        Ok(StepRecord {
            step: self.step + 1,
            loss_d: None,
            loss_g: t.adv,
            loss_layout: t.layout,
            loss_cov: t.cov,
            loss_ovl: t.ovl,
            loss_box: t.boxes,
            loss_mask: t.mask,
            loss_total: t.total,
        })
    }

    /// Discriminator substep, then generator substep, on the given scenes.
    pub fn train_step(&mut self, batch: &[&Prepared]) -> Result<StepRecord, TrainError> {
        let loss_d = self.discriminator_substep(batch)?;
        let mut record = self.generator_substep(batch)?;
        record.loss_d = loss_d;
        self.step += 1;
        self.history.push(record.clone());
        if self.history.len() > HISTORY_LEN {
            self.history.remove(0);
        }
        Ok(record)
    }

    /// Runs `steps` steps on batches drawn from `train`, calling `on_step`
    /// after each one.
    pub fn run(
        &mut self,
        train: &[Prepared],
        steps: u64,
        mut on_step: impl FnMut(&TrainState, &StepRecord) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        for _ in 0..steps {
            let idx = self.batch_indices(train.len());
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &train[i]).collect();
            let record = self.train_step(&batch)?;
            on_step(self, &record)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_checked() {
        let mut cfg = TrainConfig::default();
        cfg.set("weights.layout=0.5").unwrap();
        assert_eq!(cfg.weights.layout, 0.5);
        cfg.set("ablation.disable_discriminator=true").unwrap();
        assert!(!cfg.discriminator_enabled());
        cfg.set("model.message_norm=all_pairs").unwrap();
        assert_eq!(cfg.model.message_norm, crate::nn::MessageNorm::AllPairs);
        assert!(matches!(cfg.set("weights.nope=1"), Err(TrainError::Config(_))));
        assert!(matches!(cfg.set("batch_size=lots"), Err(TrainError::Config(_))));
        assert!(matches!(cfg.set("model=3"), Err(TrainError::Config(_))));
        assert!(cfg.set("no_equals").is_err());
    }

    #[test]
    fn differences_name_paths() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.model.height = 64;
        b.model.width = 64;
        b.steps = 5;
        assert_eq!(a.differences(&b), vec!["model.height".to_string(), "model.width".to_string()]);
    }

    #[test]
    fn json_round_trip() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn record_omits_absent_terms() {
        let r = StepRecord {
            step: 3,
            loss_d: None,
            loss_g: None,
            loss_layout: 1.0,
            loss_cov: 2.0,
            loss_ovl: 0.0,
            loss_box: None,
            loss_mask: None,
            loss_total: 3.0,
        };
        let json = r.to_json();
        assert!(!json.contains("L_d") && json.contains("\"L_cov\":2.0"));
    }
}
