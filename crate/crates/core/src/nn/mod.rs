//! Parameterized networks: the graph encoder, the stacked layout refinement
//! generator, the box + mask baseline generator and the pairwise layout
//! discriminator.

mod baseline;
mod color;
mod disc;
mod encoder;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{BatchStats, ParamId, Tape, Tensor, Var};
use crate::graph::GraphError;

pub use baseline::{BaselineGenerator, BaselineOutput};
pub use color::{sample_pairs, ColorGenerator, ColorOutput};
pub use disc::{DiscOutput, Discriminator};
pub use encoder::Encoder;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("shape error: {0}")]
    Shape(String),
}

/// How the residual aggregation in a refinement block is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageNorm {
    /// Divide by the number of sampled pairs involving the node.
    PerNode,
    /// Divide by `n - 1` regardless of sampling.
    AllPairs,
}

/// Where the discriminator sees the class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Concatenated to the pooled features.
    Pooled,
    /// Broadcast as extra input planes.
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub embedding_dim: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub noise_channels: usize,
    /// Ordered pairs sampled per refinement stage.
    pub pair_budget: usize,
    /// Lower bound on the hidden width of the pairwise conv stack.
    pub gcl_hidden_min: usize,
    pub message_norm: MessageNorm,
    pub mask_size: usize,
    pub disc_base_channels: usize,
    pub disc_max_channels: usize,
    pub disc_hidden: usize,
    pub conditioning: Conditioning,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            embedding_dim: 64,
            gcn_layers: 5,
            gcn_hidden: 64,
            noise_channels: 4,
            pair_budget: 12,
            gcl_hidden_min: 8,
            message_norm: MessageNorm::PerNode,
            mask_size: 16,
            disc_base_channels: 8,
            disc_max_channels: 32,
            disc_hidden: 32,
            conditioning: Conditioning::Pooled,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    /// Number of refinement stages, `log2(H) - 1`.
    pub fn stages(&self) -> usize {
        self.height.trailing_zeros() as usize - 1
    }

    /// Channel depth of the initial 1x1 state, `2^T`.
    pub fn depth(&self) -> usize {
        1 << self.stages()
    }

    /// `(channels, spatial size)` after each stage `t = 1..=T`.
    pub fn stage_shapes(&self) -> Vec<(usize, usize)> {
        let k = self.depth();
        (1..=self.stages()).map(|t| (k >> t, 4 << (t - 1))).collect()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.height != self.width || self.height < 8 || !self.height.is_power_of_two() {
            return Err(NnError::Config(format!(
                "layout grid must be square with a power-of-two side >= 8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.mask_size < 4 || !self.mask_size.is_power_of_two() || self.mask_size >= self.height {
            return Err(NnError::Config(format!(
                "mask size {} must be a power of two in 4..{}",
                self.mask_size, self.height
            )));
        }
        if self.embedding_dim == 0 || self.gcn_hidden == 0 || self.disc_base_channels == 0 {
            return Err(NnError::Config("widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(NnError::Config("bn_momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors. Ids are assigned in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.trainable && e.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies values from `other` by name, rejecting missing names and shape changes.
    pub fn load_from(&mut self, other: &[ParamEntry]) -> Result<(), NnError> {
        for entry in &mut self.entries {
            let src = other
                .iter()
                .find(|e| e.name == entry.name)
                .ok_or_else(|| NnError::MissingParam(entry.name.clone()))?;
            if src.value.shape != entry.value.shape {
                return Err(NnError::ShapeMismatch {
                    name: entry.name.clone(),
                    expected: entry.value.shape.clone(),
                    found: src.value.shape.clone(),
                });
            }
            entry.value = src.value.clone();
        }
        Ok(())
    }

    /// FNV-1a digest over names and value bits of parameters matching `prefix`.
    pub fn digest(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            eat(e.name.as_bytes());
            for v in &e.value.data {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Builds parameters with a seeded initializer.
pub struct Builder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.register(name, Tensor::new(shape, data), true)
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        self.store.register(name, Tensor::new(shape, data), true)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64, trainable: bool) -> ParamId {
        self.store.register(name, Tensor::full(shape, value), trainable)
    }

    pub fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Dense {
        Dense {
            w: self.uniform(format!("{name}.w"), &[inputs, outputs], inputs),
            b: self.uniform(format!("{name}.b"), &[outputs], inputs),
        }
    }

    pub fn conv(&mut self, name: &str, inputs: usize, outputs: usize, kernel: usize, stride: usize, padding: usize) -> Conv {
        let fan_in = inputs * kernel * kernel;
        Conv {
            w: self.uniform(format!("{name}.w"), &[outputs, inputs, kernel, kernel], fan_in),
            b: self.uniform(format!("{name}.b"), &[outputs], fan_in),
            stride,
            padding,
            transpose: false,
        }
    }

    pub fn conv_transpose(&mut self, name: &str, inputs: usize, outputs: usize, kernel: usize, stride: usize, padding: usize) -> Conv {
        let fan_in = outputs * kernel * kernel;
        Conv {
            w: self.uniform(format!("{name}.w"), &[inputs, outputs, kernel, kernel], fan_in),
            b: self.uniform(format!("{name}.b"), &[outputs], fan_in),
            stride,
            padding,
            transpose: true,
        }
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Norm {
        Norm {
            gamma: self.constant(format!("{name}.gamma"), &[channels], 1.0, true),
            beta: self.constant(format!("{name}.beta"), &[channels], 0.0, true),
            running_mean: self.constant(format!("{name}.running_mean"), &[channels], 0.0, false),
            running_var: self.constant(format!("{name}.running_var"), &[channels], 1.0, false),
        }
    }
}

/// One forward pass: a tape plus the parameter values it reads.
pub struct Forward<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    /// Batch statistics in training mode, running averages otherwise.
    pub train: bool,
    /// Bind parameters as constants (no gradient).
    pub frozen: bool,
    /// Batch statistics gathered by every training-mode batch norm, in call order.
    pub bn_updates: Vec<(Norm, BatchStats)>,
}

impl<'a> Forward<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Forward { tape: Tape::new(), store, train, frozen: false, bn_updates: Vec::new() }
    }

    pub fn bind(&mut self, id: ParamId) -> Var {
        if self.frozen {
            self.tape.frozen(self.store.get(id))
        } else {
            self.tape.param(id, self.store.get(id))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let (w, b) = (f.bind(self.w), f.bind(self.b));
        f.tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub transpose: bool,
}

impl Conv {
    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let (w, b) = (f.bind(self.w), f.bind(self.b));
        if self.transpose {
            f.tape.conv_transpose2d(x, w, b, self.stride, self.padding)
        } else {
            f.tape.conv2d(x, w, b, self.stride, self.padding)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl Norm {
    pub fn forward(&self, f: &mut Forward, x: Var) -> Var {
        let (g, b) = (f.bind(self.gamma), f.bind(self.beta));
        if f.train {
            let (y, stats) = f.tape.batch_norm(x, g, b, None);
            f.bn_updates.push((*self, stats.expect("batch statistics in training mode")));
            y
        } else {
            let mean = f.store.get(self.running_mean).data.clone();
            let var = f.store.get(self.running_var).data.clone();
            f.tape.batch_norm(x, g, b, Some((&mean, &var))).0
        }
    }

    /// Folds batch statistics into the running averages (unbiased variance).
    pub fn update_running(&self, store: &mut ParamStore, stats: &BatchStats, momentum: f64) {
        let correction = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
        for (m, s) in store.get_mut(self.running_mean).data.iter_mut().zip(&stats.mean) {
            *m = (1.0 - momentum) * *m + momentum * s;
        }
        for (v, s) in store.get_mut(self.running_var).data.iter_mut().zip(&stats.var) {
            *v = (1.0 - momentum) * *v + momentum * s * correction;
        }
    }
}

/// Which generator produces layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Color,
    Baseline,
}

/// Every network of one experiment, sharing a parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub kind: GeneratorKind,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub color: Option<ColorGenerator>,
    pub baseline: Option<BaselineGenerator>,
    pub disc: Discriminator,
}

/// Parameter name prefixes of the generator side and the discriminator.
pub const GENERATOR_PREFIXES: [&str; 3] = ["enc.", "gen.", "base."];
pub const DISCRIMINATOR_PREFIX: &str = "disc.";

impl Model {
    pub fn new(config: &ModelConfig, kind: GeneratorKind, vocab: &crate::graph::Vocab, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = crate::seeding::rng(crate::seeding::derive(seed, crate::seeding::tags::INIT, 0));
        let mut b = Builder { store: &mut store, rng: &mut rng };
        let encoder = Encoder::new(&mut b, config, vocab);
        let (color, baseline) = match kind {
            GeneratorKind::Color => (Some(ColorGenerator::new(&mut b, config)), None),
            GeneratorKind::Baseline => (None, Some(BaselineGenerator::new(&mut b, config))),
        };
        let disc = Discriminator::new(&mut b, config, vocab.num_real_classes());
        Ok(Model { config: config.clone(), kind, store, encoder, color, baseline, disc })
    }

    /// Trainable parameters updated by the generator optimizer.
    pub fn generator_params(&self) -> Vec<ParamId> {
        GENERATOR_PREFIXES.iter().flat_map(|p| self.store.trainable_with_prefix(p)).collect()
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.store.trainable_with_prefix(DISCRIMINATOR_PREFIX).collect()
    }
}
