use rand::seq::SliceRandom;
use rand::Rng;

use super::{Builder, Conv, Dense, Forward, MessageNorm, ModelConfig, NnError, Norm};
use crate::autodiff::{Tensor, Var};

/// Ordered pairs `(i, j)`, `i != j`, for one refinement stage. Takes every
/// pair when there are at most `budget`; otherwise starts from a random
/// cover so each node appears at least once, then fills up uniformly.
pub fn sample_pairs<R: Rng>(rng: &mut R, n: usize, budget: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    if all.len() <= budget {
        return all;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut chosen: Vec<(usize, usize)> = order.chunks(2).filter(|c| c.len() == 2).map(|c| (c[0], c[1])).collect();
    if n % 2 == 1 {
        let last = order[n - 1];
        let other = order[rng.random_range(0..n - 1)];
        chosen.push((last, other));
    }
    let mut rest: Vec<(usize, usize)> = all.into_iter().filter(|p| !chosen.contains(p)).collect();
    rest.shuffle(rng);
    let missing = budget.saturating_sub(chosen.len());
    chosen.extend(rest.into_iter().take(missing));
    chosen
}

/// Stage `t`: transposed-conv upsampling to `q`, a pairwise conv graph layer
/// producing directed messages, and the normalized residual sum.
#[derive(Debug, Clone)]
struct LrnBlock {
    up: Conv,
    /// Absent in the final stage, whose upsampled map is used as raw logits.
    norm: Option<Norm>,
    gcl_in: Conv,
    gcl_out: Conv,
    channels: usize,
    last: bool,
}

/// Layouts plus every intermediate stage state.
pub struct ColorOutput {
    pub layouts: Var,
    pub stages: Vec<Var>,
}

/// Stacked layout refinement generator.
#[derive(Debug, Clone)]
pub struct ColorGenerator {
    project: Dense,
    blocks: Vec<LrnBlock>,
    noise_channels: usize,
    depth: usize,
    message_norm: MessageNorm,
}

impl ColorGenerator {
    pub fn new<R: Rng>(b: &mut Builder<R>, cfg: &ModelConfig) -> Self {
        let k = cfg.depth();
        let project = b.dense("gen.project", cfg.embedding_dim, k);
        let shapes = cfg.stage_shapes();
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut in_c = k + cfg.noise_channels;
        for (t, &(c, _)) in shapes.iter().enumerate() {
            let last = t + 1 == shapes.len();
            let name = format!("gen.lrn{}", t + 1);
            let up = if t == 0 {
                b.conv_transpose(&format!("{name}.up"), in_c, c, 4, 1, 0)
            } else {
                b.conv_transpose(&format!("{name}.up"), in_c, c, 4, 2, 1)
            };
            let norm = (!last).then(|| b.norm(&format!("{name}.bn"), c));
            let hidden = (2 * c).max(cfg.gcl_hidden_min);
            let gcl_in = b.conv(&format!("{name}.gcl_in"), 2 * c, hidden, 3, 1, 1);
            let gcl_out = b.conv(&format!("{name}.gcl_out"), hidden, 2 * c, 3, 1, 1);
            blocks.push(LrnBlock { up, norm, gcl_in, gcl_out, channels: c, last });
            in_c = c;
        }
        ColorGenerator { project, blocks, noise_channels: cfg.noise_channels, depth: k, message_norm: cfg.message_norm }
    }

    pub fn noise_channels(&self) -> usize {
        self.noise_channels
    }

    pub fn num_stages(&self) -> usize {
        self.blocks.len()
    }

    /// Parameter ids of every pairwise conv layer (for ablation tests).
    pub fn gcl_params(&self) -> Vec<crate::autodiff::ParamId> {
        self.blocks.iter().flat_map(|b| [b.gcl_in.w, b.gcl_in.b, b.gcl_out.w, b.gcl_out.b]).collect()
    }

    /// `emb: [n, d]`, `noise: [n, z]`, one pair list per stage. Returns
    /// layouts `[n, 1, H, W]`.
    pub fn forward(&self, f: &mut Forward, emb: Var, noise: &Tensor, pairs: &[Vec<(usize, usize)>]) -> Result<ColorOutput, NnError> {
        let n = f.tape.shape(emb)[0];
        if noise.shape != [n, self.noise_channels] {
            return Err(NnError::Shape(format!("noise shape {:?}, expected [{n}, {}]", noise.shape, self.noise_channels)));
        }
        if pairs.len() != self.blocks.len() {
            return Err(NnError::Shape(format!("{} pair lists for {} stages", pairs.len(), self.blocks.len())));
        }
        let projected = self.project.forward(f, emb);
        let z = f.tape.constant(noise.clone());
        let state = f.tape.concat(&[projected, z]);
        let mut state = f.tape.reshape(state, &[n, self.depth + self.noise_channels, 1, 1]);
        let mut stages = Vec::with_capacity(self.blocks.len());
        for (block, stage_pairs) in self.blocks.iter().zip(pairs) {
            state = block.forward(f, state, stage_pairs, self.message_norm)?;
            stages.push(state);
        }
        Ok(ColorOutput { layouts: state, stages })
    }
}

impl LrnBlock {
    fn forward(&self, f: &mut Forward, v: Var, pairs: &[(usize, usize)], norm: MessageNorm) -> Result<Var, NnError> {
        let n = f.tape.shape(v)[0];
        let mut q = self.up.forward(f, v);
        if let Some(bn) = &self.norm {
            q = bn.forward(f, q);
            q = f.tape.relu(q);
        }
        let mut total = q;
        if n >= 2 && !pairs.is_empty() {
            let mut count = vec![0usize; n];
            for &(i, j) in pairs {
                if i == j || i >= n || j >= n {
                    return Err(NnError::Shape(format!("invalid pair ({i}, {j}) for {n} objects")));
                }
                count[i] += 1;
                count[j] += 1;
            }
            let weight = |node: usize| match norm {
                MessageNorm::PerNode => 1.0 / count[node].max(1) as f64,
                MessageNorm::AllPairs => 1.0 / (n - 1) as f64,
            };
            let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let qi = f.tape.gather(q, &first);
            let qj = f.tape.gather(q, &second);
            let joint = f.tape.concat(&[qi, qj]);
            let hidden = self.gcl_in.forward(f, joint);
            let hidden = f.tape.relu(hidden);
            let messages = self.gcl_out.forward(f, hidden);
            let to_first = f.tape.slice(messages, 0, self.channels);
            let to_second = f.tape.slice(messages, self.channels, self.channels);
            let w_first: Vec<f64> = first.iter().map(|&i| weight(i)).collect();
            let w_second: Vec<f64> = second.iter().map(|&j| weight(j)).collect();
            let a = f.tape.index_add(to_first, &first, &w_first, n);
            let b = f.tape.index_add(to_second, &second, &w_second, n);
            let agg = f.tape.add(a, b);
            total = f.tape.add(total, agg);
        }
        Ok(if self.last { f.tape.sigmoid(total) } else { f.tape.relu(total) })
    }
}
