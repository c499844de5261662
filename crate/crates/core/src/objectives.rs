//! Training losses. Each loss exists as a tape builder (used by the trainer)
//! and as a plain scalar function evaluated through the same builder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Piece, Tape, Tensor, Var};
use crate::geometry::{LayoutSet, Relation};
use crate::graph::Vocab;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("the image-membership relation carries no geometric label")]
    DummyRelation,
    #[error("relation index {0} is not in the vocabulary")]
    UnknownRelation(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss weight {name} must be finite and non-negative, got {value}")]
    Weight { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub layout: f64,
    pub reg: f64,
    pub adv: f64,
    /// Weight of the overlap term inside the regularizer.
    pub overlap: f64,
    pub boxes: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { layout: 0.1, reg: 1.0, adv: 1.0, overlap: 0.4, boxes: 1.0, mask: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for (name, value) in [
            ("layout", self.layout),
            ("reg", self.reg),
            ("adv", self.adv),
            ("overlap", self.overlap),
            ("boxes", self.boxes),
            ("mask", self.mask),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ObjectiveError::Weight { name, value });
            }
        }
        Ok(())
    }
}

/// Label of one discriminator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub real: bool,
    pub relation: Relation,
}

impl PairLabel {
    /// Rejects the image-membership relation, which has no geometric meaning.
    pub fn from_index(vocab: &Vocab, relation: usize, real: bool) -> Result<Self, ObjectiveError> {
        if relation == vocab.dummy_relation() {
            return Err(ObjectiveError::DummyRelation);
        }
        let relation = vocab.relation_of(relation).ok_or(ObjectiveError::UnknownRelation(relation))?;
        Ok(PairLabel { real, relation })
    }
}

/// Discriminator scores for one pair, as plain numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScore {
    pub real: f64,
    pub relation: [f64; 6],
}

/// `sum_{h,w} 1[L <= 1] (1 - L)` with `L = sum_i l_i`; `layouts: [n, 1, H, W]`.
pub fn coverage_term(tape: &mut Tape, layouts: Var) -> Var {
    let total = tape.sum_rows(layouts);
    let t = tape.piecewise(total, Piece::Coverage);
    tape.sum(t)
}

/// `sum_{h,w} 1[L > 1] (L - 1)`.
pub fn overlap_term(tape: &mut Tape, layouts: Var) -> Var {
    let total = tape.sum_rows(layouts);
    let t = tape.piecewise(total, Piece::Overlap);
    tape.sum(t)
}

/// Summed absolute difference to ground-truth layouts.
pub fn layout_term(tape: &mut Tape, layouts: Var, truth: &[f64]) -> Var {
    tape.l1(layouts, truth)
}

/// Mean over pairs of `BCE(y, y_hat) + CE(r, r_hat)`, taken from the
/// discriminator logits.
pub fn pair_term(tape: &mut Tape, real_logit: Var, relation_logits: Var, targets: &[f64], labels: &[usize]) -> Var {
    let count = labels.len() as f64;
    let bce = tape.bce_logits(real_logit, targets);
    let bce = tape.sum(bce);
    let ce = tape.cross_entropy_logits(relation_logits, labels);
    let ce = tape.sum(ce);
    let both = tape.add(bce, ce);
    tape.scale(both, 1.0 / count)
}

/// [`pair_term`] on probabilities, with logs clamped at `BCE_EPS`.
fn pair_term_probs(tape: &mut Tape, real: Var, relation: Var, targets: &[f64], labels: &[usize]) -> Var {
    let count = labels.len() as f64;
    let bce = tape.bce(real, targets);
    let bce = tape.sum(bce);
    let ce = tape.nll(relation, labels);
    let ce = tape.sum(ce);
    let both = tape.add(bce, ce);
    tape.scale(both, 1.0 / count)
}

/// Sum over objects of the Euclidean distance between box 4-vectors.
pub fn box_term(tape: &mut Tape, boxes: Var, truth: &[f64]) -> Var {
    let d = tape.row_l2(boxes, truth);
    tape.sum(d)
}

/// Sum over objects and mask pixels of binary cross-entropy.
pub fn mask_term(tape: &mut Tape, masks: Var, truth: &[f64]) -> Var {
    let b = tape.bce(masks, truth);
    tape.sum(b)
}

fn with_layouts(ls: &LayoutSet, term: impl FnOnce(&mut Tape, Var) -> Var) -> f64 {
    let (h, w) = ls.grid();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[ls.len(), 1, h, w], ls.to_flat()));
    let out = term(&mut tape, x);
    tape.value(out).item()
}

pub fn loss_coverage(ls: &LayoutSet) -> f64 {
    with_layouts(ls, coverage_term)
}

pub fn loss_overlap(ls: &LayoutSet) -> f64 {
    with_layouts(ls, overlap_term)
}

/// `L_cov + lambda * L_ovl`.
pub fn loss_reg(ls: &LayoutSet, lambda: f64) -> f64 {
    loss_coverage(ls) + lambda * loss_overlap(ls)
}

pub fn loss_layout(pred: &LayoutSet, truth: &LayoutSet) -> Result<f64, ObjectiveError> {
    if pred.len() != truth.len() || pred.grid() != truth.grid() {
        return Err(ObjectiveError::Shape(format!(
            "{} layouts of {:?} vs {} layouts of {:?}",
            pred.len(),
            pred.grid(),
            truth.len(),
            truth.grid()
        )));
    }
    let target = truth.to_flat();
    Ok(with_layouts(pred, |t, x| layout_term(t, x, &target)))
}

fn score_tensors(scores: &[PairScore]) -> (Tensor, Tensor) {
    let real = Tensor::new(&[scores.len(), 1], scores.iter().map(|s| s.real).collect());
    let rel = Tensor::new(&[scores.len(), 6], scores.iter().flat_map(|s| s.relation).collect());
    (real, rel)
}

/// Discriminator loss averaged over all given (real and fake) pairs.
pub fn loss_disc(scores: &[PairScore], labels: &[PairLabel]) -> Result<f64, ObjectiveError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(ObjectiveError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let (real, rel) = score_tensors(scores);
    let mut tape = Tape::new();
    let (y, r) = (tape.constant(real), tape.constant(rel));
    let targets: Vec<f64> = labels.iter().map(|l| l.real as u8 as f64).collect();
    let ords: Vec<usize> = labels.iter().map(|l| l.relation.ordinal()).collect();
    let out = pair_term_probs(&mut tape, y, r, &targets, &ords);
    Ok(tape.value(out).item())
}

/// Generator loss on generated pairs: every pair is labeled real.
pub fn loss_gen(scores: &[PairScore], relations: &[Relation]) -> Result<f64, ObjectiveError> {
    let labels: Vec<PairLabel> = relations.iter().map(|&relation| PairLabel { real: true, relation }).collect();
    loss_disc(scores, &labels)
}

pub fn loss_box(pred: &[[f64; 4]], truth: &[[f64; 4]]) -> Result<f64, ObjectiveError> {
    if pred.len() != truth.len() {
        return Err(ObjectiveError::Shape(format!("{} boxes vs {}", pred.len(), truth.len())));
    }
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[pred.len(), 4], pred.iter().flatten().copied().collect()));
    let target: Vec<f64> = truth.iter().flatten().copied().collect();
    let out = box_term(&mut tape, x, &target);
    Ok(tape.value(out).item())
}

/// `pred` and `truth` hold `count` masks of `size x size` each.
pub fn loss_mask(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, ObjectiveError> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(a, b)| a.len() != b.len()) {
        return Err(ObjectiveError::Shape("mask count or size mismatch".into()));
    }
    let mut tape = Tape::new();
    let flat: Vec<f64> = pred.iter().flatten().copied().collect();
    let x = tape.constant(Tensor::new(&[flat.len()], flat));
    let target: Vec<f64> = truth.iter().flatten().copied().collect();
    let out = mask_term(&mut tape, x, &target);
    Ok(tape.value(out).item())
}
