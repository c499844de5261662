use rand::Rng;

use super::{Builder, Conv, Dense, Forward, ModelConfig, Norm};
use crate::autodiff::{Tensor, Var};
use crate::geometry::{layout_from_box_mask, BoundingBox, Layout, LayoutSet, Mask};

/// Two-headed generator: a box regressor and a mask decoder.
#[derive(Debug, Clone)]
pub struct BaselineGenerator {
    box_hidden: Dense,
    box_out: Dense,
    mask_up: Vec<(Conv, Norm)>,
    mask_out: Conv,
    mask_size: usize,
    height: usize,
    width: usize,
}

pub struct BaselineOutput {
    /// `[n, 4]` rows `(x0, y0, x1, y1)` in `[0, 1]`.
    pub boxes: Var,
    /// `[n, 1, W_m, W_m]` probabilities.
    pub masks: Var,
    /// Pasted layouts; not part of the tape.
    pub layouts: LayoutSet,
}

const MASK_CHANNELS: usize = 16;

impl BaselineGenerator {
    pub fn new<R: Rng>(b: &mut Builder<R>, cfg: &ModelConfig) -> Self {
        let d = cfg.embedding_dim;
        let box_hidden = b.dense("base.box_hidden", d, cfg.gcn_hidden);
        let box_out = b.dense("base.box_out", cfg.gcn_hidden, 4);
        let mut mask_up = Vec::new();
        let mut size = 4;
        mask_up.push((b.conv_transpose("base.mask_up0", d, MASK_CHANNELS, 4, 1, 0), b.norm("base.mask_bn0", MASK_CHANNELS)));
        while size < cfg.mask_size {
            let i = mask_up.len();
            mask_up.push((
                b.conv_transpose(&format!("base.mask_up{i}"), MASK_CHANNELS, MASK_CHANNELS, 4, 2, 1),
                b.norm(&format!("base.mask_bn{i}"), MASK_CHANNELS),
            ));
            size *= 2;
        }
        let mask_out = b.conv("base.mask_out", MASK_CHANNELS, 1, 3, 1, 1);
        BaselineGenerator { box_hidden, box_out, mask_up, mask_out, mask_size: cfg.mask_size, height: cfg.height, width: cfg.width }
    }

    pub fn mask_output_layer(&self) -> Conv {
        self.mask_out
    }

    pub fn forward(&self, f: &mut Forward, emb: Var) -> BaselineOutput {
        let n = f.tape.shape(emb)[0];
        let d = f.tape.shape(emb)[1];
        let h = self.box_hidden.forward(f, emb);
        let h = f.tape.relu(h);
        let raw = self.box_out.forward(f, h);
        let squashed = f.tape.sigmoid(raw);
        let boxes = f.tape.order_pairs(squashed);

        let mut m = f.tape.reshape(emb, &[n, d, 1, 1]);
        for (conv, norm) in &self.mask_up {
            m = conv.forward(f, m);
            m = norm.forward(f, m);
            m = f.tape.relu(m);
        }
        let logits = self.mask_out.forward(f, m);
        let masks = f.tape.sigmoid(logits);

        let layouts = paste(f.tape.value(boxes), f.tape.value(masks), self.mask_size, self.height, self.width);
        BaselineOutput { boxes, masks, layouts }
    }
}

/// Pastes each mask into its box; boxes thinner than a pixel yield empty layouts.
pub fn paste(boxes: &Tensor, masks: &Tensor, mask_size: usize, height: usize, width: usize) -> LayoutSet {
    let plane = mask_size * mask_size;
    let layouts = boxes
        .data
        .chunks(4)
        .zip(masks.data.chunks(plane))
        .map(|(bx, md)| {
            let mask = Mask { size: mask_size, data: md.to_vec() };
            BoundingBox::new(bx[0], bx[1], bx[2], bx[3])
                .and_then(|b| layout_from_box_mask(&b, &mask, height, width))
                .unwrap_or_else(|_| Layout::zeros(height, width))
        })
        .collect();
    LayoutSet::new(layouts).expect("non-empty layout set of one grid")
}
