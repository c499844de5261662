use rand::Rng;

use super::{Builder, Conditioning, Conv, Dense, Forward, ModelConfig, NnError};
use crate::autodiff::{Tensor, Var};
use crate::geometry::Relation;

const SLOPE: f64 = 0.2;

/// Pairwise layout discriminator over stacked `(l_i, l_j)` planes.
#[derive(Debug, Clone)]
pub struct Discriminator {
    tower: Vec<Conv>,
    pool: Conv,
    hidden: Dense,
    real_head: Dense,
    relation_head: Dense,
    conditioning: Conditioning,
    num_classes: usize,
    size: usize,
}

/// Tape variables for a batch of pairs.
pub struct DiscOutput {
    /// `[P, 1]` real/fake logit.
    pub real_logit: Var,
    /// `[P, 6]` relation logits.
    pub relation_logits: Var,
    /// `[P, 1]` real/fake probability.
    pub real: Var,
    /// `[P, 6]` distribution over geometric relations.
    pub relation: Var,
}

impl Discriminator {
    pub fn new<R: Rng>(b: &mut Builder<R>, cfg: &ModelConfig, num_classes: usize) -> Self {
        let planes = match cfg.conditioning {
            Conditioning::Pooled => 2,
            Conditioning::Spatial => 2 + 2 * num_classes,
        };
        let mut tower = Vec::new();
        let (mut c, mut size) = (planes, cfg.height);
        let mut width = cfg.disc_base_channels;
        while size > 4 {
            tower.push(b.conv(&format!("disc.conv{}", tower.len()), c, width, 4, 2, 1));
            c = width;
            width = (width * 2).min(cfg.disc_max_channels);
            size /= 2;
        }
        let pooled = c.max(cfg.disc_base_channels);
        let pool = b.conv("disc.pool", c, pooled, 4, 1, 0);
        let features = match cfg.conditioning {
            Conditioning::Pooled => pooled + 2 * num_classes,
            Conditioning::Spatial => pooled,
        };
        let hidden = b.dense("disc.hidden", features, cfg.disc_hidden);
        let real_head = b.dense("disc.real", cfg.disc_hidden, 1);
        let relation_head = b.dense("disc.relation", cfg.disc_hidden, Relation::ALL.len());
        Discriminator { tower, pool, hidden, real_head, relation_head, conditioning: cfg.conditioning, num_classes, size: cfg.height }
    }

    pub fn heads(&self) -> (Dense, Dense) {
        (self.real_head, self.relation_head)
    }

    /// One-hot rows `[P, 2C]` for class pairs.
    pub fn class_codes(&self, classes: &[(usize, usize)]) -> Tensor {
        let c = self.num_classes;
        let mut data = vec![0.0; classes.len() * 2 * c];
        for (p, &(a, b)) in classes.iter().enumerate() {
            data[p * 2 * c + a] = 1.0;
            data[p * 2 * c + c + b] = 1.0;
        }
        Tensor::new(&[classes.len(), 2 * c], data)
    }

    /// `layouts: [n, 1, H, W]`; `pairs` index into it with class labels per pair.
    pub fn forward(&self, f: &mut Forward, layouts: Var, pairs: &[(usize, usize)], classes: &[(usize, usize)]) -> Result<DiscOutput, NnError> {
        let shape = f.tape.shape(layouts).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.size || shape[3] != self.size {
            return Err(NnError::Shape(format!("discriminator expects [n, 1, {0}, {0}] layouts, got {shape:?}", self.size)));
        }
        if pairs.len() != classes.len() || pairs.is_empty() {
            return Err(NnError::Shape(format!("{} pairs with {} class labels", pairs.len(), classes.len())));
        }
        if classes.iter().any(|&(a, b)| a >= self.num_classes || b >= self.num_classes) {
            return Err(NnError::Shape("class label outside the discriminator vocabulary".into()));
        }
        let first: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let li = f.tape.gather(layouts, &first);
        let lj = f.tape.gather(layouts, &second);
        let codes = self.class_codes(classes);
        let mut x = match self.conditioning {
            Conditioning::Pooled => f.tape.concat(&[li, lj]),
            Conditioning::Spatial => {
                let (p, k, s) = (pairs.len(), 2 * self.num_classes, self.size);
                let mut planes = Vec::with_capacity(p * k * s * s);
                for row in codes.data.chunks(k) {
                    for &v in row {
                        planes.extend(std::iter::repeat_n(v, s * s));
                    }
                }
                let planes = f.tape.constant(Tensor::new(&[p, k, s, s], planes));
                f.tape.concat(&[li, lj, planes])
            }
        };
        for conv in &self.tower {
            x = conv.forward(f, x);
            x = f.tape.leaky_relu(x, SLOPE);
        }
        x = self.pool.forward(f, x);
        x = f.tape.leaky_relu(x, SLOPE);
        let p = pairs.len();
        let width = f.tape.shape(x)[1];
        x = f.tape.reshape(x, &[p, width]);
        if self.conditioning == Conditioning::Pooled {
            let c = f.tape.constant(codes);
            x = f.tape.concat(&[x, c]);
        }
        let h = self.hidden.forward(f, x);
        let h = f.tape.leaky_relu(h, SLOPE);
        let real_logit = self.real_head.forward(f, h);
        let real = f.tape.sigmoid(real_logit);
        let relation_logits = self.relation_head.forward(f, h);
        let relation = f.tape.softmax(relation_logits);
        Ok(DiscOutput { real_logit, relation_logits, real, relation })
    }
}
