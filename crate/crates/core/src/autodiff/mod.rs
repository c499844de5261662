//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! the tape through [`Tape::param`]; constants through [`Tape::constant`] and
//! never receive gradients. [`Tape::backward`] returns the gradient of a
//! scalar with respect to every bound parameter.

pub mod conv;
mod tensor;

use std::collections::HashMap;

pub use tensor::Tensor;

use conv::ConvGeom;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;
pub const BN_EPS: f64 = 1e-5;

/// Handle to a parameter tensor in a [`crate::nn::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    /// `1[x <= 1] * (1 - x)`
    Coverage,
    /// `1[x > 1] * (x - 1)`
    Overlap,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Reshape(Var),
    Linear { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, transpose: bool },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Gather { x: Var, index: Vec<usize> },
    IndexAdd { x: Var, index: Vec<usize>, scale: Vec<f64> },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Sum(Var),
    SumRows(Var),
    Softmax(Var),
    Piecewise(Var, Piece),
    L1 { x: Var, target: Vec<f64> },
    RowL2 { x: Var, target: Vec<f64> },
    Bce { p: Var, target: Vec<f64> },
    Nll { p: Var, labels: Vec<usize> },
    BceLogits { z: Var, target: Vec<f64> },
    CrossEntropyLogits { z: Var, labels: Vec<usize> },
    OrderPairs(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics gathered by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients with respect to bound parameters.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    pub by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }
}

/// Channel axis is 1; rows are axis 0; "inner" is the product of axes >= 2.
fn split_dims(shape: &[usize]) -> (usize, usize, usize) {
    let rows = shape[0];
    let channels = shape.get(1).copied().unwrap_or(1);
    let inner = shape.iter().skip(2).product();
    (rows, channels, inner)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^v)` without overflow.
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter; binding the same id twice returns the same variable.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// Binds a parameter as a constant: its value is used but it receives no gradient.
    pub fn frozen(&mut self, value: &Tensor) -> Var {
        self.constant(value.clone())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let needs = self.needs(&[x]);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "add shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let value = Tensor { shape: va.shape.clone(), data };
        let needs = self.needs(&[a, b]);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let value = Tensor { shape: va.shape.clone(), data };
        let needs = self.needs(&[a, b]);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshaped(shape);
        let needs = self.needs(&[x]);
        self.push(value, Op::Reshape(x), needs)
    }

    /// `x: [N, I]`, `w: [I, O]`, `b: [O]` → `[N, O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (n, i) = (vx.shape[0], vx.shape[1]);
        let o = vw.shape[1];
        assert_eq!(vw.shape[0], i, "linear: input width {i} vs weight {:?}", vw.shape);
        let mut out = conv::matmul(n, i, o, &vx.data, false, &vw.data, false);
        for row in out.chunks_mut(o) {
            row.iter_mut().zip(&vb.data).for_each(|(a, b)| *a += b);
        }
        let needs = self.needs(&[x, w, b]);
        self.push(Tensor::new(&[n, o], out), Op::Linear { x, w, b }, needs)
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, padding: usize, transpose: bool) -> ConvGeom {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vx.shape.len(), 4, "conv input must be NCHW, got {:?}", vx.shape);
        let (in_c, out_c) = if transpose { (vw.shape[0], vw.shape[1]) } else { (vw.shape[1], vw.shape[0]) };
        assert_eq!(vx.shape[1], in_c, "conv channels: input {:?}, weight {:?}", vx.shape, vw.shape);
        ConvGeom {
            batch: vx.shape[0],
            in_channels: in_c,
            out_channels: out_c,
            in_h: vx.shape[2],
            in_w: vx.shape[3],
            kernel: vw.shape[2],
            stride,
            padding,
        }
    }

    /// `x: [N, C, H, W]`, `w: [O, C, k, k]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Var {
        let geom = self.conv_geom(x, w, stride, padding, false);
        let data = conv::conv2d(&geom, &self.value(x).data, &self.value(w).data, &self.value(b).data);
        let (oh, ow) = geom.conv_out();
        let needs = self.needs(&[x, w, b]);
        let value = Tensor::new(&[geom.batch, geom.out_channels, oh, ow], data);
        self.push(value, Op::Conv { x, w, b, geom, transpose: false }, needs)
    }

    /// `x: [N, C, H, W]`, `w: [C, O, k, k]`, `b: [O]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Var {
        let geom = self.conv_geom(x, w, stride, padding, true);
        let data = conv::conv_transpose2d(&geom, &self.value(x).data, &self.value(w).data, &self.value(b).data);
        let (oh, ow) = geom.transpose_out();
        let needs = self.needs(&[x, w, b]);
        let value = Tensor::new(&[geom.batch, geom.out_channels, oh, ow], data);
        self.push(value, Op::Conv { x, w, b, geom, transpose: true }, needs)
    }

    /// Per-channel normalization over the row and spatial axes. With
    /// `running = None` the batch statistics are used (and returned);
    /// otherwise the given `(mean, var)` are applied as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> (Var, Option<BatchStats>) {
        let vx = self.value(x);
        let (rows, channels, inner) = split_dims(&vx.shape);
        let count = rows * inner;
        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![0.0; channels];
                let mut var = vec![0.0; channels];
                for r in 0..rows {
                    for c in 0..channels {
                        let plane = &vx.data[(r * channels + c) * inner..][..inner];
                        mean[c] += plane.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for r in 0..rows {
                    for c in 0..channels {
                        let plane = &vx.data[(r * channels + c) * inner..][..inner];
                        var[c] += plane.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let stats = BatchStats { mean: mean.clone(), var: var.clone(), count };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = Vec::with_capacity(vx.len());
        let mut out = Vec::with_capacity(vx.len());
        for r in 0..rows {
            for c in 0..channels {
                for &v in &vx.data[(r * channels + c) * inner..][..inner] {
                    let h = (v - mean[c]) * inv_std[c];
                    xhat.push(h);
                    out.push(g[c] * h + b[c]);
                }
            }
        }
        let value = Tensor { shape: vx.shape.clone(), data: out };
        let needs = self.needs(&[x, gamma, beta]);
        let batch_stats = stats.is_some();
        let var_out = self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, needs);
        (var_out, stats)
    }

    /// Selects rows of `x` along axis 0.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Var {
        let vx = self.value(x);
        let row = vx.row_len();
        let mut data = Vec::with_capacity(index.len() * row);
        for &i in index {
            data.extend_from_slice(&vx.data[i * row..(i + 1) * row]);
        }
        let mut shape = vx.shape.clone();
        shape[0] = index.len();
        let needs = self.needs(&[x]);
        self.push(Tensor { shape, data }, Op::Gather { x, index: index.to_vec() }, needs)
    }

    /// `out[index[p]] += scale[p] * x[p]` into a tensor with `rows` rows.
    pub fn index_add(&mut self, x: Var, index: &[usize], scale: &[f64], rows: usize) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.rows(), index.len());
        assert_eq!(scale.len(), index.len());
        let row = vx.row_len();
        let mut shape = vx.shape.clone();
        shape[0] = rows;
        let mut data = vec![0.0; rows * row];
        for (p, (&i, &s)) in index.iter().zip(scale).enumerate() {
            data[i * row..(i + 1) * row]
                .iter_mut()
                .zip(&vx.data[p * row..(p + 1) * row])
                .for_each(|(a, b)| *a += s * b);
        }
        let needs = self.needs(&[x]);
        self.push(Tensor { shape, data }, Op::IndexAdd { x, index: index.to_vec(), scale: scale.to_vec() }, needs)
    }

    /// Concatenates along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]);
        let (rows, _, inner) = split_dims(&first.shape);
        let mut shape = first.shape.clone();
        let mut channels = 0;
        for &p in parts {
            let v = self.value(p);
            let (r, c, i) = split_dims(&v.shape);
            assert!(r == rows && i == inner, "concat shape mismatch {:?} vs {:?}", v.shape, shape);
            channels += c;
        }
        shape[1] = channels;
        let mut data = Vec::with_capacity(rows * channels * inner);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape[1] * inner;
                data.extend_from_slice(&v.data[r * chunk..(r + 1) * chunk]);
            }
        }
        let needs = self.needs(parts);
        self.push(Tensor { shape, data }, Op::Concat { parts: parts.to_vec() }, needs)
    }

    /// Channels `start..start + len` along axis 1.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let (rows, channels, inner) = split_dims(&vx.shape);
        assert!(start + len <= channels);
        let mut data = Vec::with_capacity(rows * len * inner);
        for r in 0..rows {
            data.extend_from_slice(&vx.data[(r * channels + start) * inner..][..len * inner]);
        }
        let mut shape = vx.shape.clone();
        shape[1] = len;
        let needs = self.needs(&[x]);
        self.push(Tensor { shape, data }, Op::Slice { x, start }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data.iter().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Sums over axis 0, keeping a leading axis of size 1.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let row = vx.row_len();
        let mut data = vec![0.0; row];
        for chunk in vx.data.chunks(row) {
            data.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
        }
        let mut shape = vx.shape.clone();
        shape[0] = 1;
        let needs = self.needs(&[x]);
        self.push(Tensor { shape, data }, Op::SumRows(x), needs)
    }

    /// Row-wise softmax of a `[N, K]` tensor.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let k = vx.shape[1];
        let mut data = Vec::with_capacity(vx.len());
        for row in vx.data.chunks(k) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / z));
        }
        let value = Tensor { shape: vx.shape.clone(), data };
        let needs = self.needs(&[x]);
        self.push(value, Op::Softmax(x), needs)
    }

    pub fn piecewise(&mut self, x: Var, piece: Piece) -> Var {
        let f = match piece {
            Piece::Coverage => |v: f64| if v <= 1.0 { 1.0 - v } else { 0.0 },
            Piece::Overlap => |v: f64| if v > 1.0 { v - 1.0 } else { 0.0 },
        };
        self.unary(x, f, Op::Piecewise(x, piece))
    }

    /// `sum |x - target|`.
    pub fn l1(&mut self, x: Var, target: &[f64]) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.len(), target.len(), "l1 target size");
        let total = vx.data.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(total), Op::L1 { x, target: target.to_vec() }, needs)
    }

    /// Per-row Euclidean distance to `target`, shape `[N]`.
    pub fn row_l2(&mut self, x: Var, target: &[f64]) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.len(), target.len(), "row_l2 target size");
        let row = vx.row_len();
        let data = vx
            .data
            .chunks(row)
            .zip(target.chunks(row))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
            .collect::<Vec<_>>();
        let value = Tensor::new(&[vx.rows()], data);
        let needs = self.needs(&[x]);
        self.push(value, Op::RowL2 { x, target: target.to_vec() }, needs)
    }

    /// Elementwise binary cross-entropy of probabilities `p` against `target`.
    pub fn bce(&mut self, p: Var, target: &[f64]) -> Var {
        let vp = self.value(p);
        assert_eq!(vp.len(), target.len(), "bce target size");
        let data = vp
            .data
            .iter()
            .zip(target)
            .map(|(&q, &t)| {
                let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .collect();
        let value = Tensor { shape: vp.shape.clone(), data };
        let needs = self.needs(&[p]);
        self.push(value, Op::Bce { p, target: target.to_vec() }, needs)
    }

    /// `-ln p[r, labels[r]]` per row of a `[N, K]` probability tensor.
    pub fn nll(&mut self, p: Var, labels: &[usize]) -> Var {
        let vp = self.value(p);
        let k = vp.shape[1];
        assert_eq!(vp.rows(), labels.len());
        let data = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -vp.data[r * k + l].clamp(BCE_EPS, 1.0).ln())
            .collect();
        let value = Tensor::new(&[labels.len()], data);
        let needs = self.needs(&[p]);
        self.push(value, Op::Nll { p, labels: labels.to_vec() }, needs)
    }

    /// Elementwise binary cross-entropy of `sigmoid(z)` against `target`,
    /// computed from the logit without clamping.
    pub fn bce_logits(&mut self, z: Var, target: &[f64]) -> Var {
        let vz = self.value(z);
        assert_eq!(vz.len(), target.len(), "bce target size");
        let data = vz.data.iter().zip(target).map(|(&x, &t)| softplus(x) - t * x).collect();
        let value = Tensor { shape: vz.shape.clone(), data };
        let needs = self.needs(&[z]);
        self.push(value, Op::BceLogits { z, target: target.to_vec() }, needs)
    }

    /// `-ln softmax(z)[r, labels[r]]` per row of `[N, K]` logits.
    pub fn cross_entropy_logits(&mut self, z: Var, labels: &[usize]) -> Var {
        let vz = self.value(z);
        let k = vz.shape[1];
        assert_eq!(vz.rows(), labels.len());
        let data = vz.data.chunks(k).zip(labels).map(|(row, &l)| log_sum_exp(row) - row[l]).collect();
        let value = Tensor::new(&[labels.len()], data);
        let needs = self.needs(&[z]);
        self.push(value, Op::CrossEntropyLogits { z, labels: labels.to_vec() }, needs)
    }

    /// Maps rows `(a, b, c, d)` to `(min(a, c), min(b, d), max(a, c), max(b, d))`.
    pub fn order_pairs(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.shape[1], 4);
        let mut data = Vec::with_capacity(vx.len());
        for r in vx.data.chunks(4) {
            data.extend([r[0].min(r[2]), r[1].min(r[3]), r[0].max(r[2]), r[1].max(r[3])]);
        }
        let value = Tensor { shape: vx.shape.clone(), data };
        let needs = self.needs(&[x]);
        self.push(value, Op::OrderPairs(x), needs)
    }

    /// Gradient of the scalar `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let by_param = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.value(v).shape));
                (id, g)
            })
            .collect();
        Gradients { by_param }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.data.iter_mut().zip(&data).for_each(|(a, b)| *a += b),
            slot => *slot = Some(Tensor { shape: shape.to_vec(), data }),
        }
    }

    fn propagate(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let shape_of = |v: Var| self.value(v).shape.clone();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, &dy.shape, dy.data.clone());
                self.accumulate(grads, *b, &dy.shape, dy.data.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = dy.data.iter().zip(&vb.data).map(|(g, y)| g * y).collect();
                let db = dy.data.iter().zip(&va.data).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, &dy.shape, da);
                self.accumulate(grads, *b, &dy.shape, db);
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, &dy.shape, dy.data.iter().map(|g| g * c).collect());
            }
            Op::Relu(x) => {
                let d = dy.data.iter().zip(&out.data).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, &dy.shape, d);
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x);
                let d = dy.data.iter().zip(&vx.data).map(|(g, v)| if *v > 0.0 { *g } else { g * slope }).collect();
                self.accumulate(grads, *x, &dy.shape, d);
            }
            Op::Sigmoid(x) => {
                let d = dy.data.iter().zip(&out.data).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, &dy.shape, d);
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, &shape_of(*x), dy.data.clone());
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, i) = (vx.shape[0], vx.shape[1]);
                let o = vw.shape[1];
                if self.nodes[x.0].needs_grad {
                    let dx = conv::matmul(n, o, i, &dy.data, false, &vw.data, true);
                    self.accumulate(grads, *x, &vx.shape, dx);
                }
                if self.nodes[w.0].needs_grad {
                    let dw = conv::matmul(i, n, o, &vx.data, true, &dy.data, false);
                    self.accumulate(grads, *w, &vw.shape, dw);
                }
                let mut db = vec![0.0; o];
                for g in dy.data.chunks(o) {
                    db.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                self.accumulate(grads, *b, &[o], db);
            }
            Op::Conv { x, w, b, geom, transpose } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let need_w = self.nodes[w.0].needs_grad;
                let (dx, dw, db) = if *transpose {
                    conv::conv_transpose2d_backward(geom, &vx.data, &vw.data, &dy.data, need_w)
                } else {
                    conv::conv2d_backward(geom, &vx.data, &vw.data, &dy.data, need_w)
                };
                self.accumulate(grads, *x, &vx.shape, dx);
                self.accumulate(grads, *w, &vw.shape, dw);
                self.accumulate(grads, *b, &[geom.out_channels], db);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (rows, channels, inner) = split_dims(&dy.shape);
                let g = &self.value(*gamma).data;
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for r in 0..rows {
                    for c in 0..channels {
                        let off = (r * channels + c) * inner;
                        for k in off..off + inner {
                            dgamma[c] += dy.data[k] * xhat[k];
                            dbeta[c] += dy.data[k];
                        }
                    }
                }
                let count = (rows * inner) as f64;
                let mut dx = vec![0.0; dy.len()];
                for r in 0..rows {
                    for c in 0..channels {
                        let off = (r * channels + c) * inner;
                        for k in off..off + inner {
                            dx[k] = if *batch_stats {
                                g[c] * inv_std[c] / count * (count * dy.data[k] - dbeta[c] - xhat[k] * dgamma[c])
                            } else {
                                g[c] * inv_std[c] * dy.data[k]
                            };
                        }
                    }
                }
                self.accumulate(grads, *x, &dy.shape, dx);
                self.accumulate(grads, *gamma, &[channels], dgamma);
                self.accumulate(grads, *beta, &[channels], dbeta);
            }
            Op::Gather { x, index } => {
                let shape = shape_of(*x);
                let row: usize = shape.iter().skip(1).product();
                let mut dx = vec![0.0; shape[0] * row];
                for (p, &i) in index.iter().enumerate() {
                    dx[i * row..(i + 1) * row]
                        .iter_mut()
                        .zip(&dy.data[p * row..(p + 1) * row])
                        .for_each(|(a, b)| *a += b);
                }
                self.accumulate(grads, *x, &shape, dx);
            }
            Op::IndexAdd { x, index, scale } => {
                let shape = shape_of(*x);
                let row: usize = shape.iter().skip(1).product();
                let mut dx = Vec::with_capacity(index.len() * row);
                for (&i, &s) in index.iter().zip(scale) {
                    dx.extend(dy.data[i * row..(i + 1) * row].iter().map(|g| g * s));
                }
                self.accumulate(grads, *x, &shape, dx);
            }
            Op::Concat { parts } => {
                let (rows, channels, inner) = split_dims(&dy.shape);
                let mut start = 0;
                for &p in parts {
                    let shape = shape_of(p);
                    let c = shape[1];
                    let mut d = Vec::with_capacity(rows * c * inner);
                    for r in 0..rows {
                        d.extend_from_slice(&dy.data[(r * channels + start) * inner..][..c * inner]);
                    }
                    self.accumulate(grads, p, &shape, d);
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let shape = shape_of(*x);
                let (rows, channels, inner) = split_dims(&shape);
                let len = dy.shape[1];
                let mut dx = vec![0.0; rows * channels * inner];
                for r in 0..rows {
                    dx[(r * channels + start) * inner..][..len * inner]
                        .copy_from_slice(&dy.data[r * len * inner..(r + 1) * len * inner]);
                }
                self.accumulate(grads, *x, &shape, dx);
            }
            Op::Sum(x) => {
                let shape = shape_of(*x);
                let n = shape.iter().product();
                self.accumulate(grads, *x, &shape, vec![dy.data[0]; n]);
            }
            Op::SumRows(x) => {
                let shape = shape_of(*x);
                let dx = (0..shape[0]).flat_map(|_| dy.data.iter().copied()).collect();
                self.accumulate(grads, *x, &shape, dx);
            }
            Op::Softmax(x) => {
                let k = out.shape[1];
                let mut dx = Vec::with_capacity(out.len());
                for (y, g) in out.data.chunks(k).zip(dy.data.chunks(k)) {
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    dx.extend(y.iter().zip(g).map(|(yi, gi)| yi * (gi - dot)));
                }
                self.accumulate(grads, *x, &out.shape, dx);
            }
            Op::Piecewise(x, piece) => {
                let vx = self.value(*x);
                let d = dy
                    .data
                    .iter()
                    .zip(&vx.data)
                    .map(|(g, &v)| match piece {
                        Piece::Coverage if v <= 1.0 => -g,
                        Piece::Overlap if v > 1.0 => *g,
                        _ => 0.0,
                    })
                    .collect();
                self.accumulate(grads, *x, &dy.shape, d);
            }
            Op::L1 { x, target } => {
                let vx = self.value(*x);
                let g = dy.data[0];
                let d = vx
                    .data
                    .iter()
                    .zip(target)
                    .map(|(a, b)| if a > b { g } else if a < b { -g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &vx.shape, d);
            }
            Op::RowL2 { x, target } => {
                let vx = self.value(*x);
                let row = vx.row_len();
                let mut d = Vec::with_capacity(vx.len());
                for (r, (a, b)) in vx.data.chunks(row).zip(target.chunks(row)).enumerate() {
                    let norm = out.data[r];
                    d.extend(a.iter().zip(b).map(|(p, q)| if norm > 0.0 { dy.data[r] * (p - q) / norm } else { 0.0 }));
                }
                self.accumulate(grads, *x, &vx.shape, d);
            }
            Op::Bce { p, target } => {
                let vp = self.value(*p);
                let d = vp
                    .data
                    .iter()
                    .zip(target)
                    .zip(&dy.data)
                    .map(|((&q, &t), g)| {
                        if q < BCE_EPS || q > 1.0 - BCE_EPS {
                            0.0
                        } else {
                            g * (-t / q + (1.0 - t) / (1.0 - q))
                        }
                    })
                    .collect();
                self.accumulate(grads, *p, &vp.shape, d);
            }
            Op::Nll { p, labels } => {
                let vp = self.value(*p);
                let k = vp.shape[1];
                let mut d = vec![0.0; vp.len()];
                for (r, &l) in labels.iter().enumerate() {
                    let q = vp.data[r * k + l];
                    if q >= BCE_EPS {
                        d[r * k + l] = -dy.data[r] / q;
                    }
                }
                self.accumulate(grads, *p, &vp.shape, d);
            }
            Op::BceLogits { z, target } => {
                let vz = self.value(*z);
                let d = vz.data.iter().zip(target).zip(&dy.data).map(|((&x, &t), g)| g * (sigmoid(x) - t)).collect();
                self.accumulate(grads, *z, &vz.shape, d);
            }
            Op::CrossEntropyLogits { z, labels } => {
                let vz = self.value(*z);
                let k = vz.shape[1];
                let mut d = Vec::with_capacity(vz.len());
                for ((row, &l), g) in vz.data.chunks(k).zip(labels).zip(&dy.data) {
                    let lse = log_sum_exp(row);
                    d.extend(row.iter().enumerate().map(|(j, &x)| g * ((x - lse).exp() - (j == l) as u8 as f64)));
                }
                self.accumulate(grads, *z, &vz.shape, d);
            }
            Op::OrderPairs(x) => {
                let vx = self.value(*x);
                let mut d = vec![0.0; vx.len()];
                for (r, (v, g)) in vx.data.chunks(4).zip(dy.data.chunks(4)).enumerate() {
                    let base = r * 4;
                    for axis in 0..2 {
                        let (a, b) = (axis, axis + 2);
                        // Ties route the minimum to the first slot.
                        let (lo, hi) = if v[a] <= v[b] { (a, b) } else { (b, a) };
                        d[base + lo] += g[axis];
                        d[base + hi] += g[axis + 2];
                    }
                }
                self.accumulate(grads, *x, &vx.shape, d);
            }
        }
    }
}
