//! Central-difference checks of tape gradients against a whole model.

use super::TrainError;
use crate::autodiff::Gradients;
use crate::nn::Model;

/// Analytic and numeric derivatives at the probed coordinates of one tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub tensors: Vec<TensorCheck>,
}

/// `|a - n| / max(|a|, |n|)` over vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

impl GradCheck {
    /// Relative error per parameter group (name prefix up to the first dot).
    pub fn group_errors(&self) -> Vec<(String, f64)> {
        let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        for t in &self.tensors {
            let group = t.name.split('.').next().unwrap_or("").to_string();
            if !groups.iter().any(|g| g.0 == group) {
                groups.push((group.clone(), Vec::new(), Vec::new()));
            }
            let g = groups.iter_mut().find(|g| g.0 == group).unwrap();
            g.1.extend(&t.analytic);
            g.2.extend(&t.numeric);
        }
        groups.into_iter().map(|(name, a, n)| (name, relative_error(&a, &n))).collect()
    }

    pub fn max_group_error(&self) -> f64 {
        self.group_errors().iter().map(|g| g.1).fold(0.0, f64::max)
    }

    /// The tensor with the largest relative error.
    pub fn worst_tensor(&self) -> Option<(&str, f64)> {
        self.tensors
            .iter()
            .map(|t| (t.name.as_str(), relative_error(&t.analytic, &t.numeric)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares the gradient that `loss` reports with central differences of
/// step `h`, at up to `coords` evenly spaced coordinates of every trainable
/// tensor.
pub fn gradient_check(
    model: &Model,
    coords: usize,
    h: f64,
    loss: impl Fn(&Model) -> Result<(f64, Gradients), TrainError>,
) -> Result<GradCheck, TrainError> {
    let (_, grads) = loss(model)?;
    let mut probe = model.clone();
    let mut out = GradCheck::default();
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.entries()[id.0].trainable).collect();
    for id in ids {
        let len = model.store.get(id).len();
        let picks: Vec<usize> = if len <= coords { (0..len).collect() } else { (0..coords).map(|j| j * len / coords).collect() };
        let mut check = TensorCheck { name: model.store.name(id).to_string(), analytic: Vec::new(), numeric: Vec::new() };
        for k in picks {
            check.analytic.push(grads.get(id).map_or(0.0, |g| g.data[k]));
            let orig = probe.store.get(id).data[k];
            probe.store.get_mut(id).data[k] = orig + h;
            let up = loss(&probe)?.0;
            probe.store.get_mut(id).data[k] = orig - h;
            let down = loss(&probe)?.0;
            probe.store.get_mut(id).data[k] = orig;
            check.numeric.push((up - down) / (2.0 * h));
        }
        out.tensors.push(check);
    }
    Ok(out)
}
