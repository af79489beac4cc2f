//! Contrastive, categorical and hinge-rank objectives.
//!
//! The `*_graph` builders record differentiable losses on a [`Graph`]; the
//! plain functions evaluate the same graphs on constant inputs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub m_contrastive: f64,
    pub m_rank: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { m_contrastive: 1.0, m_rank: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_contrastive > 0.0 && self.m_contrastive.is_finite()) {
            return Err(Error::Config(format!(
                "loss.m_contrastive = {} must be a positive number",
                self.m_contrastive
            )));
        }
        if !(self.m_rank > 0.0 && self.m_rank.is_finite()) {
            return Err(Error::Config(format!("loss.m_rank = {} must be a positive number", self.m_rank)));
        }
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn dot_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// `½ d²` for compatible pairs, `½ max(0, m − d)²` otherwise, with `d` the
/// unsquared Euclidean distance.
pub fn contrastive_loss_graph(g: &mut Graph, xi: Var, xj: Var, compatible: bool, margin: f64) -> Result<Var> {
    let diff = g.sub(xi, xj)?;
    let sq = g.square(diff)?;
    let d2 = g.sum(sq)?;
    if compatible {
        return g.scale(d2, 0.5);
    }
    let d = g.sqrt(d2)?;
    let m = g.constant(Tensor::scalar(margin))?;
    let gap = g.sub(m, d)?;
    let hinge = g.max_with_zero(gap)?;
    let h2 = g.square(hinge)?;
    g.scale(h2, 0.5)
}

/// `−log(max(p[label], floor))` for one probability vector.
pub fn cross_entropy_graph(g: &mut Graph, probs: Var, label: usize) -> Result<Var> {
    let n = g.value(probs).len();
    if label >= n {
        return Err(Error::Input(format!("label {label} out of range for {n} classes")));
    }
    // floor + max(0, p − floor) clamps from below without leaving the op set
    let floor = g.constant(Tensor::filled(g.value(probs).shape(), PROB_FLOOR))?;
    let shifted = g.sub(probs, floor)?;
    let pos = g.max_with_zero(shifted)?;
    let clamped = g.add(pos, floor)?;
    let logp = g.log(clamped)?;
    let mut onehot = vec![0.0; n];
    onehot[label] = -1.0;
    let sel = g.constant(Tensor::vector(onehot))?;
    g.dot(sel, logp)
}

pub fn categorical_loss_graph(
    g: &mut Graph,
    pair: (Var, Var),
    compatible: bool,
    probs: (Var, Var),
    labels: (usize, usize),
    margin: f64,
) -> Result<Var> {
    let can = contrastive_loss_graph(g, pair.0, pair.1, compatible, margin)?;
    let ci = cross_entropy_graph(g, probs.0, labels.0)?;
    let cj = cross_entropy_graph(g, probs.1, labels.1)?;
    let s = g.add(can, ci)?;
    g.add(s, cj)
}

/// Σ_wrong max(0, m − S(I, T_correct) + S(I, T_wrong)).
pub fn hinge_rank_loss_graph(
    g: &mut Graph,
    image: Var,
    correct: Var,
    wrong: &[Var],
    margin: f64,
) -> Result<Var> {
    if wrong.is_empty() {
        return Err(Error::Input("hinge rank loss needs at least one wrong text".into()));
    }
    let s_pos = g.dot(image, correct)?;
    let m = g.constant(Tensor::scalar(margin))?;
    let base = g.sub(m, s_pos)?;
    let mut terms = Vec::with_capacity(wrong.len());
    for &w in wrong {
        let s_neg = g.dot(image, w)?;
        let z = g.add(base, s_neg)?;
        terms.push(g.max_with_zero(z)?);
    }
    let all = g.concat(&terms)?;
    g.sum(all)
}

fn consts(g: &mut Graph, xs: &[&[f64]]) -> Result<Vec<Var>> {
    xs.iter().map(|x| g.constant(Tensor::vector(x.to_vec()))).collect()
}

pub fn contrastive_loss(xi: &[f64], xj: &[f64], compatible: bool, margin: f64) -> Result<f64> {
    same_len(xi, xj)?;
    let mut g = Graph::new();
    let v = consts(&mut g, &[xi, xj])?;
    let l = contrastive_loss_graph(&mut g, v[0], v[1], compatible, margin)?;
    Ok(g.value(l).item())
}

/// Mean over the batch of `−log p[label]`.
pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::Input(format!("{} probability rows for {} labels", probs.len(), labels.len())));
    }
    let mut g = Graph::new();
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let pv = g.constant(Tensor::vector(p.clone()))?;
        let l = cross_entropy_graph(&mut g, pv, y)?;
        total += g.value(l).item();
    }
    Ok(total / probs.len() as f64)
}

#[allow(clippy::too_many_arguments)]
pub fn categorical_loss(
    xi: &[f64],
    xj: &[f64],
    compatible: bool,
    probs_i: &[f64],
    label_i: usize,
    probs_j: &[f64],
    label_j: usize,
    margin: f64,
) -> Result<f64> {
    same_len(xi, xj)?;
    let mut g = Graph::new();
    let v = consts(&mut g, &[xi, xj, probs_i, probs_j])?;
    let l =
        categorical_loss_graph(&mut g, (v[0], v[1]), compatible, (v[2], v[3]), (label_i, label_j), margin)?;
    Ok(g.value(l).item())
}

pub fn hinge_rank_loss(image: &[f64], correct: &[f64], wrong: &[Vec<f64>], margin: f64) -> Result<f64> {
    same_len(image, correct)?;
    for w in wrong {
        same_len(image, w)?;
    }
    let mut g = Graph::new();
    let i = g.constant(Tensor::vector(image.to_vec()))?;
    let c = g.constant(Tensor::vector(correct.to_vec()))?;
    let ws = wrong.iter().map(|w| g.constant(Tensor::vector(w.clone()))).collect::<Result<Vec<_>>>()?;
    let l = hinge_rank_loss_graph(&mut g, i, c, &ws, margin)?;
    Ok(g.value(l).item())
}
