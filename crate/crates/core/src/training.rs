//! Two-stage Siamese training, visual-text embedding training and margin
//! cross-validation.
//!
//! Stage 1 updates only the head (E, plus C for the categorical variant) for
//! a fixed number of minibatches with a high learning rate. Stage 2 fine-tunes
//! every parameter the variant uses for whole epochs with a low learning rate.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::dataset::ItemRecord;
use crate::error::{Error, Result};
use crate::evaluation::{auc_from_distances, embed_items, pair_distances};
use crate::losses::{contrastive_loss_graph, cross_entropy_graph, hinge_rank_loss_graph, LossConfig};
use crate::models::{
    base_features, init_params, project_graph, siamese_graph, text_encode_graph, JointSide, ModelConfig,
    ModelParameters, Variant, LSTM_GATES,
};
use crate::retrieval::text_match_recall;
use crate::rng::SeedStream;
use crate::sampling::{vte_batch_at, PairSample, PairsBySplit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub stage1_lr: f64,
    pub stage1_iterations: usize,
    pub stage2_lr: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub vte_lr: f64,
    pub vte_epochs: usize,
    pub vte_batches_per_step: usize,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Upper bound on validation pairs scored after each epoch.
    pub val_subsample: usize,
    pub margin_candidates: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            stage1_lr: 0.01,
            stage1_iterations: 50,
            stage2_lr: 0.0001,
            epochs: 8,
            momentum: 0.9,
            batch_size: 32,
            vte_lr: 0.001,
            vte_epochs: 8,
            vte_batches_per_step: 1,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            val_subsample: 20_000,
            margin_candidates: vec![0.1, 1.0, 10.0],
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in
            [("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr), ("vte_lr", self.vte_lr)]
        {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("training.{name} = {lr} must be >= 0")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("training.epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("training.momentum = {} must be in [0, 1)", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps > 0.0) {
            return Err(Error::Config("training.rmsprop_decay must be in [0, 1) and rmsprop_eps > 0".into()));
        }
        if self.batch_size == 0 || self.vte_batches_per_step == 0 {
            return Err(Error::Config("training batch sizes must be >= 1".into()));
        }
        if self.margin_candidates.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Config("training.margin_candidates must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter optimizer buffers, shaped like the parameters they track.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub buffers: BTreeMap<String, Vec<f64>>,
}

pub trait Optimizer {
    fn step(&mut self, params: &mut ParamStore, grads: &[(String, Vec<f64>)]) -> Result<()>;
    fn state(&self) -> &OptimizerState;
}

/// `v ← ρ v − ε ∇`, `w ← w + v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    state: OptimizerState,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum { lr, momentum, state: OptimizerState::default() }
    }
}

impl Optimizer for SgdMomentum {
    fn step(&mut self, params: &mut ParamStore, grads: &[(String, Vec<f64>)]) -> Result<()> {
        for (name, g) in grads {
            let w = params.get_mut(name)?;
            let v = self.state.buffers.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = self.momentum * *vi - self.lr * gi;
                *wi += *vi;
            }
        }
        Ok(())
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }
}

/// `s ← β s + (1 − β) ∇²`, `w ← w − ε ∇ / (√s + δ)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    state: OptimizerState,
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Self {
        RmsProp { lr, decay, eps, state: OptimizerState::default() }
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, params: &mut ParamStore, grads: &[(String, Vec<f64>)]) -> Result<()> {
        for (name, g) in grads {
            let w = params.get_mut(name)?;
            let s = self.state.buffers.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for ((wi, si), gi) in w.data_mut().iter_mut().zip(s.iter_mut()).zip(g) {
                *si = self.decay * *si + (1.0 - self.decay) * gi * gi;
                *wi -= self.lr * gi / (si.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Head,
    Full,
    Vte,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Head => "head",
            Stage::Full => "full",
            Stage::Vte => "vte",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_recall_at_1: Option<f64>,
    /// Fraction of negative pairs still inside the margin.
    pub active_negatives: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        let mut s = String::from("epoch\tstage\tloss\tval_auc\tval_recall_at_1\tactive_negatives\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.epoch,
                e.stage.as_str(),
                opt(e.loss),
                opt(e.val_auc),
                opt(e.val_recall_at_1),
                opt(e.active_negatives)
            );
        }
        s
    }

    pub fn last_val_auc(&self) -> Option<f64> {
        self.entries.iter().rev().find_map(|e| e.val_auc)
    }

    pub fn first_val_auc(&self) -> Option<f64> {
        self.entries.iter().find_map(|e| e.val_auc)
    }
}

/// SHA-256 over the names, shapes and value bits of the selected parameters.
pub fn param_digest(params: &ParamStore, select: impl Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter().filter(|(n, _)| select(n)) {
        h.update(name.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn is_base_param(name: &str) -> bool {
    name.starts_with("base.")
}

/// Everything a Siamese run needs besides its hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct SiameseData<'a> {
    pub items: &'a [ItemRecord],
    pub train: &'a [PairSample],
    pub val: &'a [PairSample],
}

impl<'a> SiameseData<'a> {
    pub fn new(items: &'a [ItemRecord], pairs: &'a PairsBySplit) -> Self {
        SiameseData { items, train: &pairs.train, val: &pairs.val }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Hyper<'a> {
    pub model: &'a ModelConfig,
    pub loss: &'a LossConfig,
    pub training: &'a TrainingConfig,
}

struct PairIndex {
    a: usize,
    b: usize,
    compatible: bool,
}

fn index_pairs(items: &[ItemRecord], pairs: &[PairSample]) -> Result<Vec<PairIndex>> {
    let idx: HashMap<&str, usize> = items.iter().enumerate().map(|(k, i)| (i.id.as_str(), k)).collect();
    pairs
        .iter()
        .map(|p| {
            let get = |id: &str| {
                idx.get(id)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("pair references unknown item {id:?}")))
            };
            Ok(PairIndex { a: get(&p.i)?, b: get(&p.j)?, compatible: p.compatible })
        })
        .collect()
}

struct BatchOutcome {
    loss: f64,
    negatives: usize,
    active: usize,
}

#[allow(clippy::too_many_arguments)]
fn siamese_step(
    params: &mut ModelParameters,
    opt: &mut dyn Optimizer,
    items: &[ItemRecord],
    batch: &[&PairIndex],
    variant: Variant,
    hyper: &Hyper<'_>,
    names: &[String],
    trainable: &[&str],
) -> Result<BatchOutcome> {
    let mut g = Graph::new();
    let b = params.bind_subset(&mut g, names, |n| trainable.contains(&n))?;
    let mut losses = Vec::with_capacity(batch.len());
    let (mut negatives, mut active) = (0, 0);
    let margin = hyper.loss.m_contrastive;
    for p in batch {
        let (ia, ib) = (&items[p.a], &items[p.b]);
        let xa = g.constant(Tensor::vector(ia.features.clone()))?;
        let xb = g.constant(Tensor::vector(ib.features.clone()))?;
        let (ea, pa) = siamese_graph(&mut g, &b, hyper.model, variant, xa)?;
        let (eb, pb) = siamese_graph(&mut g, &b, hyper.model, variant, xb)?;
        let mut l = contrastive_loss_graph(&mut g, ea, eb, p.compatible, margin)?;
        if !p.compatible {
            negatives += 1;
            if g.value(l).item() > 0.0 {
                active += 1;
            }
        }
        if let (Some(pa), Some(pb)) = (pa, pb) {
            let ca = cross_entropy_graph(&mut g, pa, ia.style)?;
            let cb = cross_entropy_graph(&mut g, pb, ib.style)?;
            l = g.add(l, ca)?;
            l = g.add(l, cb)?;
        }
        losses.push(l);
    }
    let all = g.concat(&losses)?;
    let loss = g.mean(all)?;
    g.backward(loss)?;
    let grads: Vec<(String, Vec<f64>)> = trainable
        .iter()
        .map(|&n| {
            let v = b.get(n)?;
            Ok((
                n.to_string(),
                g.grad(v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).len()]),
            ))
        })
        .collect::<Result<_>>()?;
    opt.step(params, &grads)?;
    for &n in trainable {
        if !params.get(n)?.is_finite() {
            return Err(Error::Numerics(format!("parameter {n} became non-finite")));
        }
    }
    Ok(BatchOutcome { loss: g.value(loss).item(), negatives, active })
}

fn val_auc(
    data: &SiameseData<'_>,
    val: &[PairSample],
    params: &ModelParameters,
    hyper: &Hyper<'_>,
    variant: Variant,
) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    // Embed only the items the validation pairs touch.
    let mut touched: Vec<&str> = val.iter().flat_map(|p| [p.i.as_str(), p.j.as_str()]).collect();
    touched.sort_unstable();
    touched.dedup();
    let by_id: HashMap<&str, &ItemRecord> = data.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let subset: Vec<ItemRecord> = touched
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|i| (*i).clone())
                .ok_or_else(|| Error::Input(format!("validation pair references unknown item {id:?}")))
        })
        .collect::<Result<_>>()?;
    let emb = embed_items(&subset, params, hyper.model, variant)?;
    let index = crate::evaluation::id_index(&subset);
    let (d, y) = pair_distances(val, &emb, &index)?;
    if !y.iter().any(|&l| l) || y.iter().all(|&l| l) {
        return Ok(None);
    }
    Ok(Some(auc_from_distances(&d, &y)?))
}

fn with_minibatch(e: Error, k: usize) -> Error {
    match e {
        Error::Numerics(m) => Error::Numerics(format!("minibatch {k}: {m}")),
        other => other,
    }
}

/// Train a Siamese variant from parameters initialized with the run seed.
pub fn train_siamese(
    variant: Variant,
    data: SiameseData<'_>,
    hyper: Hyper<'_>,
) -> Result<(ModelParameters, TrainingLog)> {
    hyper.model.validate()?;
    let params = init_params(hyper.model, &mut SeedStream::new(hyper.training.seed).rng("init"))?;
    train_siamese_from(params, variant, data, hyper)
}

pub fn train_siamese_from(
    mut params: ModelParameters,
    variant: Variant,
    data: SiameseData<'_>,
    hyper: Hyper<'_>,
) -> Result<(ModelParameters, TrainingLog)> {
    let cfg = hyper.training;
    cfg.validate()?;
    hyper.loss.validate()?;
    hyper.model.validate()?;
    if variant == Variant::Short && hyper.model.short_truncate_at.is_none() {
        return Err(Error::Config("short variant needs model.short_truncate_at".into()));
    }
    if data.train.is_empty() {
        return Err(Error::Input("no training pairs".into()));
    }
    let stream = SeedStream::new(cfg.seed);
    let pairs = index_pairs(data.items, data.train)?;
    let mut val: Vec<PairSample> = data.val.to_vec();
    if val.len() > cfg.val_subsample {
        val.shuffle(&mut stream.rng("train/val-subsample"));
        val.truncate(cfg.val_subsample);
    }

    let names = variant.siamese_params(hyper.model);
    let head: Vec<&str> = variant.head_params().to_vec();
    let all: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut log = TrainingLog::default();
    log.entries.push(LogEntry {
        epoch: 0,
        stage: Stage::Init,
        loss: None,
        val_auc: val_auc(&data, &val, &params, &hyper, variant)?,
        val_recall_at_1: None,
        active_negatives: None,
    });

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle = stream.rng("train/shuffle");
    let mut minibatch = 0usize;

    // Stage 1: head only, cycling through reshuffled pairs.
    if cfg.stage1_iterations > 0 {
        let mut opt = SgdMomentum::new(cfg.stage1_lr, cfg.momentum);
        let (mut total, mut neg, mut act) = (0.0, 0, 0);
        let mut cursor = order.len();
        for _ in 0..cfg.stage1_iterations {
            if cursor + cfg.batch_size > order.len() {
                order.shuffle(&mut shuffle);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let batch: Vec<&PairIndex> = order[cursor..end].iter().map(|&k| &pairs[k]).collect();
            cursor = end;
            let out = siamese_step(&mut params, &mut opt, data.items, &batch, variant, &hyper, &names, &head)
                .map_err(|e| with_minibatch(e, minibatch))?;
            minibatch += 1;
            total += out.loss;
            neg += out.negatives;
            act += out.active;
        }
        log.entries.push(LogEntry {
            epoch: 0,
            stage: Stage::Head,
            loss: Some(total / cfg.stage1_iterations as f64),
            val_auc: val_auc(&data, &val, &params, &hyper, variant)?,
            val_recall_at_1: None,
            active_negatives: (neg > 0).then(|| act as f64 / neg as f64),
        });
    }

    // Stage 2: everything, whole epochs.
    let mut opt = SgdMomentum::new(cfg.stage2_lr, cfg.momentum);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut batches, mut neg, mut act) = (0.0, 0usize, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PairIndex> = chunk.iter().map(|&k| &pairs[k]).collect();
            let out = siamese_step(&mut params, &mut opt, data.items, &batch, variant, &hyper, &names, &all)
                .map_err(|e| with_minibatch(e, minibatch))?;
            minibatch += 1;
            total += out.loss;
            batches += 1;
            neg += out.negatives;
            act += out.active;
        }
        log.entries.push(LogEntry {
            epoch,
            stage: Stage::Full,
            loss: Some(total / batches as f64),
            val_auc: val_auc(&data, &val, &params, &hyper, variant)?,
            val_recall_at_1: None,
            active_negatives: (neg > 0).then(|| act as f64 / neg as f64),
        });
    }
    Ok((params, log))
}

/// Parameters learned by visual-text training: both joint projections, the
/// token table and the LSTM.
pub fn vte_trainable(name: &str) -> bool {
    name.starts_with("joint.") || name.starts_with("text.") || name.starts_with("lstm.")
}

fn vte_param_names() -> Vec<String> {
    let mut names =
        vec!["joint.visual".to_string(), "joint.text".to_string(), "text.token_table".to_string()];
    for g in LSTM_GATES {
        for kind in ["w", "u", "b"] {
            names.push(format!("lstm.{kind}_{g}"));
        }
    }
    names
}

/// Hinge-rank training of the joint space over 17-item batches. The visual
/// base is read from `frozen` and never updated.
pub fn train_vte(
    items: &[ItemRecord],
    val_items: &[ItemRecord],
    hyper: Hyper<'_>,
    frozen: &ModelParameters,
) -> Result<(ModelParameters, TrainingLog)> {
    let cfg = hyper.training;
    cfg.validate()?;
    hyper.loss.validate()?;
    crate::models::check_params(frozen, hyper.model)?;
    let items: Vec<&ItemRecord> = items.iter().filter(|i| !i.tokens.is_empty()).collect();
    let owned: Vec<ItemRecord> = items.iter().map(|i| (*i).clone()).collect();
    if owned.is_empty() {
        return Err(Error::Input("no items with text tokens to train on".into()));
    }
    let stream = SeedStream::new(cfg.seed);
    let mut params = frozen.clone();
    let visual: Vec<Vec<f64>> =
        owned.iter().map(|i| base_features(&i.features, frozen, hyper.model)).collect::<Result<_>>()?;
    let names = vte_param_names();
    let trainable: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut opt = RmsProp::new(cfg.vte_lr, cfg.rmsprop_decay, cfg.rmsprop_eps);
    let mut log = TrainingLog::default();
    let val_r1 = |p: &ModelParameters| -> Result<Option<f64>> {
        if val_items.len() <= crate::sampling::VTE_NEGATIVES {
            return Ok(None);
        }
        text_match_recall(val_items, p, hyper.model, 1, stream.derive("vte/val")).map(Some)
    };
    log.entries.push(LogEntry {
        epoch: 0,
        stage: Stage::Init,
        loss: None,
        val_auc: None,
        val_recall_at_1: val_r1(&params)?,
        active_negatives: None,
    });

    let mut order: Vec<usize> = (0..owned.len()).collect();
    let mut shuffle = stream.rng("vte/shuffle");
    let batch_seeds = stream.child("vte/batches");
    let mut step = 0usize;
    for epoch in 1..=cfg.vte_epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.vte_batches_per_step) {
            let mut g = Graph::new();
            let b = params.bind_subset(&mut g, &names, |n| trainable.contains(&n))?;
            let mut losses = Vec::new();
            for &r in chunk {
                let batch = vte_batch_at(&owned, r, batch_seeds.derive(&format!("{epoch}/{r}")))?;
                let xv = g.constant(Tensor::vector(visual[r].clone()))?;
                let xi = project_graph(&mut g, &b, JointSide::Visual, xv)?;
                let mut texts = Vec::with_capacity(batch.len());
                for m in batch.members() {
                    let h = text_encode_graph(&mut g, &b, hyper.model, &owned[m].tokens)?;
                    texts.push(project_graph(&mut g, &b, JointSide::Text, h)?);
                }
                losses.push(hinge_rank_loss_graph(&mut g, xi, texts[0], &texts[1..], hyper.loss.m_rank)?);
            }
            let all = g.concat(&losses)?;
            let loss = g.mean(all)?;
            g.backward(loss).map_err(|e| with_minibatch(e, step))?;
            let grads: Vec<(String, Vec<f64>)> = trainable
                .iter()
                .map(|&n| {
                    let v = b.get(n)?;
                    Ok((
                        n.to_string(),
                        g.grad(v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).len()]),
                    ))
                })
                .collect::<Result<_>>()?;
            opt.step(&mut params, &grads)?;
            total += g.value(loss).item();
            steps += 1;
            step += 1;
        }
        log.entries.push(LogEntry {
            epoch,
            stage: Stage::Vte,
            loss: Some(total / steps as f64),
            val_auc: None,
            val_recall_at_1: val_r1(&params)?,
            active_negatives: None,
        });
    }
    Ok((params, log))
}

/// Loss of a fixed set of VTE batches under `params` (no update).
pub fn vte_batch_loss(
    items: &[ItemRecord],
    references: &[usize],
    params: &ModelParameters,
    hyper: Hyper<'_>,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for &r in references {
        let batch = vte_batch_at(items, r, SeedStream::new(seed).derive(&r.to_string()))?;
        let mut g = Graph::new();
        let b = params.bind(&mut g, |_| false)?;
        let h = g.constant(Tensor::vector(base_features(&items[r].features, params, hyper.model)?))?;
        let xi = project_graph(&mut g, &b, JointSide::Visual, h)?;
        let mut texts = Vec::new();
        for m in batch.members() {
            let t = text_encode_graph(&mut g, &b, hyper.model, &items[m].tokens)?;
            texts.push(project_graph(&mut g, &b, JointSide::Text, t)?);
        }
        let l = hinge_rank_loss_graph(&mut g, xi, texts[0], &texts[1..], hyper.loss.m_rank)?;
        total += g.value(l).item();
    }
    Ok(total / references.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginResult {
    pub margin: f64,
    pub val_auc: f64,
    /// Share of negative pairs inside the margin during the final epoch.
    pub active_negatives: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginSweep {
    pub best: f64,
    pub results: Vec<MarginResult>,
}

impl MarginSweep {
    /// One row per candidate: `margin\tval_auc`.
    pub fn to_table(&self) -> String {
        let mut s = String::from("margin\tval_auc\tactive_negatives\n");
        for r in &self.results {
            let act = r.active_negatives.map_or_else(|| "-".into(), |v| v.to_string());
            let _ = writeln!(s, "{}\t{}\t{}", r.margin, r.val_auc, act);
        }
        s
    }
}

/// Share of `pairs`' negatives with distance below `margin` under `params`,
/// i.e. whose contrastive hinge is active. `None` without negatives.
pub fn active_negative_fraction(
    items: &[ItemRecord],
    pairs: &[PairSample],
    params: &ModelParameters,
    config: &ModelConfig,
    variant: Variant,
    margin: f64,
) -> Result<Option<f64>> {
    let negatives: Vec<PairSample> = pairs.iter().filter(|p| !p.compatible).cloned().collect();
    if negatives.is_empty() {
        return Ok(None);
    }
    let emb = embed_items(items, params, config, variant)?;
    let (d, _) = pair_distances(&negatives, &emb, &crate::evaluation::id_index(items))?;
    Ok(Some(d.iter().filter(|&&x| x < margin).count() as f64 / d.len() as f64))
}

/// Train one model per margin (in parallel), keep the best validation AUC;
/// ties go to the smaller margin.
pub fn cross_validate_margin(
    variant: Variant,
    data: SiameseData<'_>,
    candidates: &[f64],
    hyper: Hyper<'_>,
) -> Result<(MarginSweep, Vec<ModelParameters>)> {
    if candidates.is_empty() {
        return Err(Error::Config("no margin candidates".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Input("margin cross-validation needs validation pairs".into()));
    }
    let runs: Vec<Result<(ModelParameters, TrainingLog)>> = std::thread::scope(|s| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|&m| {
                s.spawn(move || {
                    let loss = LossConfig { m_contrastive: m, ..*hyper.loss };
                    train_siamese(variant, data, Hyper { loss: &loss, ..hyper })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("margin worker panicked")).collect()
    });
    let mut results = Vec::with_capacity(candidates.len());
    let mut models = Vec::with_capacity(candidates.len());
    for (&m, run) in candidates.iter().zip(runs) {
        let (params, log) = run?;
        let auc =
            log.last_val_auc().ok_or_else(|| Error::Metric("validation pairs lack one class".into()))?;
        let active = log.entries.last().and_then(|e| e.active_negatives);
        results.push(MarginResult { margin: m, val_auc: auc, active_negatives: active });
        models.push(params);
    }
    let best = results
        .iter()
        .fold(None::<&MarginResult>, |acc, r| match acc {
            Some(b) if b.val_auc > r.val_auc || (b.val_auc == r.val_auc && b.margin <= r.margin) => Some(b),
            _ => Some(r),
        })
        .map(|r| r.margin)
        .expect("non-empty");
    Ok((MarginSweep { best, results }, models))
}

/// Settings for checking every loss's analytic gradients against central
/// differences on a small random model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub model: ModelConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
            samples: 100,
            model: ModelConfig {
                input_dim: 6,
                base_layers: vec![8, 6],
                short_truncate_at: Some(1),
                short_pool: 2,
                embedding_dim: 4,
                num_styles: 3,
                num_types: 2,
                text_vocab_size: 10,
                token_embed_dim: 4,
                lstm_hidden: 5,
                joint_dim: 4,
            },
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.tolerance > 0.0) || self.samples == 0 {
            return Err(Error::Config(
                "gradcheck.epsilon and gradcheck.tolerance must be positive and samples >= 1".into(),
            ));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradCheck {
    pub loss: &'static str,
    pub report: crate::autodiff::GradCheckReport,
}

/// Contrastive, categorical and hinge-rank gradient checks. Each loss sums a
/// compatible and an incompatible term (or several wrong texts) so both hinge
/// branches are exercised.
pub fn loss_gradient_checks(cfg: &GradcheckConfig, seed: u64) -> Result<Vec<LossGradCheck>> {
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    cfg.validate()?;
    let model = &cfg.model;
    let stream = SeedStream::new(seed);
    let params = init_params(model, &mut stream.rng("gradcheck/init"))?;
    let mut rng = stream.rng("gradcheck/inputs");
    let mut feature =
        || -> Vec<f64> { (0..model.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let xs: Vec<Vec<f64>> = (0..3).map(|_| feature()).collect();
    let mut rng = stream.rng("gradcheck/tokens");
    let texts: Vec<Vec<usize>> = (0..4)
        .map(|_| {
            let len = rng.gen_range(2..5);
            (0..len).map(|_| rng.gen_range(0..model.text_vocab_size)).collect()
        })
        .collect();
    let opts = |k: u64| crate::autodiff::GradCheckOptions {
        epsilon: cfg.epsilon,
        tolerance: cfg.tolerance,
        samples: cfg.samples,
        seed: stream.derive(&format!("gradcheck/{k}")),
    };
    // A margin well beyond the initial distance keeps the negative term active.
    let e: Vec<Vec<f64>> =
        xs.iter().map(|x| crate::models::embed(x, &params, model)).collect::<Result<_>>()?;
    let margin = 2.0 * crate::losses::euclidean_distance(&e[0], &e[2])? + 1.0;

    let siamese = |variant: Variant| {
        let xs = xs.clone();
        move |g: &mut Graph, b: &crate::autodiff::Bindings| -> Result<crate::autodiff::Var> {
            let mut out = Vec::new();
            for x in &xs {
                let v = g.constant(Tensor::vector(x.clone()))?;
                out.push(siamese_graph(g, b, model, variant, v)?);
            }
            let pos = contrastive_loss_graph(g, out[0].0, out[1].0, true, margin)?;
            let neg = contrastive_loss_graph(g, out[0].0, out[2].0, false, margin)?;
            let mut l = g.add(pos, neg)?;
            if variant == Variant::Categorical {
                for (k, (_, p)) in out.iter().enumerate() {
                    let p =
                        p.ok_or_else(|| Error::Contract("categorical graph without probabilities".into()))?;
                    let c = cross_entropy_graph(g, p, k % model.num_styles)?;
                    l = g.add(l, c)?;
                }
            }
            Ok(l)
        }
    };

    let mut out = Vec::new();
    for (k, (name, variant)) in
        [("contrastive", Variant::Canonical), ("categorical", Variant::Categorical)].into_iter().enumerate()
    {
        let names = variant.siamese_params(model);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let report =
            crate::autodiff::finite_difference_check(siamese(variant), &params, &refs, opts(k as u64))?;
        out.push(LossGradCheck { loss: name, report });
    }

    let image = xs[0].clone();
    let hinge = |g: &mut Graph, b: &crate::autodiff::Bindings| -> Result<crate::autodiff::Var> {
        let x = g.constant(Tensor::vector(image.clone()))?;
        let h = crate::models::base_graph(g, b, x, model.base_layers.len())?;
        let xi = project_graph(g, b, JointSide::Visual, h)?;
        let mut t = Vec::new();
        for toks in &texts {
            let enc = text_encode_graph(g, b, model, toks)?;
            t.push(project_graph(g, b, JointSide::Text, enc)?);
        }
        // A margin above every initial score gap keeps all terms active.
        hinge_rank_loss_graph(g, xi, t[0], &t[1..], 10.0)
    };
    let names = vte_param_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = crate::autodiff::finite_difference_check(hinge, &params, &refs, opts(2))?;
    out.push(LossGradCheck { loss: "hinge_rank", report });
    Ok(out)
}
