//! Exact nearest-neighbour search over item embeddings, and text-constrained
//! queries in the joint visual-text space.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::dot_slice;
use crate::dataset::ItemRecord;
use crate::error::{Error, Result};
use crate::losses::euclidean_distance;
use crate::models::{joint_text, joint_visual, ModelConfig, ModelParameters};
use crate::rng::SeedStream;
use crate::sampling::vte_batch_at;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Dot,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Dot => "dot",
        }
    }

    fn score(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            Metric::Euclidean => euclidean_distance(a, b),
            Metric::Dot => crate::losses::dot_similarity(a, b),
        }
    }

    /// Best-first order on scores: ascending distance or descending similarity.
    fn order(self, a: f64, b: f64) -> Ordering {
        match self {
            Metric::Euclidean => a.total_cmp(&b),
            Metric::Dot => b.total_cmp(&a),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "dot" => Ok(Metric::Dot),
            other => Err(Error::Config(format!("unknown metric {other:?} (expected euclidean or dot)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub style: usize,
    pub furniture_type: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    metric: Metric,
    meta: Vec<ItemMeta>,
}

impl EmbeddingIndex {
    pub fn new(
        ids: Vec<String>,
        vectors: Vec<Vec<f64>>,
        metric: Metric,
        meta: Vec<ItemMeta>,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Input("cannot build an empty index".into()));
        }
        if ids.len() != vectors.len() || ids.len() != meta.len() {
            return Err(Error::Shape(format!(
                "index has {} ids, {} vectors and {} metadata rows",
                ids.len(),
                vectors.len(),
                meta.len()
            )));
        }
        let dim = vectors[0].len();
        for (id, v) in ids.iter().zip(&vectors) {
            if v.len() != dim {
                return Err(Error::Shape(format!("vector for {id} has dim {}, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerics(format!("vector for {id} is not finite")));
            }
        }
        Ok(EmbeddingIndex { ids, vectors, metric, meta })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn meta(&self) -> &[ItemMeta] {
        &self.meta
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|k| self.vectors[k].as_slice())
    }
}

/// Embed every item once.
pub fn build_index<F>(items: &[ItemRecord], embedder: F, metric: Metric) -> Result<EmbeddingIndex>
where
    F: Fn(&ItemRecord) -> Result<Vec<f64>>,
{
    let vectors = items.iter().map(&embedder).collect::<Result<Vec<_>>>()?;
    EmbeddingIndex::new(
        items.iter().map(|i| i.id.clone()).collect(),
        vectors,
        metric,
        items.iter().map(|i| ItemMeta { style: i.style, furniture_type: i.furniture_type }).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    /// Distance for the euclidean metric, similarity for dot.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

impl QueryResult {
    /// `rank\tid\tscore` lines, rank starting at 1.
    pub fn to_text(&self) -> String {
        let mut s = String::from("rank\tid\tscore\n");
        for (r, h) in self.hits.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}", r + 1, h.id, h.score);
        }
        s
    }

    pub fn ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }
}

fn ranked(index: &EmbeddingIndex, q: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Result<QueryResult> {
    if k == 0 {
        return Err(Error::Input("k must be >= 1".into()));
    }
    if q.len() != index.dim() {
        return Err(Error::Shape(format!("query has dim {}, index has dim {}", q.len(), index.dim())));
    }
    let mut scored = Vec::with_capacity(index.len());
    for (n, v) in index.vectors.iter().enumerate() {
        if keep(n) {
            scored.push((index.metric.score(q, v)?, n));
        }
    }
    scored.sort_by(|a, b| index.metric.order(a.0, b.0).then_with(|| index.ids[a.1].cmp(&index.ids[b.1])));
    let truncated = scored.len() < k;
    scored.truncate(k);
    Ok(QueryResult {
        hits: scored.into_iter().map(|(score, n)| Hit { id: index.ids[n].clone(), score }).collect(),
        truncated,
    })
}

/// The `k` best items for `query` under the index metric. With
/// `exclude_type`, items of that furniture type are skipped.
pub fn query_compatible(
    index: &EmbeddingIndex,
    query: &[f64],
    k: usize,
    exclude_type: Option<usize>,
) -> Result<QueryResult> {
    ranked(index, query, k, |n| Some(index.meta[n].furniture_type) != exclude_type)
}

/// Rank joint-space items by dot similarity to `x_image + x_text`.
pub fn query_with_text(
    index: &EmbeddingIndex,
    x_image: &[f64],
    x_text: &[f64],
    k: usize,
) -> Result<QueryResult> {
    if index.metric != Metric::Dot {
        return Err(Error::Contract("text queries need a dot-metric joint index".into()));
    }
    if x_image.len() != x_text.len() {
        return Err(Error::Shape(format!(
            "image vector has dim {}, text vector has dim {}",
            x_image.len(),
            x_text.len()
        )));
    }
    let sum: Vec<f64> = x_image.iter().zip(x_text).map(|(a, b)| a + b).collect();
    ranked(index, &sum, k, |_| true)
}

/// Fraction of items whose own text ranks within the top `k` of its VTE batch
/// (itself plus 16 items of other styles) by dot similarity with its image.
/// Items without tokens are skipped.
pub fn text_match_recall(
    items: &[ItemRecord],
    params: &ModelParameters,
    config: &ModelConfig,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let items: Vec<ItemRecord> = items.iter().filter(|i| !i.tokens.is_empty()).cloned().collect();
    if items.is_empty() {
        return Err(Error::Input("no items with text tokens".into()));
    }
    let xi: Vec<Vec<f64>> =
        items.iter().map(|i| joint_visual(&i.features, params, config)).collect::<Result<_>>()?;
    let xt: Vec<Vec<f64>> =
        items.iter().map(|i| joint_text(&i.tokens, params, config)).collect::<Result<_>>()?;
    let stream = SeedStream::new(seed);
    let mut hits = 0usize;
    for r in 0..items.len() {
        let batch = vte_batch_at(&items, r, stream.derive(&r.to_string()))?;
        let own = dot_slice(&xi[r], &xt[r]);
        // Rank of the matching text; ties count against it.
        let better = batch.negatives.iter().filter(|&&n| dot_slice(&xi[r], &xt[n]) >= own).count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}
