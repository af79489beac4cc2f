//! Strategic pair sampling and visual-text batches.
//!
//! Positive pairs share a style but never a furniture type, so the embedding
//! has to encode style rather than object category. Negative pairs differ in
//! style and are drawn uniformly over all negative pairs, which covers both
//! same-type and cross-type combinations.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::{ItemRecord, Split};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Wrong items per visual-text batch.
pub const VTE_NEGATIVES: usize = 16;

/// An unordered item pair with its compatibility label; `i < j` by id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairSample {
    pub i: String,
    pub j: String,
    pub compatible: bool,
}

impl PairSample {
    pub fn new(a: &str, b: &str, compatible: bool) -> Self {
        let (i, j) = if a <= b { (a, b) } else { (b, a) };
        PairSample { i: i.to_string(), j: j.to_string(), compatible }
    }
}

/// Check the pair invariants against the two items' labels.
pub fn pair_is_valid(a: &ItemRecord, b: &ItemRecord, compatible: bool) -> bool {
    if a.id == b.id {
        return false;
    }
    if compatible {
        a.style == b.style && a.furniture_type != b.furniture_type
    } else {
        a.style != b.style
    }
}

struct Census {
    positives: u64,
    negatives: u64,
}

fn census(items: &[ItemRecord]) -> Result<Census> {
    let mut cells: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
    for it in items {
        *cells.entry(it.style).or_default().entry(it.furniture_type).or_default() += 1;
    }
    if cells.len() < 2 {
        return Err(Error::Sampling(format!(
            "need at least 2 styles to form negative pairs, found {}",
            cells.len()
        )));
    }
    let mut positives = 0;
    let mut same_style = 0;
    for (style, types) in &cells {
        if types.len() < 2 {
            return Err(Error::Sampling(format!(
                "style {style} has a single furniture type; no cross-type positive pairs exist"
            )));
        }
        let n: u64 = types.values().sum();
        let sq: u64 = types.values().map(|c| c * c).sum();
        positives += (n * n - sq) / 2;
        same_style += n * n;
    }
    let n = items.len() as u64;
    Ok(Census { positives, negatives: (n * n - same_style) / 2 })
}

fn draw(
    items: &[ItemRecord],
    want: usize,
    available: u64,
    compatible: bool,
    rng: &mut crate::rng::Rng,
) -> Vec<(usize, usize)> {
    let n = items.len();
    let canon = |a: usize, b: usize| {
        if items[a].id <= items[b].id {
            (a, b)
        } else {
            (b, a)
        }
    };
    if (want as u64) * 2 >= available {
        let mut all = Vec::with_capacity(available as usize);
        for a in 0..n {
            for b in a + 1..n {
                if pair_is_valid(&items[a], &items[b], compatible) {
                    all.push(canon(a, b));
                }
            }
        }
        all.shuffle(rng);
        all.truncate(want);
        return all;
    }
    let mut seen = HashSet::with_capacity(want * 2);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if !pair_is_valid(&items[a], &items[b], compatible) {
            continue;
        }
        let p = canon(a, b);
        if seen.insert(p) {
            out.push(p);
        }
    }
    out
}

/// `n_positive` positives and `n_positive * neg_ratio` negatives from a
/// single split, without repetition.
pub fn strategic_pairs(
    items: &[ItemRecord],
    n_positive: usize,
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    if let Some(first) = items.first() {
        if let Some(other) = items.iter().find(|i| i.split != first.split) {
            return Err(Error::Input(format!(
                "pairs must come from one split; {} is {} but {} is {}",
                first.id,
                first.split.as_str(),
                other.id,
                other.split.as_str()
            )));
        }
    }
    let c = census(items)?;
    let n_negative = n_positive
        .checked_mul(neg_ratio)
        .ok_or_else(|| Error::Sampling("negative count overflows".into()))?;
    if n_positive as u64 > c.positives {
        return Err(Error::Sampling(format!(
            "requested {n_positive} positive pairs but only {} distinct ones exist",
            c.positives
        )));
    }
    if n_negative as u64 > c.negatives {
        return Err(Error::Sampling(format!(
            "requested {n_negative} negative pairs but only {} distinct ones exist",
            c.negatives
        )));
    }
    let stream = SeedStream::new(seed);
    let pos = draw(items, n_positive, c.positives, true, &mut stream.rng("sampling/positive"));
    let neg = draw(items, n_negative, c.negatives, false, &mut stream.rng("sampling/negative"));
    let mk = |(a, b): (usize, usize), y| PairSample {
        i: items[a].id.clone(),
        j: items[b].id.clone(),
        compatible: y,
    };
    Ok(pos.into_iter().map(|p| mk(p, true)).chain(neg.into_iter().map(|p| mk(p, false))).collect())
}

/// Pair counts per split; `neg_ratio` negatives per positive everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairCounts {
    pub train_positive: usize,
    pub val_positive: usize,
    pub test_positive: usize,
    pub neg_ratio: usize,
}

impl Default for PairCounts {
    fn default() -> Self {
        PairCounts { train_positive: 200, val_positive: 60, test_positive: 60, neg_ratio: 16 }
    }
}

impl PairCounts {
    pub fn positives(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_positive,
            Split::Val => self.val_positive,
            Split::Test => self.test_positive,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairsBySplit {
    pub train: Vec<PairSample>,
    pub val: Vec<PairSample>,
    pub test: Vec<PairSample>,
}

impl PairsBySplit {
    pub fn get(&self, split: Split) -> &[PairSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Run [`strategic_pairs`] inside each split; a zero count leaves that split empty.
pub fn pairs_by_split(items: &[ItemRecord], counts: &PairCounts, seed: u64) -> Result<PairsBySplit> {
    let stream = SeedStream::new(seed);
    let mut out = PairsBySplit::default();
    for split in Split::ALL {
        let n = counts.positives(split);
        if n == 0 {
            continue;
        }
        let subset: Vec<ItemRecord> = items.iter().filter(|i| i.split == split).cloned().collect();
        let pairs = strategic_pairs(&subset, n, counts.neg_ratio, stream.derive(split.as_str())).map_err(
            |e| match e {
                Error::Sampling(m) => Error::Sampling(format!("{} split: {m}", split.as_str())),
                other => other,
            },
        )?;
        match split {
            Split::Train => out.train = pairs,
            Split::Val => out.val = pairs,
            Split::Test => out.test = pairs,
        }
    }
    Ok(out)
}

/// A reference item and [`VTE_NEGATIVES`] distinct items of other styles,
/// as indices into the item slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VteBatch {
    pub reference: usize,
    pub negatives: Vec<usize>,
}

impl VteBatch {
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.reference).chain(self.negatives.iter().copied())
    }

    pub fn len(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn vte_batch(items: &[ItemRecord], reference_id: &str, seed: u64) -> Result<VteBatch> {
    let reference = items
        .iter()
        .position(|i| i.id == reference_id)
        .ok_or_else(|| Error::Input(format!("unknown reference id {reference_id:?}")))?;
    vte_batch_at(items, reference, seed)
}

pub fn vte_batch_at(items: &[ItemRecord], reference: usize, seed: u64) -> Result<VteBatch> {
    let style = items[reference].style;
    let pool: Vec<usize> = (0..items.len()).filter(|&k| items[k].style != style).collect();
    if pool.len() < VTE_NEGATIVES {
        return Err(Error::Sampling(format!(
            "reference {} has only {} items of other styles, need {VTE_NEGATIVES}",
            items[reference].id,
            pool.len()
        )));
    }
    let mut rng = SeedStream::new(seed).rng("sampling/vte");
    let picks = rand::seq::index::sample(&mut rng, pool.len(), VTE_NEGATIVES);
    Ok(VteBatch { reference, negatives: picks.into_iter().map(|k| pool[k]).collect() })
}

/// Distinct (style, type) cells present, for diagnostics.
pub fn cells(items: &[ItemRecord]) -> BTreeSet<(usize, usize)> {
    items.iter().map(|i| (i.style, i.furniture_type)).collect()
}
