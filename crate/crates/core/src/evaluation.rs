//! Compatibility scores and the metrics reported on them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::Serialize;

use crate::dataset::ItemRecord;
use crate::error::{Error, Result};
use crate::losses::euclidean_distance;
use crate::models::{embed_variant, ModelConfig, ModelParameters, Variant};
use crate::sampling::PairSample;

/// Bandwidth floor for degenerate (constant) samples.
pub const KDE_MIN_BANDWIDTH: f64 = 1e-6;

/// Map a distance to a score in (0, 1]; 1 means fully compatible.
pub fn compatibility_score(distance: f64) -> Result<f64> {
    if distance.is_nan() || distance < 0.0 {
        return Err(Error::Contract(format!("distance must be >= 0, got {distance}")));
    }
    Ok(1.0 / (1.0 + distance))
}

/// Area under the ROC curve as the Mann-Whitney statistic, with ties counted ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative examples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled average ranks keep everything integral.
    let mut pos_rank2: u64 = 0;
    let mut k = 0;
    while k < order.len() {
        let mut e = k + 1;
        while e < order.len() && scores[order[e]] == scores[order[k]] {
            e += 1;
        }
        let rank2 = (k + 1 + e) as u64; // 2 × mean of ranks k+1..=e
        let pos_in_tie = order[k..e].iter().filter(|&&i| labels[i]).count() as u64;
        pos_rank2 += rank2 * pos_in_tie;
        k = e;
    }
    let u2 = pos_rank2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PerStyleAuc {
    pub auc: BTreeMap<usize, f64>,
    /// Styles lacking positives or negatives.
    pub omitted: Vec<usize>,
}

/// AUC within each style. Positive pairs count toward their shared style;
/// a negative pair counts toward the style of each endpoint.
pub fn per_style_auc(
    pairs: &[PairSample],
    scores: &[f64],
    pair_styles: &[(usize, usize)],
) -> Result<PerStyleAuc> {
    if pairs.len() != scores.len() || pairs.len() != pair_styles.len() {
        return Err(Error::Metric("pairs, scores and styles differ in length".into()));
    }
    let mut pools: BTreeMap<usize, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for ((p, &s), &(a, b)) in pairs.iter().zip(scores).zip(pair_styles) {
        let mut push = |style: usize| {
            let e = pools.entry(style).or_default();
            e.0.push(s);
            e.1.push(p.compatible);
        };
        push(a);
        if !p.compatible && b != a {
            push(b);
        }
    }
    let mut out = PerStyleAuc::default();
    for (style, (sc, lb)) in pools {
        match roc_auc(&sc, &lb) {
            Ok(v) => {
                out.auc.insert(style, v);
            }
            Err(_) => {
                log::warn!("style {style}: pair pool lacks one class, omitted from per-style AUC");
                out.omitted.push(style);
            }
        }
    }
    Ok(out)
}

/// Fraction of queries whose top `k` results contain a relevant id.
pub fn recall_at_k<T: Eq + Hash>(ranked: &[Vec<T>], relevant: &[HashSet<T>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Metric("recall@K needs K >= 1".into()));
    }
    if ranked.is_empty() {
        return Err(Error::Metric("recall@K over an empty query set".into()));
    }
    if ranked.len() != relevant.len() {
        return Err(Error::Metric("ranked lists and relevant sets differ in count".into()));
    }
    let hits =
        ranked.iter().zip(relevant).filter(|(r, rel)| r.iter().take(k).any(|id| rel.contains(id))).count();
    Ok(hits as f64 / ranked.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary { count: 0, mean: 0.0, std: 0.0 };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Summary { count: n, mean, std: var.sqrt() }
}

/// Silverman's rule of thumb, floored at [`KDE_MIN_BANDWIDTH`].
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return KDE_MIN_BANDWIDTH;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * (n as f64).powf(-0.2)).max(KDE_MIN_BANDWIDTH)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeCurves {
    pub grid: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub bandwidth_pos: f64,
    pub bandwidth_neg: f64,
}

fn gaussian_kde(xs: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| xs.iter().map(|&x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// Gaussian KDE of both distance samples on one shared uniform grid reaching
/// four bandwidths past the data on each side.
pub fn distance_kde(pos: &[f64], neg: &[f64], bandwidth: Option<f64>) -> Result<KdeCurves> {
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::Metric("KDE needs at least 2 samples per class".into()));
    }
    if pos.iter().chain(neg).any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite distance".into()));
    }
    let (hp, hn) = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => (h, h),
        Some(h) => return Err(Error::Metric(format!("bandwidth must be positive, got {h}"))),
        None => (silverman_bandwidth(pos), silverman_bandwidth(neg)),
    };
    let hmax = hp.max(hn);
    let lo = pos.iter().chain(neg).copied().fold(f64::INFINITY, f64::min) - 4.0 * hmax;
    let hi = pos.iter().chain(neg).copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * hmax;
    // at least four grid steps per narrowest bandwidth
    let points = (((hi - lo) / (hp.min(hn) / 4.0)).ceil() as usize).clamp(512, 20_000);
    let step = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|k| lo + step * k as f64).collect();
    Ok(KdeCurves {
        pos: gaussian_kde(pos, hp, &grid),
        neg: gaussian_kde(neg, hn, &grid),
        grid,
        bandwidth_pos: hp,
        bandwidth_neg: hn,
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xw, yw)| (xw[1] - xw[0]) * (yw[0] + yw[1]) / 2.0).sum()
}

/// Overlap coefficient ∫ min(p, q) of two curves on the same grid.
pub fn curve_overlap(c: &KdeCurves) -> f64 {
    let m: Vec<f64> = c.pos.iter().zip(&c.neg).map(|(a, b)| a.min(*b)).collect();
    trapezoid(&c.grid, &m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub variant: String,
    pub num_pairs: usize,
    pub auc_overall: f64,
    pub auc_per_style: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub pos_distance: Summary,
    pub neg_distance: Summary,
    #[serde(skip)]
    pub kde: Option<KdeCurves>,
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Evaluation report ({})", self.variant);
        let _ = writeln!(s, "  pairs evaluated      {}", self.num_pairs);
        let _ = writeln!(s, "  AUC (overall)        {:.4}", self.auc_overall);
        for (k, v) in &self.recall_at {
            let _ = writeln!(s, "  recall@{k:<13} {v:.4}");
        }
        let _ = writeln!(
            s,
            "  positive distances   mean {:.4}  std {:.4}  n {}",
            self.pos_distance.mean, self.pos_distance.std, self.pos_distance.count
        );
        let _ = writeln!(
            s,
            "  negative distances   mean {:.4}  std {:.4}  n {}",
            self.neg_distance.mean, self.neg_distance.std, self.neg_distance.count
        );
        let _ = writeln!(s, "  AUC per style:");
        for (style, v) in &self.auc_per_style {
            let _ = writeln!(s, "    style {style:<4} {v:.4}");
        }
        s
    }

    /// `key=value` lines with full-precision numbers.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant);
        let _ = writeln!(s, "num_pairs={}", self.num_pairs);
        let _ = writeln!(s, "auc_overall={}", self.auc_overall);
        for (k, v) in &self.recall_at {
            let _ = writeln!(s, "recall_at_{k}={v}");
        }
        for (name, sm) in [("pos", &self.pos_distance), ("neg", &self.neg_distance)] {
            let _ = writeln!(s, "{name}_distance_count={}", sm.count);
            let _ = writeln!(s, "{name}_distance_mean={}", sm.mean);
            let _ = writeln!(s, "{name}_distance_std={}", sm.std);
        }
        for (style, v) in &self.auc_per_style {
            let _ = writeln!(s, "auc_style_{style}={v}");
        }
        s
    }

    /// Two-column `(x, density)` tables for the positive and negative curves.
    pub fn kde_tables(&self) -> Option<(String, String)> {
        let kde = self.kde.as_ref()?;
        let table = |ys: &[f64]| {
            let mut s = String::from("x\tdensity\n");
            for (x, y) in kde.grid.iter().zip(ys) {
                let _ = writeln!(s, "{x}\t{y}");
            }
            s
        };
        Some((table(&kde.pos), table(&kde.neg)))
    }
}

/// Embeddings keyed by item index; computed once per item.
pub fn embed_items(
    items: &[ItemRecord],
    params: &ModelParameters,
    config: &ModelConfig,
    variant: Variant,
) -> Result<Vec<Vec<f64>>> {
    items.iter().map(|it| embed_variant(&it.features, params, config, variant)).collect()
}

pub fn id_index(items: &[ItemRecord]) -> HashMap<&str, usize> {
    items.iter().enumerate().map(|(k, i)| (i.id.as_str(), k)).collect()
}

/// Distances and labels of `pairs` under precomputed embeddings.
pub fn pair_distances(
    pairs: &[PairSample],
    embeddings: &[Vec<f64>],
    index: &HashMap<&str, usize>,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let lookup = |id: &str| {
        index.get(id).copied().ok_or_else(|| Error::Input(format!("pair references unknown item {id:?}")))
    };
    let mut d = Vec::with_capacity(pairs.len());
    let mut y = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (a, b) = (lookup(&p.i)?, lookup(&p.j)?);
        d.push(euclidean_distance(&embeddings[a], &embeddings[b])?);
        y.push(p.compatible);
    }
    Ok((d, y))
}

pub fn auc_from_distances(distances: &[f64], labels: &[bool]) -> Result<f64> {
    let scores = distances.iter().map(|&d| compatibility_score(d)).collect::<Result<Vec<_>>>()?;
    roc_auc(&scores, labels)
}

/// Validation AUC of `pairs` under the model.
pub fn pair_auc(
    items: &[ItemRecord],
    pairs: &[PairSample],
    params: &ModelParameters,
    config: &ModelConfig,
    variant: Variant,
) -> Result<f64> {
    let emb = embed_items(items, params, config, variant)?;
    let (d, y) = pair_distances(pairs, &emb, &id_index(items))?;
    auc_from_distances(&d, &y)
}

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Full report: overall and per-style AUC over `pairs`, distance summaries and
/// KDE curves, and cross-type retrieval recall@K over `query_items` (each
/// query ranks the other items of a different furniture type; items of the
/// query's style are relevant).
pub fn evaluate_model(
    items: &[ItemRecord],
    pairs: &[PairSample],
    query_items: &[ItemRecord],
    params: &ModelParameters,
    config: &ModelConfig,
    variant: Variant,
) -> Result<EvaluationReport> {
    let emb = embed_items(items, params, config, variant)?;
    let index = id_index(items);
    let (d, y) = pair_distances(pairs, &emb, &index)?;
    let scores = d.iter().map(|&x| compatibility_score(x)).collect::<Result<Vec<_>>>()?;
    let auc_overall = roc_auc(&scores, &y)?;
    let styles: Vec<(usize, usize)> =
        pairs.iter().map(|p| (items[index[p.i.as_str()]].style, items[index[p.j.as_str()]].style)).collect();
    let per_style = per_style_auc(pairs, &scores, &styles)?;

    let pos: Vec<f64> = d.iter().zip(&y).filter(|(_, &l)| l).map(|(v, _)| *v).collect();
    let neg: Vec<f64> = d.iter().zip(&y).filter(|(_, &l)| !l).map(|(v, _)| *v).collect();
    let kde = if pos.len() >= 2 && neg.len() >= 2 { Some(distance_kde(&pos, &neg, None)?) } else { None };

    let q_emb = embed_items(query_items, params, config, variant)?;
    let mut ranked = Vec::new();
    let mut relevant = Vec::new();
    for (qi, q) in query_items.iter().enumerate() {
        let mut cands: Vec<(f64, &str)> = query_items
            .iter()
            .enumerate()
            .filter(|(_, c)| c.furniture_type != q.furniture_type)
            .map(|(ci, c)| Ok((euclidean_distance(&q_emb[qi], &q_emb[ci])?, c.id.as_str())))
            .collect::<Result<_>>()?;
        let rel: HashSet<String> = query_items
            .iter()
            .filter(|c| c.furniture_type != q.furniture_type && c.style == q.style)
            .map(|c| c.id.clone())
            .collect();
        if cands.is_empty() || rel.is_empty() {
            continue;
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        ranked.push(cands.into_iter().map(|(_, id)| id.to_string()).collect::<Vec<_>>());
        relevant.push(rel);
    }
    let mut recall_at = BTreeMap::new();
    if !ranked.is_empty() {
        for k in RECALL_KS {
            recall_at.insert(k, recall_at_k(&ranked, &relevant, k)?);
        }
    }

    Ok(EvaluationReport {
        variant: variant.name().to_string(),
        num_pairs: pairs.len(),
        auc_overall,
        auc_per_style: per_style.auc,
        recall_at,
        pos_distance: summarize(&pos),
        neg_distance: summarize(&neg),
        kde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use proptest::prelude::*;
    use rand::Rng;

    /// O(n_pos · n_neg) Mann-Whitney count.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice_wins, mut np, mut nn) = (0u64, 0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li {
                np += 1;
            } else {
                nn += 1;
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                if scores[i] > scores[j] {
                    twice_wins += 2;
                } else if scores[i] == scores[j] {
                    twice_wins += 1;
                }
            }
        }
        twice_wins as f64 / (2 * np * nn) as f64
    }

    #[test]
    fn score_map_examples() {
        assert_eq!(compatibility_score(0.0).unwrap(), 1.0);
        assert_eq!(compatibility_score(1.0).unwrap(), 0.5);
        assert!(compatibility_score(0.3).unwrap() > compatibility_score(0.31).unwrap());
        assert!(matches!(compatibility_score(-1e-9), Err(Error::Contract(_))));
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.4, 0.7, 0.3];
        let l = [true, true, true, false, false];
        assert_eq!(roc_auc(&s, &l).unwrap(), 5.0 / 6.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::Metric(_))));

        let mut r = SeedStream::new(1).rng("auc");
        let n = 20_000;
        let s: Vec<f64> = (0..n).map(|_| r.gen()).collect();
        let l: Vec<bool> = (0..n).map(|_| r.gen()).collect();
        assert!((roc_auc(&s, &l).unwrap() - 0.5).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn rank_auc_equals_brute_force(
            raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn auc_is_monotone_invariant_and_flips(
            raw in proptest::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = roc_auc(&scores, &labels).unwrap();
            let f: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(a, roc_auc(&f, &labels).unwrap());
            let mut uniq = scores.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            if uniq.len() == scores.len() {
                let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
                prop_assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn per_style_matches_filter_oracle() {
        let mut r = SeedStream::new(5).rng("ps");
        let mut pairs = Vec::new();
        let mut styles = Vec::new();
        let mut scores = Vec::new();
        for k in 0..400 {
            let a = r.gen_range(0..4);
            let compatible = r.gen_bool(0.3);
            let b = if compatible { a } else { (a + r.gen_range(1..4)) % 4 };
            pairs.push(PairSample::new(&format!("p{k}a"), &format!("p{k}b"), compatible));
            styles.push((a, b));
            scores.push(r.gen::<f64>() + if compatible { 0.2 } else { 0.0 });
        }
        let got = per_style_auc(&pairs, &scores, &styles).unwrap();
        for style in 0..4 {
            let (mut s, mut l) = (Vec::new(), Vec::new());
            for k in 0..pairs.len() {
                let (a, b) = styles[k];
                if a == style || (!pairs[k].compatible && b == style) {
                    s.push(scores[k]);
                    l.push(pairs[k].compatible);
                }
            }
            assert_eq!(got.auc[&style], roc_auc(&s, &l).unwrap());
        }
        assert!(got.omitted.is_empty());
    }

    #[test]
    fn per_style_omits_degenerate_pools() {
        let pairs = vec![
            PairSample::new("a", "b", true),
            PairSample::new("c", "d", true),
            PairSample::new("e", "f", false),
        ];
        let r = per_style_auc(&pairs, &[0.9, 0.8, 0.1], &[(0, 0), (1, 1), (0, 2)]).unwrap();
        assert_eq!(r.auc.keys().copied().collect::<Vec<_>>(), vec![0]);
        assert_eq!(r.omitted, vec![1, 2]);
    }

    #[test]
    fn recall_examples() {
        let rel = |x: &str| [x.to_string()].into_iter().collect::<HashSet<_>>();
        let always_first = vec![vec!["a".to_string(), "b".into()]; 3];
        let rels = vec![rel("a"), rel("a"), rel("a")];
        assert_eq!(recall_at_k(&always_first, &rels, 1).unwrap(), 1.0);
        assert_eq!(recall_at_k(&always_first, &vec![rel("z"); 3], 2).unwrap(), 0.0);

        // Hits at ranks 1, 7 and 3 with K = 5.
        let ids: Vec<String> = (0..10).map(|k| format!("i{k}")).collect();
        let ranked = vec![ids.clone(); 3];
        let rels = vec![rel("i0"), rel("i6"), rel("i2")];
        assert_eq!(recall_at_k(&ranked, &rels, 5).unwrap(), 2.0 / 3.0);
        assert!(recall_at_k::<String>(&[], &[], 1).is_err());
        assert!(recall_at_k(&ranked, &rels, 0).is_err());
    }

    #[test]
    fn kde_normalization_and_symmetry() {
        let mut r = SeedStream::new(8).rng("kde");
        let pos: Vec<f64> = (0..300).map(|_| r.gen_range(0.0..1.0)).collect();
        let neg: Vec<f64> = (0..500).map(|_| 2.0 + r.gen_range(0.0..2.0)).collect();
        let c = distance_kde(&pos, &neg, None).unwrap();
        assert!((trapezoid(&c.grid, &c.pos) - 1.0).abs() < 0.01);
        assert!((trapezoid(&c.grid, &c.neg) - 1.0).abs() < 0.01);
        assert!(curve_overlap(&c) < 0.05, "{}", curve_overlap(&c));

        let same = distance_kde(&pos, &pos, None).unwrap();
        assert_eq!(same.pos, same.neg);

        let flat = distance_kde(&[1.0, 1.0, 1.0], &[1.0, 1.0], None).unwrap();
        assert_eq!(flat.bandwidth_pos, KDE_MIN_BANDWIDTH);
        assert!((trapezoid(&flat.grid, &flat.pos) - 1.0).abs() < 0.01);
        assert!(distance_kde(&[1.0], &[1.0, 2.0], None).is_err());
        assert!(distance_kde(&[1.0, 2.0], &[1.0, 2.0], Some(0.0)).is_err());
    }
}
