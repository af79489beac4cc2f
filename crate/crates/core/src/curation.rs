//! Dataset cleaning: perceptual-hash duplicate removal, outlier filtering by
//! type-classifier confidence, and stratified train/val/test splitting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::dataset::{ItemRecord, Split};
use crate::error::{Error, Result};
use crate::losses::cross_entropy_graph;
use crate::rng::SeedStream;

pub const PHASH_SIZE: usize = 32;
const PHASH_BLOCK: usize = 8;

/// 2-D intensity grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::Input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn scaled(&self, factor: f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PHash(pub u64);

impl fmt::Display for PHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

pub fn hamming(a: PHash, b: PHash) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Box-filter downsample to `PHASH_SIZE` × `PHASH_SIZE`.
fn mean_pool(img: &Image) -> Vec<f64> {
    let n = PHASH_SIZE;
    let mut out = vec![0.0; n * n];
    for v in 0..n {
        let (y0, y1) = (v * img.height / n, (v + 1) * img.height / n);
        for u in 0..n {
            let (x0, x1) = (u * img.width / n, (u + 1) * img.width / n);
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += img.at(x, y);
                }
            }
            out[v * n + u] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Orthonormal DCT-II basis rows `0..PHASH_BLOCK` for length `PHASH_SIZE`.
fn dct_basis() -> Vec<f64> {
    let n = PHASH_SIZE;
    let mut b = vec![0.0; PHASH_BLOCK * n];
    for k in 0..PHASH_BLOCK {
        let alpha = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for x in 0..n {
            b[k * n + x] =
                alpha * (std::f64::consts::PI * (2 * x + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    b
}

/// Top-left 8×8 block of the 2-D DCT-II of the downsampled image, row-major
/// by (vertical frequency, horizontal frequency).
pub fn low_frequency_dct(img: &Image) -> Result<Vec<f64>> {
    if img.pixels.is_empty() {
        return Err(Error::Input("empty image".into()));
    }
    if img.width < PHASH_SIZE || img.height < PHASH_SIZE {
        return Err(Error::Input(format!(
            "image {}x{} is smaller than {PHASH_SIZE}x{PHASH_SIZE}",
            img.width, img.height
        )));
    }
    let n = PHASH_SIZE;
    let small = mean_pool(img);
    let basis = dct_basis();
    // rows first: R[y][u] = Σ_x f[y][x] b[u][x]
    let mut rows = vec![0.0; n * PHASH_BLOCK];
    for y in 0..n {
        for u in 0..PHASH_BLOCK {
            rows[y * PHASH_BLOCK + u] = (0..n).map(|x| small[y * n + x] * basis[u * n + x]).sum();
        }
    }
    let mut coeffs = vec![0.0; PHASH_BLOCK * PHASH_BLOCK];
    for v in 0..PHASH_BLOCK {
        for u in 0..PHASH_BLOCK {
            coeffs[v * PHASH_BLOCK + u] = (0..n).map(|y| rows[y * PHASH_BLOCK + u] * basis[v * n + y]).sum();
        }
    }
    Ok(coeffs)
}

/// 64-bit perceptual hash: bit `k` is set iff DCT coefficient `k` exceeds the
/// median of the 63 non-DC coefficients; the DC bit is always 0.
pub fn phash(img: &Image) -> Result<PHash> {
    let c = low_frequency_dct(img)?;
    let mut ac: Vec<f64> = c[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[ac.len() / 2];
    let mut bits = 0u64;
    for (k, &v) in c.iter().enumerate().skip(1) {
        if v > median {
            bits |= 1 << k;
        }
    }
    Ok(PHash(bits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalCause {
    /// Same style as its kept twin.
    Duplicate,
    /// Duplicate cluster with disagreeing style labels; every member removed.
    ConflictingDuplicate,
    Outlier,
}

impl RemovalCause {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalCause::Duplicate => "duplicate",
            RemovalCause::ConflictingDuplicate => "conflicting-duplicate",
            RemovalCause::Outlier => "outlier",
        }
    }
}

/// One removed item: hamming distance for duplicates, type score for outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct RemovalRecord {
    pub id: String,
    pub cause: RemovalCause,
    pub partner: Option<String>,
    pub value: f64,
}

pub fn removal_log_text(log: &[RemovalRecord]) -> String {
    let mut s = String::from("id\tcause\tpartner\tvalue\n");
    for r in log {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.id,
            r.cause.as_str(),
            r.partner.as_deref().unwrap_or("-"),
            r.value
        ));
    }
    s
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// All index pairs within `threshold`. Below 16 bits of tolerance the hash is
/// cut into `threshold + 1` bands; two hashes within the threshold agree
/// exactly on at least one band, so only band-bucket collisions are verified.
pub fn near_duplicate_pairs(hashes: &[PHash], threshold: u32) -> Vec<(usize, usize, u32)> {
    let n = hashes.len();
    let mut cands: Vec<(usize, usize)> = Vec::new();
    if threshold < 16 {
        let bands = threshold as usize + 1;
        let mut start = 0;
        for b in 0..bands {
            let width = 64 / bands + usize::from(b < 64 % bands);
            let mask = if width == 64 { u64::MAX } else { ((1u64 << width) - 1) << start };
            let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
            for (k, h) in hashes.iter().enumerate() {
                buckets.entry(h.0 & mask).or_default().push(k);
            }
            for members in buckets.values() {
                for (x, &a) in members.iter().enumerate() {
                    for &c in &members[x + 1..] {
                        cands.push((a.min(c), a.max(c)));
                    }
                }
            }
            start += width;
        }
        cands.sort_unstable();
        cands.dedup();
    } else {
        cands = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    }
    cands
        .into_iter()
        .filter_map(|(a, b)| {
            let d = hamming(hashes[a], hashes[b]);
            (d <= threshold).then_some((a, b, d))
        })
        .collect()
}

/// Remove near-duplicates. A cluster (transitive closure of within-threshold
/// pairs) whose members share a style keeps only its smallest id; a cluster
/// with mixed styles is removed entirely.
pub fn dedup(
    items: &[ItemRecord],
    hashes: &[PHash],
    threshold: u32,
) -> Result<(Vec<ItemRecord>, Vec<RemovalRecord>)> {
    if threshold > 64 {
        return Err(Error::Config(format!("hamming threshold {threshold} exceeds 64")));
    }
    if items.len() != hashes.len() {
        return Err(Error::Input(format!("{} items but {} hashes", items.len(), hashes.len())));
    }
    let pairs = near_duplicate_pairs(hashes, threshold);
    let mut uf = UnionFind((0..items.len()).collect());
    let mut nearest: HashMap<usize, (u32, usize)> = HashMap::new();
    for &(a, b, d) in &pairs {
        uf.union(a, b);
        for (x, y) in [(a, b), (b, a)] {
            let e = nearest.entry(x).or_insert((d, y));
            if (d, &items[y].id) < (e.0, &items[e.1].id) {
                *e = (d, y);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &k in nearest.keys() {
        let root = uf.find(k);
        clusters.entry(root).or_default().push(k);
    }
    let mut removed = vec![false; items.len()];
    let mut log = Vec::new();
    for members in clusters.values_mut() {
        members.sort_by(|&a, &b| items[a].id.cmp(&items[b].id));
        let same_style = members.iter().all(|&m| items[m].style == items[members[0]].style);
        if same_style {
            let keep = members[0];
            for &m in &members[1..] {
                removed[m] = true;
                log.push(RemovalRecord {
                    id: items[m].id.clone(),
                    cause: RemovalCause::Duplicate,
                    partner: Some(items[keep].id.clone()),
                    value: f64::from(hamming(hashes[m], hashes[keep])),
                });
            }
        } else {
            for &m in members.iter() {
                removed[m] = true;
                let (d, partner) = nearest[&m];
                log.push(RemovalRecord {
                    id: items[m].id.clone(),
                    cause: RemovalCause::ConflictingDuplicate,
                    partner: Some(items[partner].id.clone()),
                    value: f64::from(d),
                });
            }
        }
    }
    log.sort_by(|a, b| a.id.cmp(&b.id));
    let kept = items.iter().zip(&removed).filter(|(_, &r)| !r).map(|(i, _)| i.clone()).collect();
    Ok((kept, log))
}

/// Anything that scores furniture-type membership.
pub trait TypeScorer {
    fn type_probs(&self, features: &[f64]) -> Result<Vec<f64>>;
}

/// Multinomial logistic regression over furniture types.
#[derive(Debug, Clone)]
pub struct SoftmaxClassifier {
    params: ParamStore,
    num_types: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        ClassifierTraining { epochs: 30, learning_rate: 0.05, seed: 0 }
    }
}

impl SoftmaxClassifier {
    /// Plain per-item SGD on cross-entropy.
    pub fn train(items: &[ItemRecord], num_types: usize, opts: ClassifierTraining) -> Result<Self> {
        let dim = items
            .first()
            .ok_or_else(|| Error::Input("cannot train a classifier on zero items".into()))?
            .features
            .len();
        let mut params = ParamStore::new();
        params.insert("weight", Tensor::zeros(&[num_types, dim]));
        params.insert("bias", Tensor::zeros(&[num_types]));
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = SeedStream::new(opts.seed).rng("curation/classifier");
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                let it = &items[k];
                if it.furniture_type >= num_types {
                    return Err(Error::Input(format!("item {} has type out of range", it.id)));
                }
                let mut g = Graph::new();
                let b = params.bind(&mut g, |_| true)?;
                let x = g.constant(Tensor::vector(it.features.clone()))?;
                let wx = g.matmul(b.get("weight")?, x)?;
                let z = g.add(wx, b.get("bias")?)?;
                let p = g.softmax(z)?;
                let loss = cross_entropy_graph(&mut g, p, it.furniture_type)?;
                g.backward(loss)?;
                for (name, var) in b.iter() {
                    let grad = g.grad(var).expect("trainable").data().to_vec();
                    let t = params.get_mut(name)?;
                    for (w, gr) in t.data_mut().iter_mut().zip(grad) {
                        *w -= opts.learning_rate * gr;
                    }
                }
            }
        }
        Ok(SoftmaxClassifier { params, num_types })
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }
}

impl TypeScorer for SoftmaxClassifier {
    fn type_probs(&self, features: &[f64]) -> Result<Vec<f64>> {
        let w = self.params.get("weight")?;
        let b = self.params.get("bias")?;
        let dim = w.shape()[1];
        if features.len() != dim {
            return Err(Error::Shape(format!("classifier expects {dim} features, got {}", features.len())));
        }
        let logits: Vec<f64> = w
            .data()
            .chunks(dim)
            .zip(b.data())
            .map(|(row, bias)| row.iter().zip(features).map(|(a, x)| a * x).sum::<f64>() + bias)
            .collect();
        Ok(crate::autodiff::softmax_slice(&logits))
    }
}

/// Drop the `floor(fraction · n)` items whose labeled type receives the lowest
/// probability; ties go to the smaller id first.
pub fn outlier_filter(
    items: &[ItemRecord],
    classifier: &dyn TypeScorer,
    removal_fraction: f64,
) -> Result<(Vec<ItemRecord>, Vec<RemovalRecord>)> {
    check_fraction(removal_fraction)?;
    let scores = items.iter().map(|it| labeled_type_prob(classifier, it)).collect::<Result<Vec<_>>>()?;
    select_outliers(items, &scores, removal_fraction)
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("outlier removal fraction {f} must lie in (0, 1)")));
    }
    Ok(())
}

fn labeled_type_prob(classifier: &dyn TypeScorer, it: &ItemRecord) -> Result<f64> {
    let p = classifier.type_probs(&it.features)?;
    p.get(it.furniture_type)
        .copied()
        .ok_or_else(|| Error::Input(format!("item {} has a type the classifier does not know", it.id)))
}

/// Labeled-type probability of each item under a classifier trained on the
/// other `folds − 1` folds. A classifier that saw an outlier in training
/// tends to have memorized its label; scoring out of fold avoids that.
pub fn out_of_fold_type_scores(
    items: &[ItemRecord],
    num_types: usize,
    folds: usize,
    opts: ClassifierTraining,
) -> Result<Vec<f64>> {
    if folds < 2 || folds > items.len() {
        return Err(Error::Config(format!("need 2 <= folds <= {} items, got {folds} folds", items.len())));
    }
    let stream = SeedStream::new(opts.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut stream.rng("curation/folds"));
    let mut fold_of = vec![0; items.len()];
    for (pos, &k) in order.iter().enumerate() {
        fold_of[k] = pos % folds;
    }
    let mut scores = vec![0.0; items.len()];
    for f in 0..folds {
        let train: Vec<ItemRecord> =
            (0..items.len()).filter(|&k| fold_of[k] != f).map(|k| items[k].clone()).collect();
        let clf = SoftmaxClassifier::train(
            &train,
            num_types,
            ClassifierTraining { seed: stream.derive(&format!("curation/fold{f}")), ..opts },
        )?;
        for k in (0..items.len()).filter(|&k| fold_of[k] == f) {
            scores[k] = labeled_type_prob(&clf, &items[k])?;
        }
    }
    Ok(scores)
}

/// Remove the `floor(fraction · n)` lowest-scoring items; ties go to the
/// smaller id first.
pub fn select_outliers(
    items: &[ItemRecord],
    scores: &[f64],
    removal_fraction: f64,
) -> Result<(Vec<ItemRecord>, Vec<RemovalRecord>)> {
    check_fraction(removal_fraction)?;
    if scores.len() != items.len() {
        return Err(Error::Input(format!("{} items but {} scores", items.len(), scores.len())));
    }
    let count = (removal_fraction * items.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| items[a].id.cmp(&items[b].id)));
    let mut removed = vec![false; items.len()];
    let mut log = Vec::with_capacity(count);
    for &k in &order[..count] {
        removed[k] = true;
        log.push(RemovalRecord {
            id: items[k].id.clone(),
            cause: RemovalCause::Outlier,
            partner: None,
            value: scores[k],
        });
    }
    let kept = items.iter().zip(&removed).filter(|(_, &r)| !r).map(|(i, _)| i.clone()).collect();
    Ok((kept, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.68, val: 0.12, test: 0.20 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&v| !(v > 0.0)) || ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must be positive and sum to 1")));
        }
        Ok(())
    }

    /// Largest-remainder allocation of `n` items; fractional ties favour
    /// train, then val, then test.
    pub fn allocate(&self, n: usize) -> [usize; 3] {
        let exact = [self.train * n as f64, self.val * n as f64, self.test * n as f64];
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        counts
    }
}

/// Assign splits stratified by (style, furniture type) cell. Cells of fewer
/// than 3 items go wholly to train.
pub fn split(items: &[ItemRecord], ratios: SplitRatios, seed: u64) -> Result<Vec<ItemRecord>> {
    ratios.validate()?;
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, it) in items.iter().enumerate() {
        cells.entry((it.style, it.furniture_type)).or_default().push(k);
    }
    let stream = SeedStream::new(seed);
    let mut out = items.to_vec();
    for ((style, ty), mut members) in cells {
        if members.len() < 3 {
            log::warn!("cell (style {style}, type {ty}) has {} items; assigning all to train", members.len());
            for k in members {
                out[k].split = Split::Train;
            }
            continue;
        }
        members.sort_by(|&a, &b| items[a].id.cmp(&items[b].id));
        members.shuffle(&mut stream.rng(&format!("split/{style}/{ty}")));
        let [n_train, n_val, _] = ratios.allocate(members.len());
        for (pos, &k) in members.iter().enumerate() {
            out[k].split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise_image(seed: u64, w: usize, h: usize) -> Image {
        let mut r = SeedStream::new(seed).rng("img");
        Image::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn item(id: &str, style: usize, ty: usize) -> ItemRecord {
        ItemRecord {
            id: id.into(),
            features: vec![0.0],
            style,
            furniture_type: ty,
            tokens: vec![],
            split: Split::Train,
        }
    }

    /// Direct O(N⁴) orthonormal DCT-II straight from the definition.
    fn naive_dct(f: &[f64], n: usize, u: usize, v: usize) -> f64 {
        let a = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        let pi = std::f64::consts::PI;
        let mut s = 0.0;
        for y in 0..n {
            for x in 0..n {
                s += f[y * n + x]
                    * (pi * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos()
                    * (pi * (2 * y + 1) as f64 * v as f64 / (2 * n) as f64).cos();
            }
        }
        a(u) * a(v) * s
    }

    #[test]
    fn dct_matches_definition() {
        let img = noise_image(3, 32, 32);
        let c = low_frequency_dct(&img).unwrap();
        for v in 0..8 {
            for u in 0..8 {
                assert!((c[v * 8 + u] - naive_dct(&img.pixels, 32, u, v)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hash_properties() {
        let img = noise_image(1, 64, 64);
        let h = phash(&img).unwrap();
        assert_eq!(h, phash(&img.clone()).unwrap());
        assert_eq!(h.0 & 1, 0);
        assert_eq!(h.0.count_ones(), 31, "bits above the median of 63 values");
        assert_eq!(hamming(h, phash(&img.scaled(2.0)).unwrap()), 0);
        assert_eq!(hamming(h, phash(&img.scaled(0.37)).unwrap()), 0);

        let mean: f64 = (0..50)
            .map(|k| {
                let a = phash(&noise_image(100 + 2 * k, 64, 64)).unwrap();
                let b = phash(&noise_image(101 + 2 * k, 64, 64)).unwrap();
                f64::from(hamming(a, b))
            })
            .sum::<f64>()
            / 50.0;
        assert!((mean - 32.0).abs() <= 10.0, "{mean}");

        assert!(matches!(phash(&Image::new(0, 0, vec![]).unwrap()), Err(Error::Input(_))));
        assert!(matches!(phash(&noise_image(1, 16, 40)), Err(Error::Input(_))));
        // non-multiple sizes pool unevenly but work
        assert!(phash(&noise_image(2, 45, 37)).is_ok());
    }

    #[test]
    fn hamming_examples() {
        let h = PHash(0xdead_beef_0123_4567);
        assert_eq!(hamming(h, h), 0);
        assert_eq!(hamming(h, PHash(!h.0)), 64);
        assert_eq!(hamming(PHash(0b1010), PHash(0b0110)), 2);
    }

    #[test]
    fn banded_candidates_equal_brute_force() {
        let mut r = SeedStream::new(4).rng("h");
        let mut hashes: Vec<PHash> = (0..300).map(|_| PHash(r.gen())).collect();
        for k in 0..100 {
            let src = hashes[k].0;
            let flips: u64 = (0..r.gen_range(0..7)).fold(0, |m, _| m | 1 << r.gen_range(0..64));
            hashes.push(PHash(src ^ flips));
        }
        for t in [0, 2, 4, 6, 20] {
            let mut brute = Vec::new();
            for a in 0..hashes.len() {
                for b in a + 1..hashes.len() {
                    let d = hamming(hashes[a], hashes[b]);
                    if d <= t {
                        brute.push((a, b, d));
                    }
                }
            }
            let mut got = near_duplicate_pairs(&hashes, t);
            got.sort_unstable();
            assert_eq!(got, brute, "threshold {t}");
        }
    }

    #[test]
    fn dedup_rules() {
        let h = |v: u64| PHash(v);
        let items = vec![item("b", 0, 0), item("a", 0, 1), item("c", 1, 0), item("d", 2, 0), item("e", 3, 0)];
        // b/a same-style duplicates, c/d different-style duplicates, e unique
        let hashes = vec![h(0xff), h(0xff), h(0xf0f0_0000), h(0xf0f0_0000), h(0x0f0f_0f0f_0000_0000)];
        let (kept, log) = dedup(&items, &hashes, 4).unwrap();
        let ids: Vec<&str> = kept.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "e"]);
        assert_eq!(log.len(), 3);
        assert_eq!(log[0].id, "b");
        assert_eq!(log[0].cause, RemovalCause::Duplicate);
        assert_eq!(log[0].partner.as_deref(), Some("a"));
        assert_eq!(log[1].cause, RemovalCause::ConflictingDuplicate);
        assert_eq!(log[2].partner.as_deref(), Some("c"));

        let (again, log2) = dedup(&kept, &[h(0xff), h(0x0f0f_0f0f_0000_0000)], 4).unwrap();
        assert_eq!(again, kept);
        assert!(log2.is_empty());
        assert!(dedup(&items, &hashes, 65).is_err());
    }

    #[test]
    fn transitive_clusters_follow_the_cluster_rule() {
        // x~y and y~z but x and z are 6 apart: one cluster. w~v far from both.
        let items = vec![item("x", 0, 0), item("y", 0, 1), item("z", 1, 0), item("w", 2, 0), item("v", 2, 1)];
        let hashes = vec![PHash(0), PHash(0b111), PHash(0b111_111), PHash(0xff << 40), PHash(0xff << 40 | 1)];
        let (kept, log) = dedup(&items, &hashes, 3).unwrap();
        let ids: Vec<&str> = kept.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, vec!["v"]);
        assert_eq!(log.len(), 4);
    }

    #[test]
    fn split_allocation() {
        let r = SplitRatios::default();
        assert_eq!(r.allocate(100), [68, 12, 20]);
        assert_eq!(r.allocate(25), [17, 3, 5]);
        assert_eq!(r.allocate(3).iter().sum::<usize>(), 3);
        assert!(SplitRatios { train: 0.5, val: 0.5, test: 0.1 }.validate().is_err());
        assert!(SplitRatios { train: 1.0, val: 0.0, test: 0.0 }.validate().is_err());

        let items: Vec<ItemRecord> =
            (0..100).map(|k| item(&format!("i{k:03}"), k % 2, (k / 2) % 2)).collect();
        let a = split(&items, r, 9).unwrap();
        assert_eq!(a, split(&items, r, 9).unwrap());
        let count = |s| a.iter().filter(|i| i.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (68, 12, 20));

        let tiny = vec![item("a", 0, 0), item("b", 0, 0), item("c", 1, 0)];
        let t = split(&tiny, r, 1).unwrap();
        assert!(t.iter().all(|i| i.split == Split::Train));
    }

    struct Fixed(HashMap<String, f64>);

    impl TypeScorer for Fixed {
        fn type_probs(&self, f: &[f64]) -> Result<Vec<f64>> {
            let p = self.0[&format!("{}", f[0])];
            Ok(vec![p, 1.0 - p])
        }
    }

    #[test]
    fn outlier_filter_counts_and_ties() {
        let mut items = Vec::new();
        let mut scores = HashMap::new();
        for k in 0..10 {
            let mut it = item(&format!("o{k}"), 0, 0);
            it.features = vec![k as f64];
            scores.insert(format!("{k}"), if k < 3 { 0.1 } else { 0.9 });
            items.push(it);
        }
        let clf = Fixed(scores);
        let (kept, log) = outlier_filter(&items, &clf, 0.2).unwrap();
        assert_eq!(kept.len(), 8);
        assert_eq!(log.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["o0", "o1"]);
        let (kept, log) = outlier_filter(&items, &clf, 0.05).unwrap();
        assert_eq!((kept.len(), log.len()), (10, 0));
        assert!(matches!(outlier_filter(&items, &clf, 0.0), Err(Error::Config(_))));
        assert!(matches!(outlier_filter(&items, &clf, 1.0), Err(Error::Config(_))));
    }
}
