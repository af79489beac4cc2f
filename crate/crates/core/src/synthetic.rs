//! Synthetic furniture datasets with planted style structure.
//!
//! Each item's features are `style_signal · P_style + type_signal · P_type +
//! N(0, noise_sigma²)` for fixed Gaussian prototypes. Tokens mimic product
//! meta-data: a color, a material, style words and the furniture-type word.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curation::{split, Image, SplitRatios};
use crate::dataset::{Dataset, ItemRecord, Split};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_styles: usize,
    pub num_types: usize,
    pub items_per_cell: usize,
    pub feature_dim: usize,
    pub style_signal: f64,
    pub type_signal: f64,
    pub noise_sigma: f64,
    /// Distinct style words per style.
    pub style_words: usize,
    /// Style words emitted per item.
    pub style_words_per_item: usize,
    pub num_colors: usize,
    pub num_materials: usize,
    /// Probability that a style word is replaced by a word of a random style.
    pub token_noise: f64,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_styles: 17,
            num_types: 6,
            items_per_cell: 20,
            feature_dim: 64,
            style_signal: 0.5,
            type_signal: 1.0,
            noise_sigma: 1.0,
            style_words: 3,
            style_words_per_item: 2,
            num_colors: 8,
            num_materials: 6,
            token_noise: 0.1,
            image_size: 64,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_styles < 2 {
            return bad(format!("synth.num_styles = {} must be >= 2", self.num_styles));
        }
        if self.num_types < 2 {
            return bad(format!("synth.num_types = {} must be >= 2", self.num_types));
        }
        if self.items_per_cell == 0 || self.feature_dim == 0 {
            return bad("synth.items_per_cell and synth.feature_dim must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("synth.noise_sigma = {} must be >= 0", self.noise_sigma));
        }
        if !self.style_signal.is_finite() || !self.type_signal.is_finite() {
            return bad("synth signals must be finite".into());
        }
        if self.style_words == 0 || self.num_colors == 0 || self.num_materials == 0 {
            return bad("synth vocabulary sizes must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.token_noise) {
            return bad(format!("synth.token_noise = {} must be in [0, 1]", self.token_noise));
        }
        if self.image_size < crate::curation::PHASH_SIZE {
            return bad(format!("synth.image_size must be >= {}", crate::curation::PHASH_SIZE));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            num_styles: self.num_styles,
            style_words: self.style_words,
            num_types: self.num_types,
            num_colors: self.num_colors,
            num_materials: self.num_materials,
        }
    }
}

/// Token id layout: style words, then type words, colors, materials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub num_styles: usize,
    pub style_words: usize,
    pub num_types: usize,
    pub num_colors: usize,
    pub num_materials: usize,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.num_styles * self.style_words + self.num_types + self.num_colors + self.num_materials
    }

    pub fn style_word(&self, style: usize, k: usize) -> usize {
        style * self.style_words + k
    }

    pub fn type_word(&self, ty: usize) -> usize {
        self.num_styles * self.style_words + ty
    }

    pub fn color(&self, c: usize) -> usize {
        self.type_word(self.num_types) + c
    }

    pub fn material(&self, m: usize) -> usize {
        self.color(self.num_colors) + m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Latent style prototypes, one per style.
    pub style_prototypes: Vec<Vec<f64>>,
    pub type_prototypes: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generate the dataset and assign 68:12:20 stratified splits.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let stream = SeedStream::new(spec.seed);
    let mut proto_rng = stream.rng("synth/prototypes");
    let style_prototypes: Vec<Vec<f64>> =
        (0..spec.num_styles).map(|_| gaussian_vec(&mut proto_rng, spec.feature_dim)).collect();
    let type_prototypes: Vec<Vec<f64>> =
        (0..spec.num_types).map(|_| gaussian_vec(&mut proto_rng, spec.feature_dim)).collect();
    let mut noise = stream.rng("synth/noise");
    let mut text = stream.rng("synth/text");
    let vocab = spec.vocab();

    let mut items = Vec::with_capacity(spec.num_styles * spec.num_types * spec.items_per_cell);
    for (s, style_proto) in style_prototypes.iter().enumerate() {
        for (t, type_proto) in type_prototypes.iter().enumerate() {
            for _ in 0..spec.items_per_cell {
                let id = format!("it{:05}", items.len());
                let features = (0..spec.feature_dim)
                    .map(|d| {
                        let n: f64 = StandardNormal.sample(&mut noise);
                        spec.style_signal * style_proto[d]
                            + spec.type_signal * type_proto[d]
                            + spec.noise_sigma * n
                    })
                    .collect();
                let mut tokens = vec![
                    vocab.color(text.gen_range(0..spec.num_colors)),
                    vocab.material(text.gen_range(0..spec.num_materials)),
                ];
                for _ in 0..spec.style_words_per_item {
                    let word_style =
                        if text.gen_bool(spec.token_noise) { text.gen_range(0..spec.num_styles) } else { s };
                    tokens.push(vocab.style_word(word_style, text.gen_range(0..spec.style_words)));
                }
                tokens.push(vocab.type_word(t));
                items.push(ItemRecord {
                    id,
                    features,
                    style: s,
                    furniture_type: t,
                    tokens,
                    split: Split::Train,
                });
            }
        }
    }
    let items = split(&items, SplitRatios::default(), stream.derive("synth/split"))?;
    Ok(SynthOutput {
        dataset: Dataset {
            input_dim: spec.feature_dim,
            num_styles: spec.num_styles,
            num_types: spec.num_types,
            vocab_size: vocab.size(),
            items,
        },
        style_prototypes,
        type_prototypes,
    })
}

/// Per-item product "photo": a smooth random pattern from a handful of
/// low-frequency cosines, deterministic in (seed, item id).
pub fn item_image(spec: &SynthSpec, item_id: &str) -> Image {
    let mut rng = SeedStream::new(spec.seed).rng(&format!("synth/image/{item_id}"));
    let n = spec.image_size;
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.gen_range(0.0..7.0),
                rng.gen_range(0.0..7.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 / n as f64, y as f64 / n as f64);
            let v: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, a)| a * (std::f64::consts::PI * (kx * fx + ky * fy) + ph).cos())
                .sum();
            px.push(0.5 + 0.1 * v);
        }
    }
    Image::new(n, n, px).expect("square image")
}

pub fn generate_images(spec: &SynthSpec, items: &[ItemRecord]) -> Vec<Image> {
    items.iter().map(|it| item_image(spec, &it.id)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicateKind {
    /// Pixel-identical copy, same style label.
    ExactSameStyle,
    /// Pixel-identical copy relabeled with another style.
    ExactOtherStyle,
    /// Same style, intensities scaled by 2.
    Scaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectedDuplicate {
    pub copy_id: String,
    pub source_id: String,
    pub kind: DuplicateKind,
}

/// Append copies of randomly chosen items (with their images) to the dataset.
pub fn inject_duplicates(
    dataset: &mut Dataset,
    images: &mut Vec<Image>,
    counts: &[(DuplicateKind, usize)],
    seed: u64,
) -> Result<Vec<InjectedDuplicate>> {
    if dataset.items.len() != images.len() {
        return Err(Error::Input("dataset and image list differ in length".into()));
    }
    let n = dataset.items.len();
    let total: usize = counts.iter().map(|c| c.1).sum();
    if total > n {
        return Err(Error::Input(format!("cannot inject {total} duplicates into {n} items")));
    }
    let mut rng = SeedStream::new(seed).rng("synth/duplicates");
    let sources = rand::seq::index::sample(&mut rng, n, total).into_vec();
    let mut out = Vec::with_capacity(total);
    let mut src_iter = sources.into_iter();
    for &(kind, count) in counts {
        for _ in 0..count {
            let src = src_iter.next().expect("sampled enough sources");
            let mut copy = dataset.items[src].clone();
            copy.id = format!("{}-dup{}", copy.id, out.len());
            let img = match kind {
                DuplicateKind::ExactSameStyle => images[src].clone(),
                DuplicateKind::ExactOtherStyle => {
                    copy.style = (copy.style + rng.gen_range(1..dataset.num_styles)) % dataset.num_styles;
                    images[src].clone()
                }
                DuplicateKind::Scaled => images[src].scaled(2.0),
            };
            out.push(InjectedDuplicate {
                copy_id: copy.id.clone(),
                source_id: dataset.items[src].id.clone(),
                kind,
            });
            dataset.items.push(copy);
            images.push(img);
        }
    }
    Ok(out)
}

/// Append `count` mislabeled items: features drawn like a genuine item of
/// some (style, type) cell, furniture-type label naming a different type.
pub fn plant_outliers(output: &mut SynthOutput, spec: &SynthSpec, count: usize, seed: u64) -> Vec<String> {
    let mut rng = SeedStream::new(seed).rng("synth/outliers");
    let num_types = output.type_prototypes.len();
    let mut ids = Vec::with_capacity(count);
    for k in 0..count {
        let style = rng.gen_range(0..output.style_prototypes.len());
        let true_type = rng.gen_range(0..num_types);
        let label = (true_type + rng.gen_range(1..num_types)) % num_types;
        let features = (0..output.dataset.input_dim)
            .map(|d| {
                let n: f64 = StandardNormal.sample(&mut rng);
                spec.style_signal * output.style_prototypes[style][d]
                    + spec.type_signal * output.type_prototypes[true_type][d]
                    + spec.noise_sigma * n
            })
            .collect();
        let id = format!("outlier{k:04}");
        output.dataset.items.push(ItemRecord {
            id: id.clone(),
            features,
            style,
            furniture_type: label,
            tokens: vec![],
            split: Split::Train,
        });
        ids.push(id);
    }
    ids
}
