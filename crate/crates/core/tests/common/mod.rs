#![allow(dead_code)]

use stylecompat::dataset::{ItemRecord, Split};
use stylecompat::losses::LossConfig;
use stylecompat::models::ModelConfig;
use stylecompat::sampling::{pairs_by_split, PairCounts, PairsBySplit};
use stylecompat::synthetic::{generate, SynthSpec};
use stylecompat::training::TrainingConfig;

/// Tuned contrastive margin for the desk-scale synthetic set.
pub const M_STAR: f64 = 20.0;

/// 8 styles × 4 types × 50 items; type signal twice the style signal.
pub fn desk_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_styles: 8,
        num_types: 4,
        items_per_cell: 50,
        feature_dim: 32,
        style_signal: 0.7,
        type_signal: 1.4,
        noise_sigma: 1.0,
        seed,
        ..SynthSpec::default()
    }
}

pub fn desk_model(spec: &SynthSpec) -> ModelConfig {
    ModelConfig {
        input_dim: spec.feature_dim,
        base_layers: vec![64, 32],
        short_truncate_at: Some(1),
        short_pool: 2,
        embedding_dim: 16,
        num_styles: spec.num_styles,
        num_types: spec.num_types,
        text_vocab_size: spec.vocab().size(),
        token_embed_dim: 16,
        lstm_hidden: 16,
        joint_dim: 16,
    }
}

pub fn desk_loss() -> LossConfig {
    LossConfig { m_contrastive: M_STAR, ..LossConfig::default() }
}

pub fn desk_training(seed: u64) -> TrainingConfig {
    TrainingConfig { stage2_lr: 0.001, vte_epochs: 3, seed, ..TrainingConfig::default() }
}

pub fn desk_counts() -> PairCounts {
    PairCounts { train_positive: 200, val_positive: 60, test_positive: 60, neg_ratio: 16 }
}

pub fn desk_data(seed: u64) -> (SynthSpec, Vec<ItemRecord>, PairsBySplit) {
    let spec = desk_spec(seed);
    let items = generate(&spec).unwrap().dataset.items;
    let pairs = pairs_by_split(&items, &desk_counts(), seed).unwrap();
    (spec, items, pairs)
}

pub fn in_split(items: &[ItemRecord], split: Split) -> Vec<ItemRecord> {
    items.iter().filter(|i| i.split == split).cloned().collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
