use proptest::prelude::*;

use stylecompat::curation::{split, SplitRatios};
use stylecompat::dataset::{ItemRecord, Split};
use stylecompat::retrieval::{query_compatible, EmbeddingIndex, ItemMeta, Metric};
use stylecompat::sampling::strategic_pairs;

fn items(styles: usize, types: usize, per_cell: usize) -> Vec<ItemRecord> {
    let mut out = Vec::new();
    for s in 0..styles {
        for t in 0..types {
            for k in 0..per_cell {
                out.push(ItemRecord {
                    id: format!("s{s}t{t}k{k:02}"),
                    features: vec![s as f64, t as f64],
                    style: s,
                    furniture_type: t,
                    tokens: vec![],
                    split: Split::Train,
                });
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn euclidean_top_k_is_the_sorted_prefix(
        raw in prop::collection::vec(prop::collection::vec(-3i32..3, 3), 1..40),
        q in prop::collection::vec(-3i32..3, 3),
        k in 1usize..12,
        exclude in prop::option::of(0usize..3),
    ) {
        // Small integer coordinates force distance ties.
        let vectors: Vec<Vec<f64>> = raw.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
        let n = vectors.len();
        let ids: Vec<String> = (0..n).map(|i| format!("x{i:02}")).collect();
        let meta: Vec<ItemMeta> = (0..n).map(|i| ItemMeta { style: 0, furniture_type: i % 3 }).collect();
        let index = EmbeddingIndex::new(ids.clone(), vectors.clone(), Metric::Euclidean, meta.clone()).unwrap();
        let q: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        let got = query_compatible(&index, &q, k, exclude).unwrap();

        let mut want: Vec<(i64, &str)> = (0..n)
            .filter(|&i| Some(meta[i].furniture_type) != exclude)
            .map(|i| {
                let d2: f64 = vectors[i].iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2 as i64, ids[i].as_str())
            })
            .collect();
        want.sort();
        let want: Vec<&str> = want.iter().take(k).map(|w| w.1).collect();
        prop_assert_eq!(got.ids(), want.clone());
        prop_assert_eq!(got.truncated, want.len() < k);
        prop_assert!(got.hits.windows(2).all(|w| w[0].score <= w[1].score));
    }

    #[test]
    fn strategic_pairs_obey_the_sampling_rules(
        styles in 2usize..5,
        types in 2usize..4,
        per_cell in 2usize..5,
        n_pos in 1usize..6,
        ratio in 1usize..4,
        seed in any::<u64>(),
    ) {
        let pool = items(styles, types, per_cell);
        let pairs = strategic_pairs(&pool, n_pos, ratio, seed).unwrap();
        let by_id: std::collections::HashMap<&str, &ItemRecord> = pool.iter().map(|i| (i.id.as_str(), i)).collect();
        let mut seen = std::collections::HashSet::new();
        let pos = pairs.iter().filter(|p| p.compatible).count();
        prop_assert_eq!(pos, n_pos);
        prop_assert_eq!(pairs.len() - pos, n_pos * ratio);
        for p in &pairs {
            let (a, b) = (by_id[p.i.as_str()], by_id[p.j.as_str()]);
            prop_assert!(p.i != p.j);
            prop_assert!(seen.insert((p.i.clone(), p.j.clone())));
            if p.compatible {
                prop_assert!(a.style == b.style && a.furniture_type != b.furniture_type);
            } else {
                prop_assert!(a.style != b.style);
            }
        }
    }

    #[test]
    fn split_respects_ratios_per_cell(per_cell in 3usize..30, seed in any::<u64>()) {
        let pool = items(2, 2, per_cell);
        let ratios = SplitRatios::default();
        let out = split(&pool, ratios, seed).unwrap();
        prop_assert_eq!(out.len(), pool.len());
        for s in 0..2 {
            for t in 0..2 {
                let cell: Vec<&ItemRecord> = out.iter().filter(|i| i.style == s && i.furniture_type == t).collect();
                for (which, r) in [(Split::Train, ratios.train), (Split::Val, ratios.val), (Split::Test, ratios.test)] {
                    let c = cell.iter().filter(|i| i.split == which).count() as f64;
                    prop_assert!((c - r * per_cell as f64).abs() <= 1.0);
                }
            }
        }
    }
}
