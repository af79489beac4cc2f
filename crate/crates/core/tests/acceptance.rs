//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use stylecompat::cli::{
    cmd_curate, cmd_eval, cmd_synth, cmd_train, Corruption, ExperimentConfig, TrainTarget,
};
use stylecompat::curation::{
    dedup, hamming, out_of_fold_type_scores, phash, select_outliers, ClassifierTraining, SplitRatios,
};
use stylecompat::dataset::{ItemRecord, Split};
use stylecompat::evaluation::{pair_auc, roc_auc};
use stylecompat::losses::{contrastive_loss, cross_entropy, hinge_rank_loss};
use stylecompat::models::{init_params, param_count, Variant};
use stylecompat::retrieval::text_match_recall;
use stylecompat::retrieval::{query_compatible, query_with_text, EmbeddingIndex, ItemMeta, Metric};
use stylecompat::rng::SeedStream;
use stylecompat::sampling::strategic_pairs;
use stylecompat::synthetic::{
    generate, generate_images, inject_duplicates, plant_outliers, DuplicateKind, SynthSpec,
};
use stylecompat::training::{
    cross_validate_margin, is_base_param, loss_gradient_checks, param_digest, train_siamese, train_vte,
    GradcheckConfig, Hyper, SiameseData, TrainingConfig,
};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let checks = loss_gradient_checks(&GradcheckConfig::default(), 11).unwrap();
    let ok = checks.iter().all(|c| c.report.checked == 100 && c.report.max_rel_error < 1e-4);
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.2e} ({} pts)", c.loss, c.report.max_rel_error, c.report.checked))
        .collect::<Vec<_>>()
        .join(", ");
    let e = t.elapsed();
    outcome(ok && within(e, 30), format!("{detail}; {:.1}s", e.as_secs_f64()))
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            pos += 1;
        } else {
            neg += 1;
        }
        if !li {
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
    twice_wins as f64 / (2 * pos * neg) as f64
}

fn auc_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = SeedStream::new(2).rng("auc");
    let mut mismatches = 0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.gen_range(2..=200);
        // Coarse integer scores force ties.
        let levels = rng.gen_range(1..20);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 4.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        if roc_auc(&scores, &labels).unwrap() != brute_auc(&scores, &labels) {
            mismatches += 1;
        }
        done += 1;
    }
    let e = t.elapsed();
    outcome(
        mismatches == 0 && within(e, 10),
        format!("{mismatches} mismatches over 1000 instances; {:.2}s", e.as_secs_f64()),
    )
}

fn loss_zero_cases() -> Outcome {
    let x = [0.3, -1.2, 4.0];
    let far = [10.0, 0.0, 0.0];
    let cases = [
        ("contrastive(identical, Y=1)", contrastive_loss(&x, &x, true, 1.0).unwrap()),
        ("contrastive(d >= m, Y=0)", contrastive_loss(&x, &far, false, 2.0).unwrap()),
        (
            "hinge(margin satisfied)",
            hinge_rank_loss(&[1.0, 0.0], &[2.0, 0.0], &[vec![0.5, 3.0], vec![-1.0, 0.0]], 0.5).unwrap(),
        ),
        ("cross_entropy(one-hot correct)", cross_entropy(&[vec![0.0, 1.0, 0.0]], &[1]).unwrap()),
    ];
    let ok = cases.iter().all(|(_, v)| *v == 0.0);
    let detail = cases.iter().map(|(n, v)| format!("{n} = {v}")).collect::<Vec<_>>().join(", ");
    outcome(ok, detail)
}

fn margin_sweep_trend() -> Outcome {
    let t = Instant::now();
    let candidates = [0.01 * M_STAR, M_STAR, 1e6 * M_STAR];
    let mut sums = [0.0; 3];
    let seeds = 5;
    for seed in 0..seeds {
        let (spec, items, pairs) = desk_data(seed);
        let model = desk_model(&spec);
        let training = desk_training(seed);
        let (sweep, _) = cross_validate_margin(
            Variant::Canonical,
            SiameseData::new(&items, &pairs),
            &candidates,
            Hyper { model: &model, loss: &desk_loss(), training: &training },
        )
        .unwrap();
        for (s, r) in sums.iter_mut().zip(&sweep.results) {
            *s += r.val_auc / seeds as f64;
        }
    }
    let [tiny, tuned, huge] = sums;
    let e = t.elapsed();
    outcome(
        huge <= 0.55 && tuned >= tiny + 0.02 && within(e, 180),
        format!("mean val AUC tiny {tiny:.4}, m* {tuned:.4}, huge {huge:.4}; {:.1}s", e.as_secs_f64()),
    )
}

fn categorical_converges_faster() -> Outcome {
    let t = Instant::now();
    let (mut cat, mut can) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let (spec, items, pairs) = desk_data(seed);
        let model = desk_model(&spec);
        let training = TrainingConfig { epochs: 1, ..desk_training(seed) };
        let loss = desk_loss();
        let hyper = Hyper { model: &model, loss: &loss, training: &training };
        for (variant, acc) in [(Variant::Categorical, &mut cat), (Variant::Canonical, &mut can)] {
            let (_, log) = train_siamese(variant, SiameseData::new(&items, &pairs), hyper).unwrap();
            acc.push(log.last_val_auc().unwrap());
        }
    }
    let (a, b) = (mean(&cat), mean(&can));
    let e = t.elapsed();
    outcome(
        a >= b && within(e, 120),
        format!(
            "mean val AUC after one epoch: categorical {a:.4}, canonical {b:.4}; {:.1}s",
            e.as_secs_f64()
        ),
    )
}

fn short_network_trend() -> Outcome {
    let (mut short, mut full) = (Vec::new(), Vec::new());
    let mut counts = (0, 0);
    for seed in 0..5 {
        let (spec, items, pairs) = desk_data(seed);
        let model = desk_model(&spec);
        let training = desk_training(seed);
        let loss = desk_loss();
        let hyper = Hyper { model: &model, loss: &loss, training: &training };
        for (variant, acc) in [(Variant::Short, &mut short), (Variant::Canonical, &mut full)] {
            let (params, _) = train_siamese(variant, SiameseData::new(&items, &pairs), hyper).unwrap();
            acc.push(pair_auc(&items, &pairs.test, &params, &model, variant).unwrap());
            if seed == 0 {
                let n = param_count(&params, &model, variant).unwrap();
                match variant {
                    Variant::Short => counts.0 = n,
                    _ => counts.1 = n,
                }
            }
        }
    }
    let (s, f) = (mean(&short), mean(&full));
    outcome(
        counts.0 < counts.1 && (s - f).abs() <= 0.08 && s > 0.85 && f > 0.85,
        format!("params short {} < full {}; mean test AUC short {s:.4}, full {f:.4}", counts.0, counts.1),
    )
}

fn sampling_contract() -> Outcome {
    let (_, items, _) = desk_data(3);
    let train = in_split(&items, Split::Train);
    let pairs = strategic_pairs(&train, 600, 16, 5).unwrap();
    let by_id: std::collections::HashMap<&str, &ItemRecord> =
        train.iter().map(|i| (i.id.as_str(), i)).collect();
    let (mut bad_pos, mut bad_neg, mut pos, mut neg) = (0, 0, 0, 0);
    for p in &pairs {
        let (a, b) = (by_id[p.i.as_str()], by_id[p.j.as_str()]);
        if p.compatible {
            pos += 1;
            if a.furniture_type == b.furniture_type || a.style != b.style {
                bad_pos += 1;
            }
        } else {
            neg += 1;
            if a.style == b.style {
                bad_neg += 1;
            }
        }
    }
    outcome(
        pairs.len() >= 10_000 && bad_pos == 0 && bad_neg == 0 && neg == 16 * pos,
        format!(
            "{} pairs; same-type positives {bad_pos}, same-style negatives {bad_neg}, pos:neg {pos}:{neg}",
            pairs.len()
        ),
    )
}

fn curation_rules() -> Outcome {
    let t = Instant::now();
    let spec = SynthSpec { seed: 4, ..desk_spec(4) };
    let mut synth = generate(&spec).unwrap();
    let planted: HashSet<String> = plant_outliers(&mut synth, &spec, 20, 8).into_iter().collect();
    let mut ds = synth.dataset;
    let mut images = generate_images(&spec, &ds.items);
    let injected = inject_duplicates(
        &mut ds,
        &mut images,
        &[
            (DuplicateKind::ExactSameStyle, 10),
            (DuplicateKind::ExactOtherStyle, 10),
            (DuplicateKind::Scaled, 10),
        ],
        9,
    )
    .unwrap();
    let hashes: Vec<_> = images.iter().map(|i| phash(i).unwrap()).collect();
    let (kept, _) = dedup(&ds.items, &hashes, 4).unwrap();
    let kept_ids: HashSet<&str> = kept.iter().map(|i| i.id.as_str()).collect();
    let pos = |id: &str| ds.items.iter().position(|i| i.id == id).unwrap();

    let (mut same_ok, mut other_ok, mut scaled_ok) = (0, 0, 0);
    for d in &injected {
        let both = [kept_ids.contains(d.source_id.as_str()), kept_ids.contains(d.copy_id.as_str())];
        match d.kind {
            DuplicateKind::ExactSameStyle => same_ok += usize::from(both.iter().filter(|&&k| k).count() == 1),
            DuplicateKind::ExactOtherStyle => other_ok += usize::from(!both[0] && !both[1]),
            DuplicateKind::Scaled => {
                scaled_ok += usize::from(hamming(hashes[pos(&d.source_id)], hashes[pos(&d.copy_id)]) == 0)
            }
        }
    }

    let scores = out_of_fold_type_scores(
        &kept,
        spec.num_types,
        5,
        ClassifierTraining { seed: 10, ..ClassifierTraining::default() },
    )
    .unwrap();
    let (_, log) = select_outliers(&kept, &scores, 0.02).unwrap();
    let found = log.iter().filter(|r| planted.contains(&r.id)).count();
    let present = kept.iter().filter(|i| planted.contains(&i.id)).count();
    let recovery = found as f64 / present as f64;
    let e = t.elapsed();
    outcome(
        same_ok == 10 && other_ok == 10 && scaled_ok == 10 && recovery >= 0.8 && within(e, 30),
        format!(
            "same-style single survivor {same_ok}/10, cross-style both removed {other_ok}/10, scaled at Hamming 0 {scaled_ok}/10, outlier recovery {found}/{present}; {:.1}s",
            e.as_secs_f64()
        ),
    )
}

fn brute_rank(
    vectors: &[Vec<f64>],
    ids: &[String],
    q: &[f64],
    metric: Metric,
    keep: impl Fn(usize) -> bool,
) -> Vec<String> {
    let mut all: Vec<(f64, &String)> = vectors
        .iter()
        .zip(ids)
        .enumerate()
        .filter(|(n, _)| keep(*n))
        .map(|(_, (v, id))| {
            let s = match metric {
                Metric::Euclidean => v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                Metric::Dot => -v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>(),
            };
            (s, id)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    all.into_iter().map(|(_, id)| id.clone()).collect()
}

fn retrieval_oracle() -> Outcome {
    let mut rng = SeedStream::new(6).rng("retrieval");
    let n = 500;
    let dim = 8;
    let ids: Vec<String> = (0..n).map(|k| format!("v{k:03}")).collect();
    let vectors: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let meta: Vec<ItemMeta> = (0..n).map(|k| ItemMeta { style: k % 5, furniture_type: k % 4 }).collect();
    let euc = EmbeddingIndex::new(ids.clone(), vectors.clone(), Metric::Euclidean, meta.clone()).unwrap();
    let dot = EmbeddingIndex::new(ids.clone(), vectors.clone(), Metric::Dot, meta.clone()).unwrap();
    let mut checked = 0;
    let mut wrong = 0;
    for _ in 0..20 {
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = q.iter().zip(&t).map(|(a, b)| a + b).collect();
        let ex = rng.gen_range(0..4);
        for k in [1, 5, 10] {
            let want = brute_rank(&vectors, &ids, &q, Metric::Euclidean, |_| true);
            let got = query_compatible(&euc, &q, k, None).unwrap();
            wrong += usize::from(got.ids() != want[..k].iter().map(String::as_str).collect::<Vec<_>>());
            let want = brute_rank(&vectors, &ids, &q, Metric::Euclidean, |n| meta[n].furniture_type != ex);
            let got = query_compatible(&euc, &q, k, Some(ex)).unwrap();
            wrong += usize::from(got.ids() != want[..k].iter().map(String::as_str).collect::<Vec<_>>());
            let want = brute_rank(&vectors, &ids, &sum, Metric::Dot, |_| true);
            let got = query_with_text(&dot, &q, &t, k).unwrap();
            wrong += usize::from(got.ids() != want[..k].iter().map(String::as_str).collect::<Vec<_>>());
            checked += 3;
        }
    }
    outcome(wrong == 0, format!("{wrong} of {checked} rankings differ from the brute-force sort"))
}

fn vte_sanity() -> Outcome {
    let t = Instant::now();
    let mut recalls = Vec::new();
    let mut frozen_ok = true;
    for seed in 0..5 {
        let spec = desk_spec(seed);
        let items = generate(&spec).unwrap().dataset.items;
        let model = desk_model(&spec);
        let training = desk_training(seed);
        let loss = desk_loss();
        let base = init_params(&model, &mut SeedStream::new(seed).rng("init")).unwrap();
        let before = param_digest(&base, is_base_param);
        let (params, _) = train_vte(
            &in_split(&items, Split::Train),
            &[],
            Hyper { model: &model, loss: &loss, training: &training },
            &base,
        )
        .unwrap();
        frozen_ok &= param_digest(&params, is_base_param) == before;
        recalls.push(text_match_recall(&in_split(&items, Split::Test), &params, &model, 1, seed).unwrap());
    }
    let r = mean(&recalls);
    let chance = 1.0 / 17.0;
    let e = t.elapsed();
    outcome(
        r > 3.0 * chance && frozen_ok && within(e, 120),
        format!(
            "held-out recall@1 {r:.4} vs 3x chance {:.4}; base frozen {frozen_ok}; {:.1}s",
            3.0 * chance,
            e.as_secs_f64()
        ),
    )
}

fn pipeline_config() -> ExperimentConfig {
    let spec = desk_spec(0);
    ExperimentConfig {
        seed: Some(21),
        model: desk_model(&spec),
        synth: spec,
        corruption: Corruption { exact_same_style: 5, exact_other_style: 5, scaled: 5, outliers: 10 },
        loss: desk_loss(),
        training: TrainingConfig { epochs: 2, ..desk_training(0) },
        pairs: desk_counts(),
        ..ExperimentConfig::default()
    }
}

fn run_pipeline(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let cfg = pipeline_config();
    let seed = 21;
    cmd_synth(&cfg, seed, &dir.join("synth")).unwrap();
    cmd_curate(
        &cfg,
        seed,
        &dir.join("synth/dataset.tsv"),
        &dir.join("synth/images.tsv"),
        &dir.join("curated"),
    )
    .unwrap();
    cmd_train(&cfg, seed, &dir.join("curated/dataset.tsv"), TrainTarget::Canonical, None, &dir.join("train"))
        .unwrap();
    cmd_eval(
        &dir.join("train/checkpoint.json"),
        &dir.join("curated/dataset.tsv"),
        &dir.join("train/pairs_test.tsv"),
        None,
        Some(&dir.join("eval")),
    )
    .unwrap();
    let mut files = Vec::new();
    for sub in ["synth", "curated", "train", "eval"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for n in names {
            files.push((format!("{sub}/{n}"), std::fs::read(dir.join(sub).join(&n)).unwrap()));
        }
    }
    files
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = run_pipeline(a.path());
    let fb = run_pipeline(b.path());
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> =
        fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let has_core =
        ["train/checkpoint.json", "eval/report.txt", "eval/report.kv"].iter().all(|n| names.contains(n));
    outcome(
        fa.len() == fb.len() && differing.is_empty() && has_core,
        format!("{} files compared, {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

fn split_ratios() -> Outcome {
    let spec =
        SynthSpec { num_styles: 10, num_types: 4, items_per_cell: 25, seed: 12, ..SynthSpec::default() };
    let items = generate(&spec).unwrap().dataset.items;
    let ratios = SplitRatios::default();
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for s in 0..spec.num_styles {
        for t in 0..spec.num_types {
            let cell: Vec<&ItemRecord> =
                items.iter().filter(|i| i.style == s && i.furniture_type == t).collect();
            let n = cell.len() as f64;
            for (split, r) in
                [(Split::Train, ratios.train), (Split::Val, ratios.val), (Split::Test, ratios.test)]
            {
                let c = cell.iter().filter(|i| i.split == split).count() as f64;
                worst = worst.max((c - r * n).abs());
            }
            cells += 1;
        }
    }
    outcome(
        items.len() == 1000 && worst <= 1.0,
        format!("{} items, {cells} cells, worst deviation {worst:.2} items", items.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", gradient_correctness),
        ("AUC oracle equivalence", auc_oracle),
        ("loss zero-cases", loss_zero_cases),
        ("margin-sweep trend", margin_sweep_trend),
        ("categorical converges faster", categorical_converges_faster),
        ("short-network trend", short_network_trend),
        ("strategic sampling contract", sampling_contract),
        ("curation", curation_rules),
        ("retrieval oracle", retrieval_oracle),
        ("VTE sanity", vte_sanity),
        ("determinism", determinism),
        ("split ratios", split_ratios),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (k, (name, f)) in criteria.into_iter().enumerate() {
        let n = k + 1;
        if let Some(fl) = &filter {
            if *fl != n.to_string() && !name.contains(fl.as_str()) {
                continue;
            }
        }
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !res.pass {
            failed += 1;
        }
        println!("criterion {n:>2} {} {name}: {}", if res.pass { "PASS" } else { "FAIL" }, res.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
