//! Command-line front end. Every subcommand is also callable as a `cmd_*`
//! function; each validates its inputs fully before it writes anything.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::curation::{
    dedup, out_of_fold_type_scores, phash, removal_log_text, select_outliers, split, ClassifierTraining,
    SplitRatios,
};
use crate::dataset::{Dataset, ItemRecord, Split};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, EvaluationReport};
use crate::io::{images_to_text, read_images, read_pairs, save_index, write_pairs, write_text, Checkpoint};
use crate::losses::LossConfig;
use crate::models::{
    check_tokens, embed_variant, init_params, joint_text, joint_visual, ModelConfig, Variant,
};
use crate::retrieval::{build_index, query_compatible, query_with_text, Metric, QueryResult};
use crate::rng::SeedStream;
use crate::sampling::{pairs_by_split, PairCounts, PairsBySplit};
use crate::synthetic::{
    generate, generate_images, inject_duplicates, plant_outliers, DuplicateKind, SynthSpec,
};
use crate::training::{
    cross_validate_margin, is_base_param, loss_gradient_checks, param_digest, train_siamese, train_vte,
    GradcheckConfig, Hyper, LossGradCheck, MarginSweep, SiameseData, TrainingConfig, TrainingLog,
};

/// Corruptions `synth` can plant so that curation has something to find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Corruption {
    pub exact_same_style: usize,
    pub exact_other_style: usize,
    pub scaled: usize,
    /// Items labeled with a furniture type other than the one their features show.
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationConfig {
    pub hamming_threshold: u32,
    /// Share of items dropped as type outliers; 0 disables the filter.
    pub outlier_fraction: f64,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    /// Outliers are scored by a classifier trained on the other folds.
    pub classifier_folds: usize,
    pub split: SplitRatios,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            hamming_threshold: 4,
            outlier_fraction: 0.05,
            classifier_epochs: 30,
            classifier_lr: 0.05,
            classifier_folds: 5,
            split: SplitRatios::default(),
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hamming_threshold > 64 {
            return Err(Error::Config(format!(
                "curation.hamming_threshold = {} exceeds 64",
                self.hamming_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config(format!(
                "curation.outlier_fraction = {} must be in [0, 1)",
                self.outlier_fraction
            )));
        }
        if !(self.classifier_lr > 0.0) {
            return Err(Error::Config("curation.classifier_lr must be positive".into()));
        }
        if self.classifier_folds < 2 {
            return Err(Error::Config("curation.classifier_folds must be >= 2".into()));
        }
        self.split.validate()
    }
}

/// Everything an experiment can configure, read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub synth: SynthSpec,
    pub corruption: Corruption,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub pairs: PairCounts,
    pub curation: CurationConfig,
    pub gradcheck: GradcheckConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Checks every section, whichever command will use it.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.training.validate()?;
        self.curation.validate()?;
        self.gradcheck.validate()?;
        if self.pairs.neg_ratio == 0 {
            return Err(Error::Config("pairs.neg_ratio must be >= 1".into()));
        }
        Ok(())
    }

    /// The run seed: `--seed` wins over the config file; one of them is required.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed)
            .ok_or_else(|| Error::Config("a seed is required (--seed N or `seed = N` in the config)".into()))
    }

    /// Model dimensions follow the dataset header.
    fn model_for(&self, ds: &Dataset) -> ModelConfig {
        ModelConfig {
            input_dim: ds.input_dim,
            num_styles: ds.num_styles,
            num_types: ds.num_types,
            text_vocab_size: ds.vocab_size.max(1),
            ..self.model.clone()
        }
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.ok_or_else(|| Error::Config("--out DIR is required for this command".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sample_pairs(cfg: &ExperimentConfig, items: &[ItemRecord], seed: u64) -> Result<PairsBySplit> {
    pairs_by_split(items, &cfg.pairs, SeedStream::new(seed).derive("sampling"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub items: usize,
    pub duplicates: usize,
    pub outliers: usize,
    pub files: Vec<PathBuf>,
}

/// Synthetic dataset plus its images, with any configured corruptions.
pub fn cmd_synth(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let spec = SynthSpec { seed, ..cfg.synth.clone() };
    let stream = SeedStream::new(seed);
    let mut synth = generate(&spec)?;
    let outliers = plant_outliers(&mut synth, &spec, cfg.corruption.outliers, stream.derive("outliers"));
    let mut ds = synth.dataset;
    let mut images = generate_images(&spec, &ds.items);
    let c = &cfg.corruption;
    let dups = inject_duplicates(
        &mut ds,
        &mut images,
        &[
            (DuplicateKind::ExactSameStyle, c.exact_same_style),
            (DuplicateKind::ExactOtherStyle, c.exact_other_style),
            (DuplicateKind::Scaled, c.scaled),
        ],
        stream.derive("duplicates"),
    )?;
    ds.validate()?;
    let ids: Vec<String> = ds.items.iter().map(|i| i.id.clone()).collect();
    let image_text = images_to_text(&ids, &images)?;

    create_dir(out)?;
    let (dpath, ipath) = (out.join("dataset.tsv"), out.join("images.tsv"));
    ds.write(&dpath)?;
    write_text(&ipath, &image_text)?;
    log::info!("wrote {} items to {}", ds.items.len(), dpath.display());
    Ok(SynthSummary {
        items: ds.items.len(),
        duplicates: dups.len(),
        outliers: outliers.len(),
        files: vec![dpath, ipath],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateSummary {
    pub kept: usize,
    pub duplicates_removed: usize,
    pub outliers_removed: usize,
    pub files: Vec<PathBuf>,
}

/// Near-duplicate removal, type-outlier filtering and a fresh stratified split.
pub fn cmd_curate(
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &Path,
    images: &Path,
    out: &Path,
) -> Result<CurateSummary> {
    cfg.validate()?;
    let ds = Dataset::read(dataset)?;
    let imgs = read_images(images)?;
    let by_id: std::collections::HashMap<&str, &crate::curation::Image> =
        imgs.iter().map(|(id, img)| (id.as_str(), img)).collect();
    let hashes = ds
        .items
        .iter()
        .map(|it| {
            let img = by_id
                .get(it.id.as_str())
                .ok_or_else(|| Error::Input(format!("{}: no image for item {}", images.display(), it.id)))?;
            phash(img)
        })
        .collect::<Result<Vec<_>>>()?;

    let stream = SeedStream::new(seed);
    let (deduped, mut log) = dedup(&ds.items, &hashes, cfg.curation.hamming_threshold)?;
    let duplicates_removed = log.len();
    let mut kept = deduped;
    if cfg.curation.outlier_fraction > 0.0 {
        let scores = out_of_fold_type_scores(
            &kept,
            ds.num_types,
            cfg.curation.classifier_folds,
            ClassifierTraining {
                epochs: cfg.curation.classifier_epochs,
                learning_rate: cfg.curation.classifier_lr,
                seed: stream.derive("curation/classifier"),
            },
        )?;
        let (k, olog) = select_outliers(&kept, &scores, cfg.curation.outlier_fraction)?;
        kept = k;
        log.extend(olog);
    }
    let outliers_removed = log.len() - duplicates_removed;
    let kept = split(&kept, cfg.curation.split, stream.derive("curation/split"))?;
    let cleaned = Dataset { items: kept, ..ds };
    cleaned.validate()?;

    create_dir(out)?;
    let (dpath, lpath) = (out.join("dataset.tsv"), out.join("removed.tsv"));
    cleaned.write(&dpath)?;
    write_text(&lpath, &removal_log_text(&log))?;
    Ok(CurateSummary {
        kept: cleaned.items.len(),
        duplicates_removed,
        outliers_removed,
        files: vec![dpath, lpath],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainTarget {
    Canonical,
    Short,
    Categorical,
    /// Joint visual-text embedding over a frozen visual base.
    Vte,
}

impl TrainTarget {
    fn variant(self) -> Option<Variant> {
        match self {
            TrainTarget::Canonical => Some(Variant::Canonical),
            TrainTarget::Short => Some(Variant::Short),
            TrainTarget::Categorical => Some(Variant::Categorical),
            TrainTarget::Vte => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
    pub files: Vec<PathBuf>,
}

/// Train a Siamese variant (writing the sampled pair files for reuse by
/// `eval`) or the visual-text embedding.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &Path,
    target: TrainTarget,
    base: Option<&Path>,
    out: &Path,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = Dataset::read(dataset)?;
    let training = TrainingConfig { seed, ..cfg.training.clone() };
    let base_ck = base.map(Checkpoint::load).transpose()?;
    let model = match &base_ck {
        Some(ck) => ck.config.clone(),
        None => cfg.model_for(&ds),
    };
    model.validate()?;
    if model.input_dim != ds.input_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match dataset input_dim {}",
            model.input_dim, ds.input_dim
        )));
    }
    let hyper = Hyper { model: &model, loss: &cfg.loss, training: &training };

    let mut files = Vec::new();
    let (checkpoint, log, pairs) = match target.variant() {
        Some(variant) => {
            if base.is_some() {
                return Err(Error::Config("--base only applies to --variant vte".into()));
            }
            let pairs = sample_pairs(cfg, &ds.items, seed)?;
            let (params, log) = train_siamese(variant, SiameseData::new(&ds.items, &pairs), hyper)?;
            let ck = Checkpoint {
                config: model.clone(),
                variant: Some(variant),
                margin: Some(cfg.loss.m_contrastive),
                params,
            };
            (ck, log, Some(pairs))
        }
        None => {
            let (frozen, variant, margin) = match base_ck {
                Some(ck) => (ck.params, ck.variant, ck.margin),
                None => (init_params(&model, &mut SeedStream::new(seed).rng("init"))?, None, None),
            };
            let before = param_digest(&frozen, is_base_param);
            let train = ds.in_split(Split::Train);
            let val = ds.in_split(Split::Val);
            let (params, log) = train_vte(&train, &val, hyper, &frozen)?;
            if param_digest(&params, is_base_param) != before {
                return Err(Error::Contract("visual base changed during joint training".into()));
            }
            let ck = Checkpoint { config: model.clone(), variant, margin, params };
            (ck, log, None)
        }
    };
    let ck_text = checkpoint.to_json()?;

    create_dir(out)?;
    let cpath = out.join("checkpoint.json");
    write_text(&cpath, &ck_text)?;
    files.push(cpath);
    let lpath = out.join("train_log.tsv");
    write_text(&lpath, &log.to_text())?;
    files.push(lpath);
    if let Some(p) = pairs {
        for split in Split::ALL {
            let path = out.join(format!("pairs_{}.tsv", split.as_str()));
            write_pairs(p.get(split), &path)?;
            files.push(path);
        }
    }
    Ok(TrainSummary { checkpoint, log, files })
}

/// Evaluate a checkpoint on a pair file. Retrieval recall uses the test split.
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    pairs: &Path,
    variant: Option<Variant>,
    out: Option<&Path>,
) -> Result<EvaluationReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = Dataset::read(dataset)?;
    let pairs = read_pairs(pairs)?;
    if pairs.is_empty() {
        return Err(Error::Input("pair file holds no pairs".into()));
    }
    let variant = variant.or(ck.variant).unwrap_or(Variant::Canonical);
    let mut query = ds.in_split(Split::Test);
    if query.is_empty() {
        query = ds.items.clone();
    }
    let report = evaluate_model(&ds.items, &pairs, &query, &ck.params, &ck.config, variant)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("report.txt"), &report.to_text())?;
        write_text(&dir.join("report.kv"), &report.to_kv())?;
        if let Some((pos, neg)) = report.kde_tables() {
            write_text(&dir.join("kde_pos.tsv"), &pos)?;
            write_text(&dir.join("kde_neg.tsv"), &neg)?;
        }
    }
    Ok(report)
}

/// One model per candidate margin; writes `margin_sweep.tsv`.
pub fn cmd_margin_sweep(
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &Path,
    candidates: &[f64],
    variant: Variant,
    out: Option<&Path>,
) -> Result<MarginSweep> {
    cfg.validate()?;
    let candidates =
        if candidates.is_empty() { cfg.training.margin_candidates.clone() } else { candidates.to_vec() };
    if candidates.is_empty() {
        return Err(Error::Config("no margin candidates given".into()));
    }
    if let Some(m) = candidates.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::Config(format!("margin candidate {m} must be positive")));
    }
    let ds = Dataset::read(dataset)?;
    let model = cfg.model_for(&ds);
    model.validate()?;
    let training = TrainingConfig { seed, ..cfg.training.clone() };
    let pairs = sample_pairs(cfg, &ds.items, seed)?;
    let (sweep, _) = cross_validate_margin(
        variant,
        SiameseData::new(&ds.items, &pairs),
        &candidates,
        Hyper { model: &model, loss: &cfg.loss, training: &training },
    )?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("margin_sweep.tsv"), &sweep.to_table())?;
    }
    Ok(sweep)
}

/// Items most compatible with `query_id`. With `text`, ranks the joint space
/// by `x_I + x_T`; otherwise searches the Siamese embedding space, optionally
/// skipping the query's own furniture type.
#[allow(clippy::too_many_arguments)]
pub fn cmd_retrieve(
    checkpoint: &Path,
    dataset: &Path,
    query_id: &str,
    k: usize,
    exclude_same_type: bool,
    text: Option<&[usize]>,
    out: Option<&Path>,
) -> Result<QueryResult> {
    if k == 0 {
        return Err(Error::Config("--k must be >= 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let ds = Dataset::read(dataset)?;
    let query = ds
        .items
        .iter()
        .find(|i| i.id == query_id)
        .ok_or_else(|| Error::Input(format!("query id {query_id:?} is not in {}", dataset.display())))?;
    if let Some(t) = text {
        check_tokens(t, &ck.config)?;
    }
    let others: Vec<ItemRecord> = ds.items.iter().filter(|i| i.id != query_id).cloned().collect();
    let (cfg, params) = (&ck.config, &ck.params);
    let (index, result) = match text {
        Some(tokens) => {
            let index = build_index(&others, |it| joint_visual(&it.features, params, cfg), Metric::Dot)?;
            let xi = joint_visual(&query.features, params, cfg)?;
            let xt = joint_text(tokens, params, cfg)?;
            let r = query_with_text(&index, &xi, &xt, k)?;
            (index, r)
        }
        None => {
            let variant = ck.variant.unwrap_or(Variant::Canonical);
            let index = build_index(
                &others,
                |it| embed_variant(&it.features, params, cfg, variant),
                Metric::Euclidean,
            )?;
            let q = embed_variant(&query.features, params, cfg, variant)?;
            let exclude = exclude_same_type.then_some(query.furniture_type);
            let r = query_compatible(&index, &q, k, exclude)?;
            (index, r)
        }
    };
    if result.truncated {
        log::warn!("only {} candidates for k = {k}", result.hits.len());
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("retrieval.tsv"), &result.to_text())?;
        save_index(&index, &dir.join("index.json"))?;
    }
    Ok(result)
}

pub fn gradcheck_table(checks: &[LossGradCheck]) -> String {
    let mut s = String::from("loss\tmax_rel_error\tchecked\tskipped_kinks\tpass\n");
    for c in checks {
        let _ = writeln!(
            s,
            "{}\t{:e}\t{}\t{}\t{}",
            c.loss,
            c.report.max_rel_error,
            c.report.checked,
            c.report.skipped_kinks,
            c.report.within_tolerance
        );
    }
    s
}

/// Finite-difference check of all three losses on a small random model.
pub fn cmd_gradcheck(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<Vec<LossGradCheck>> {
    cfg.gradcheck.validate()?;
    let checks = loss_gradient_checks(&cfg.gradcheck, seed)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("gradcheck.tsv"), &gradcheck_table(&checks))?;
    }
    Ok(checks)
}

#[derive(Debug, Parser)]
#[command(name = "stylecompat", version, about = "Style-compatibility metric learning toolkit")]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its images.
    Synth,
    /// Remove near-duplicates and type outliers, then re-split.
    Curate { dataset: PathBuf, images: PathBuf },
    /// Train a model and write a checkpoint, log and pair files.
    Train {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "canonical")]
        variant: TrainTarget,
        /// Checkpoint whose visual base stays frozen (vte only).
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a pair file.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        pairs: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Cross-validate the contrastive margin.
    MarginSweep {
        dataset: PathBuf,
        /// Comma-separated margins; defaults to training.margin_candidates.
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<f64>,
        #[arg(long, default_value = "canonical")]
        variant: Variant,
    },
    /// Rank the items most compatible with a query item.
    Retrieve {
        checkpoint: PathBuf,
        dataset: PathBuf,
        query: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Skip items of the query's furniture type (image-only queries).
        #[arg(long)]
        exclude_same_type: bool,
        /// Comma-separated token ids for a text-constrained query.
        #[arg(long, value_delimiter = ',')]
        text: Option<Vec<usize>>,
    },
    /// Check every loss's gradients against finite differences.
    Gradcheck,
}

/// Run a parsed command; returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth => {
            let seed = cfg.resolve_seed(cli.seed)?;
            let s = cmd_synth(&cfg, seed, require_out(out)?)?;
            Ok(format!("items\t{}\nduplicates\t{}\noutliers\t{}\n", s.items, s.duplicates, s.outliers))
        }
        Command::Curate { dataset, images } => {
            let seed = cfg.resolve_seed(cli.seed)?;
            let s = cmd_curate(&cfg, seed, dataset, images, require_out(out)?)?;
            Ok(format!(
                "kept\t{}\nduplicates_removed\t{}\noutliers_removed\t{}\n",
                s.kept, s.duplicates_removed, s.outliers_removed
            ))
        }
        Command::Train { dataset, variant, base } => {
            let seed = cfg.resolve_seed(cli.seed)?;
            let s = cmd_train(&cfg, seed, dataset, *variant, base.as_deref(), require_out(out)?)?;
            Ok(s.log.to_text())
        }
        Command::Eval { checkpoint, dataset, pairs, variant } => {
            Ok(cmd_eval(checkpoint, dataset, pairs, *variant, out)?.to_text())
        }
        Command::MarginSweep { dataset, candidates, variant } => {
            let seed = cfg.resolve_seed(cli.seed)?;
            let s = cmd_margin_sweep(&cfg, seed, dataset, candidates, *variant, out)?;
            Ok(format!("{}best\t{}\n", s.to_table(), s.best))
        }
        Command::Retrieve { checkpoint, dataset, query, k, exclude_same_type, text } => {
            Ok(cmd_retrieve(checkpoint, dataset, query, *k, *exclude_same_type, text.as_deref(), out)?
                .to_text())
        }
        Command::Gradcheck => {
            let seed = cfg.resolve_seed(cli.seed)?;
            let checks = cmd_gradcheck(&cfg, seed, out)?;
            let table = gradcheck_table(&checks);
            if let Some(bad) = checks.iter().find(|c| !c.report.within_tolerance) {
                print!("{table}");
                return Err(Error::Numerics(format!(
                    "{} gradient error {:e} exceeds tolerance {:e}",
                    bad.loss, bad.report.max_rel_error, cfg.gradcheck.tolerance
                )));
            }
            Ok(table)
        }
    }
}

/// Parse arguments, run, print; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_sections_and_rejects_unknown_fields() {
        let text = "seed = 3\n[model]\nembedding_dim = 8\n[training]\nepochs = 2\n";
        let c = ExperimentConfig::parse(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.model.embedding_dim, 8);
        assert_eq!(c.training.epochs, 2);
        match ExperimentConfig::parse("[training]\nepoch = 2\n", Path::new("c.toml")) {
            Err(Error::Config(m)) => assert!(m.contains("epoch"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_is_mandatory() {
        let c = ExperimentConfig::default();
        assert!(matches!(c.resolve_seed(None), Err(Error::Config(_))));
        assert_eq!(c.resolve_seed(Some(4)).unwrap(), 4);
        let c = ExperimentConfig { seed: Some(9), ..Default::default() };
        assert_eq!(c.resolve_seed(None).unwrap(), 9);
        assert_eq!(c.resolve_seed(Some(1)).unwrap(), 1);
    }

    #[test]
    fn invalid_sections_fail_validation() {
        let mut c = ExperimentConfig::default();
        c.curation.outlier_fraction = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.training.momentum = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["stylecompat", "no-such-command"]), 1);
        assert_eq!(main_with_args(["stylecompat", "synth"]), 1);
        assert_eq!(main_with_args(["stylecompat", "--help"]), 0);
    }
}
