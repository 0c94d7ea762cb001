//! Experiment grid: model variants × methods × shot sizes × sets × seeds.
//!
//! Every cell writes into its own directory and is skipped when its
//! `metrics.json` already exists, so an interrupted grid resumes where it
//! stopped. `results.csv` is rebuilt from all cells in grid order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    apply_schema, build_fewshot_bundles, build_samples, read_jsonl_file, validate_corpus, write_fewshot_tree,
    ContextMode, FewShotBundle, FewShotTree, LabelSchema, Paragraph, Sample, DEFAULT_SEP,
};
use crate::eval::{aggregate_runs, MetricsReport, RunMetadata};
use crate::model::{train_mlm, EncoderConfig, HeadConfig, ModelCheckpoint, TrainConfig};
use crate::pet::{run_pet, run_sc, run_zero_shot, PetConfig};
use crate::pretrain::{
    build_vocabulary, load_raw_documents, preprocess_raw, run_pretrain_plan, training_texts, LabFilter, PretrainPlan,
};
use crate::prompting::Verbalizer;
use crate::synth::{general_texts, generate, GeneratorSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMethod {
    Pet,
    Sc,
    ZeroShot,
}

impl GridMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            GridMethod::Pet => "pet",
            GridMethod::Sc => "sc",
            GridMethod::ZeroShot => "zero_shot",
        }
    }
}

/// One JSON document describing a full experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Labeled training paragraphs (JSONL); ignored when `synthetic` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// Generate the corpus instead of reading it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<GeneratorSpec>,
    pub schema: LabelSchema,
    pub context_mode: ContextMode,
    pub shot_sizes: Vec<usize>,
    pub n_sets: usize,
    pub fewshot_seed: u64,
    pub seeds: Vec<u64>,
    pub model: EncoderConfig,
    pub vocab_size: usize,
    /// Raw pretraining corpora by id (file or directory); `task` is always the training split.
    pub corpora: BTreeMap<String, PathBuf>,
    /// MLM training of the base model on the `public` corpus, when one is available.
    pub base_pretrain: TrainConfig,
    pub variants: Vec<PretrainPlan>,
    pub methods: Vec<GridMethod>,
    pub pet: PetConfig,
    pub sc: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_holdout: Option<usize>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            test_path: None,
            synthetic: None,
            schema: LabelSchema::default(),
            context_mode: ContextMode::NoContext,
            shot_sizes: vec![20],
            n_sets: 3,
            fewshot_seed: 42,
            seeds: vec![1, 2],
            model: EncoderConfig::default(),
            vocab_size: 2000,
            corpora: BTreeMap::new(),
            base_pretrain: TrainConfig::default(),
            variants: vec![PretrainPlan::public()],
            methods: vec![GridMethod::Pet, GridMethod::Sc],
            pet: PetConfig::default(),
            sc: TrainConfig::default(),
            max_holdout: None,
            output: PathBuf::from("grid"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.synthetic.is_none() && (self.train_path.is_none() || self.test_path.is_none()) {
            return bad("set train_path and test_path, or synthetic");
        }
        if self.shot_sizes.is_empty() || self.shot_sizes.contains(&0) || self.n_sets == 0 {
            return bad("shot_sizes and n_sets must be positive");
        }
        if self.variants.is_empty() || self.methods.is_empty() {
            return bad("need at least one variant and one method");
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant names must be unique");
        }
        for v in &self.variants {
            v.validate()?;
        }
        self.model.validate()?;
        self.pet.validate()?;
        self.sc.validate()?;
        Ok(())
    }

    /// Resolve relative paths against `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.train_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.test_path.as_mut() {
            fix(p);
        }
        for p in self.corpora.values_mut() {
            fix(p);
        }
        fix(&mut self.output);
    }
}

/// Labeled train/test paragraphs after schema application.
#[derive(Debug, Clone)]
pub struct Splits {
    pub classes: Vec<String>,
    pub train: Vec<Paragraph>,
    pub test: Vec<Paragraph>,
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let (train, test, schema) = match &cfg.synthetic {
        Some(spec) => {
            let c = generate(spec)?;
            (c.train, c.test, spec.schema())
        }
        None => {
            let train = read_jsonl_file(cfg.train_path.as_ref().expect("validated"))?;
            let test = read_jsonl_file(cfg.test_path.as_ref().expect("validated"))?;
            (train, test, cfg.schema.clone())
        }
    };
    validate_corpus(&train)?;
    validate_corpus(&test)?;
    Ok(Splits {
        classes: schema.classes.clone(),
        train: apply_schema(&train, &schema)?,
        test: apply_schema(&test, &schema)?,
    })
}

/// Every ablation-free ingredient a cell needs.
pub struct Prepared {
    pub splits: Splits,
    pub train_samples: Vec<Sample>,
    pub holdout: Vec<Sample>,
    pub tree: FewShotTree,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let splits = load_splits(cfg)?;
    let train_samples = build_samples(&splits.train, cfg.context_mode, DEFAULT_SEP);
    let mut holdout = build_samples(&splits.test, cfg.context_mode, DEFAULT_SEP);
    if let Some(cap) = cfg.max_holdout {
        holdout.truncate(cap);
    }
    let tree = build_fewshot_bundles(&train_samples, &cfg.shot_sizes, cfg.n_sets, cfg.fewshot_seed)?;
    Ok(Prepared {
        splits,
        train_samples,
        holdout,
        tree,
    })
}

/// Pretraining corpora by id: configured raw corpora, a synthetic `public` corpus
/// when none is configured, and `task` (the training paragraphs).
pub fn load_corpora(cfg: &ExperimentConfig, splits: &Splits) -> Result<BTreeMap<String, Vec<String>>> {
    let mut corpora = BTreeMap::new();
    for (id, path) in &cfg.corpora {
        let docs = load_raw_documents(path)?;
        corpora.insert(
            id.clone(),
            training_texts(&preprocess_raw(&docs, &LabFilter::default())),
        );
    }
    if !corpora.contains_key("public") {
        if let Some(spec) = &cfg.synthetic {
            corpora.insert("public".into(), general_texts(spec, splits.train.len(), spec.seed));
        }
    }
    corpora.insert("task".into(), splits.train.iter().map(|p| p.text.clone()).collect());
    Ok(corpora)
}

/// Base model: fresh weights over a vocabulary of all known text, MLM-trained on
/// the `public` corpus when there is one.
pub fn build_base_model(cfg: &ExperimentConfig, corpora: &BTreeMap<String, Vec<String>>) -> Result<ModelCheckpoint> {
    let vocab = build_vocabulary(corpora.values().flatten().map(String::as_str), cfg.vocab_size)?;
    let base = ModelCheckpoint::new(cfg.model.clone(), HeadConfig::default(), vocab)?;
    match corpora.get("public") {
        Some(texts) if !texts.is_empty() => Ok(train_mlm(&base, texts, &cfg.base_pretrain)?.0),
        _ => Ok(base),
    }
}

/// Base model plus one model per variant, cached as `models_dir/<name>/checkpoint`.
///
/// Cached checkpoints are loaded instead of retrained. Freshly trained variants
/// also get a `heldout.json` with the held-out MLM loss before and after each stage.
pub fn pretrain_models(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    models_dir: &Path,
) -> Result<(ModelCheckpoint, Vec<ModelCheckpoint>)> {
    let corpora = load_corpora(cfg, &prepared.splits)?;
    let base_path = models_dir.join("base").join("checkpoint");
    let base = if base_path.exists() {
        ModelCheckpoint::load(&base_path)?
    } else {
        let b = build_base_model(cfg, &corpora)?;
        b.save(&base_path)?;
        b
    };
    let heldout: Vec<String> = prepared.splits.test.iter().map(|p| p.text.clone()).collect();
    let mut models = Vec::with_capacity(cfg.variants.len());
    for plan in &cfg.variants {
        let dir = models_dir.join(&plan.name);
        let path = dir.join("checkpoint");
        let m = if path.exists() {
            ModelCheckpoint::load(&path)?
        } else {
            let out = run_pretrain_plan(&base, plan, &corpora, Some(&heldout), Some(&dir))?;
            let losses = serde_json::json!({
                "base": out.base_heldout_loss,
                "stages": out.stages.iter().map(|s| serde_json::json!({
                    "corpus": s.corpus,
                    "heldout_loss": s.heldout_loss,
                    "epoch_losses": s.history.epoch_losses,
                })).collect::<Vec<_>>(),
            });
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("heldout.json"), serde_json::to_string_pretty(&losses)? + "\n")?;
            out.checkpoint.save(&path)?;
            out.checkpoint
        };
        models.push(m);
    }
    Ok((base, models))
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_variant: String,
    pub method: String,
    pub shot_size: usize,
    pub set: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    variant: usize,
    method: GridMethod,
    shot_size: usize,
    set: usize,
    seed: u64,
}

impl CellKey {
    fn dir(&self, root: &Path, variant: &str) -> PathBuf {
        let base = root.join("cells").join(variant).join(self.method.as_str());
        match self.method {
            GridMethod::ZeroShot => base,
            _ => base
                .join(format!("{}shots", self.shot_size))
                .join(format!("set_{}", self.set))
                .join(format!("seed_{}", self.seed)),
        }
    }
}

fn cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for variant in 0..cfg.variants.len() {
        for &method in &cfg.methods {
            if method == GridMethod::ZeroShot {
                out.push(CellKey {
                    variant,
                    method,
                    shot_size: 0,
                    set: 0,
                    seed: 0,
                });
                continue;
            }
            for &shot_size in &cfg.shot_sizes {
                for set in 1..=cfg.n_sets {
                    for &seed in &cfg.seeds {
                        out.push(CellKey {
                            variant,
                            method,
                            shot_size,
                            set,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

fn with_seed(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..train.clone() }
}

fn run_cell(
    cfg: &ExperimentConfig,
    key: &CellKey,
    model: &ModelCheckpoint,
    prepared: &Prepared,
    dir: &Path,
) -> Result<MetricsReport> {
    let classes = &prepared.splits.classes;
    let variant = cfg.variants[key.variant].name.clone();
    let bundle = |k: &CellKey| -> Result<&FewShotBundle> {
        prepared
            .tree
            .bundle(k.shot_size, k.set)
            .ok_or_else(|| Error::Config(format!("no bundle for {} shots set {}", k.shot_size, k.set)))
    };
    std::fs::create_dir_all(dir)?;
    let report = match key.method {
        GridMethod::Pet => {
            let pet = PetConfig {
                train: with_seed(&cfg.pet.train, key.seed),
                distill: Some(with_seed(&cfg.pet.distill_config(), key.seed)),
                ..cfg.pet.clone()
            };
            run_pet(model, bundle(key)?, &prepared.holdout, classes, &pet, Some(dir))?.metrics
        }
        GridMethod::Sc => {
            let (_, report) = run_sc(
                model,
                &bundle(key)?.labeled,
                &prepared.holdout,
                classes,
                &with_seed(&cfg.sc, key.seed),
            )?;
            report
        }
        GridMethod::ZeroShot => {
            let verbalizer = match (cfg.pet.manual(classes, &model.vocab)?, &cfg.synthetic) {
                (Some(v), _) => v,
                (None, Some(spec)) => Verbalizer::parse(&spec.cue_verbalizer_text(), &model.vocab)?,
                (None, None) => return Err(Error::Config("zero_shot needs pet.manual_verbalizer".into())),
            };
            run_zero_shot(model, &verbalizer, &cfg.pet.templates[0], &prepared.holdout, classes)?
        }
    };
    let report = report.with_metadata(RunMetadata {
        seed: Some(key.seed),
        set_id: Some(key.set),
        shot_size: Some(key.shot_size),
        method: Some(key.method.as_str().into()),
        model_variant: Some(variant),
    });
    let tmp = dir.join("metrics.json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&report)? + "\n")?;
    std::fs::rename(tmp, dir.join("metrics.json"))?;
    Ok(report)
}

/// Outcome of [`run_grid`].
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub rows: Vec<ResultRow>,
    pub reports: Vec<MetricsReport>,
    /// Cells computed in this invocation (the rest were resumed from disk).
    pub computed: usize,
}

/// Run (or resume) the whole grid with up to `jobs` cells in parallel.
pub fn run_grid(cfg: &ExperimentConfig, jobs: usize) -> Result<GridOutcome> {
    cfg.validate()?;
    let root = &cfg.output;
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    let prepared = prepare(cfg)?;
    write_fewshot_tree(&root.join("fewshot"), &prepared.tree, &prepared.holdout)?;

    let (_, models) = pretrain_models(cfg, &prepared, &root.join("models"))?;

    let keys = cells(cfg);
    let mut reports: Vec<Option<MetricsReport>> = vec![None; keys.len()];
    let mut todo = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        let dir = key.dir(root, &cfg.variants[key.variant].name);
        let done = dir.join("metrics.json");
        if done.exists() {
            reports[i] = Some(serde_json::from_str(&std::fs::read_to_string(done)?)?);
        } else {
            todo.push((i, dir));
        }
    }
    let computed = todo.len();
    log::info!(
        "event=grid cells={} cached={} jobs={}",
        keys.len(),
        keys.len() - computed,
        jobs.max(1)
    );
    let results: Vec<(usize, Result<MetricsReport>)> = if jobs <= 1 {
        todo.iter()
            .map(|(i, dir)| (*i, run_cell(cfg, &keys[*i], &models[keys[*i].variant], &prepared, dir)))
            .collect()
    } else {
        let queue = std::sync::Mutex::new(todo.iter());
        let collected = std::sync::Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..jobs.min(todo.len().max(1)) {
                s.spawn(|| loop {
                    let next = queue.lock().expect("queue lock").next();
                    let Some((i, dir)) = next else { break };
                    let r = run_cell(cfg, &keys[*i], &models[keys[*i].variant], &prepared, dir);
                    collected.lock().expect("results lock").push((*i, r));
                });
            }
        });
        collected.into_inner().expect("results lock")
    };
    for (i, r) in results {
        reports[i] = Some(r?);
    }
    let reports: Vec<MetricsReport> = reports.into_iter().map(|r| r.expect("every cell resolved")).collect();
    let rows: Vec<ResultRow> = keys
        .iter()
        .zip(&reports)
        .map(|(k, r)| ResultRow {
            model_variant: cfg.variants[k.variant].name.clone(),
            method: k.method.as_str().into(),
            shot_size: k.shot_size,
            set: k.set,
            seed: k.seed,
            accuracy: r.accuracy,
        })
        .collect();
    write_results(&root.join("results.csv"), &rows)?;
    write_summary(&root.join("summary.csv"), &keys, &reports, cfg)?;
    Ok(GridOutcome {
        rows,
        reports,
        computed,
    })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model_variant", "method", "shot_size", "set", "seed", "accuracy"])?;
    for r in rows {
        w.write_record([
            r.model_variant.clone(),
            r.method.clone(),
            r.shot_size.to_string(),
            r.set.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and population std of accuracy per (variant, method, shot size).
fn write_summary(path: &Path, keys: &[CellKey], reports: &[MetricsReport], cfg: &ExperimentConfig) -> Result<()> {
    let mut groups: BTreeMap<(usize, GridMethod, usize), Vec<MetricsReport>> = BTreeMap::new();
    for (k, r) in keys.iter().zip(reports) {
        groups
            .entry((k.variant, k.method, k.shot_size))
            .or_default()
            .push(r.clone());
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model_variant",
        "method",
        "shot_size",
        "n_runs",
        "accuracy_mean",
        "accuracy_std",
    ])?;
    for ((v, m, n), rs) in groups {
        let (mean, std) = if rs.len() >= 2 {
            let s = aggregate_runs(&rs)?;
            (s.accuracy.mean, s.accuracy.std)
        } else {
            (rs[0].accuracy, 0.0)
        };
        w.write_record([
            cfg.variants[v].name.clone(),
            m.as_str().to_string(),
            n.to_string(),
            rs.len().to_string(),
            format!("{mean:.6}"),
            format!("{std:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
