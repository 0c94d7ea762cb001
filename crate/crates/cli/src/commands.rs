use std::fs;
use std::path::Path;

use cloze_pet::corpus::{write_fewshot_tree, ContextMode, FewShotBundle, Sample};
use cloze_pet::eval::{
    approx_randomization_test, compute_metrics, Metric, MetricsReport, RunMetadata, SIGNIFICANCE_LEVEL,
};
use cloze_pet::experiment::{prepare, pretrain_models, run_grid, ExperimentConfig, Prepared};
use cloze_pet::explain::{
    context_contribution_ratio, group_text, render_report, shapley_exact, shapley_sampled, write_jsonl,
    AttributionReport, ReportFormat,
};
use cloze_pet::model::{classify, ModelCheckpoint};
use cloze_pet::pet::{predict_classes, run_pet, run_sc, zero_shot_predict, PetConfig};
use cloze_pet::prompting::{builtin_templates, PatternTemplate, Verbalizer};
use cloze_pet::synth::{generate, write_synth, GeneratorSpec};
use cloze_pet::util::argmax;
use cloze_pet::{Error, Result};
use serde_json::json;

use crate::output::{claim_output, read_predictions, write_json, write_predictions};
use crate::{
    Command, ContextArg, ExpArgs, ExplainArgs, GenerateArgs, GridArgs, MetricArg, ModelArgs, SignificanceArgs,
    TemplateGroup, TrainArgs, TrainScArgs, ZeroShotArgs,
};

// Above this many groups the explainer switches from enumeration to sampling.
const EXACT_GROUP_LIMIT: usize = 10;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::TrainPet(a) => cmd_train_pet(a),
        Command::TrainSc(a) => cmd_train_sc(a),
        Command::ZeroShot(a) => cmd_zero_shot(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Significance(a) => cmd_significance(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn template_group(group: TemplateGroup) -> Vec<PatternTemplate> {
    let builtin = builtin_templates();
    match group {
        TemplateGroup::Core => builtin.core,
        TemplateGroup::Null => builtin.null,
        TemplateGroup::All => {
            let mut all = builtin.core;
            for t in builtin.null {
                if all.iter().all(|c| c.name() != t.name()) {
                    all.push(t);
                }
            }
            all
        }
    }
}

fn load_experiment(
    config: Option<&Path>,
    seed: Option<u64>,
    context: Option<ContextArg>,
    templates: Option<TemplateGroup>,
    shots: &[usize],
) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(path) => {
            let mut cfg: ExperimentConfig = read_json(path)?;
            cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => ExperimentConfig {
            synthetic: Some(GeneratorSpec::default()),
            ..ExperimentConfig::default()
        },
    };
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(c) = context {
        cfg.context_mode = c.into();
    }
    if let Some(g) = templates {
        cfg.pet.templates = template_group(g);
    }
    if !shots.is_empty() {
        cfg.shot_sizes = shots.to_vec();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(a: &ExpArgs) -> Result<ExperimentConfig> {
    load_experiment(a.config.as_deref(), a.seed, a.context, a.templates, &a.shots)
}

fn load_model(path: &Path) -> Result<ModelCheckpoint> {
    if !path.is_file() {
        return Err(Error::Config(format!("model checkpoint {} not found", path.display())));
    }
    Ok(ModelCheckpoint::load(path)?)
}

fn single_shot_size(cfg: &ExperimentConfig) -> Result<usize> {
    match cfg.shot_sizes.as_slice() {
        [n] => Ok(*n),
        _ => Err(Error::Config(
            "this command trains one shot size; pass --shots N".into(),
        )),
    }
}

fn bundle<'a>(prepared: &'a Prepared, shot_size: usize, set: usize) -> Result<&'a FewShotBundle> {
    prepared
        .tree
        .bundle(shot_size, set)
        .ok_or_else(|| Error::Config(format!("no few-shot set {set} for {shot_size} shots")))
}

fn metrics_of(samples: &[Sample], classes: &[String], pred: &[usize]) -> Result<MetricsReport> {
    let gold: Vec<&str> = samples.iter().map(|s| s.label().unwrap_or_default()).collect();
    let pred: Vec<&str> = pred.iter().map(|&p| classes[p].as_str()).collect();
    Ok(compute_metrics(&gold, &pred, classes)?)
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut spec: GeneratorSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    claim_output(&a.out, &json!({"command": "generate", "spec": spec}), a.force)?;
    let corpus = generate(&spec)?;
    write_synth(&a.out, &spec, &corpus)?;
    log::info!(
        "event=generate out={} train={} test={}",
        a.out.display(),
        corpus.train.len(),
        corpus.test.len()
    );
    Ok(())
}

fn cmd_prepare(a: ExpArgs) -> Result<()> {
    let cfg = experiment(&a)?;
    claim_output(&a.out, &json!({"command": "prepare", "config": cfg}), a.force)?;
    let prepared = prepare(&cfg)?;
    for w in &prepared.tree.warnings {
        log::warn!("event=fewshot_warning {w}");
    }
    write_fewshot_tree(&a.out, &prepared.tree, &prepared.holdout)?;
    fs::write(a.out.join("classes.txt"), prepared.splits.classes.join("\n") + "\n")?;
    log::info!(
        "event=prepare out={} bundles={} holdout={}",
        a.out.display(),
        prepared.tree.bundles.len(),
        prepared.holdout.len()
    );
    Ok(())
}

fn cmd_pretrain(a: ExpArgs) -> Result<()> {
    let cfg = experiment(&a)?;
    claim_output(&a.out, &json!({"command": "pretrain", "config": cfg}), a.force)?;
    let prepared = prepare(&cfg)?;
    let (_, models) = pretrain_models(&cfg, &prepared, &a.out)?;
    log::info!("event=pretrain out={} variants={}", a.out.display(), models.len());
    Ok(())
}

fn cmd_train_pet(a: TrainArgs) -> Result<()> {
    let cfg = experiment(&a.exp)?;
    let shots = single_shot_size(&cfg)?;
    let seed = cfg.seeds[0];
    let echo = json!({"command": "train-pet", "config": cfg, "model": a.model, "set": a.set});
    let base = load_model(&a.model)?;
    claim_output(&a.exp.out, &echo, a.exp.force)?;
    let prepared = prepare(&cfg)?;
    let pet = PetConfig {
        train: cloze_pet::model::TrainConfig {
            seed,
            ..cfg.pet.train.clone()
        },
        distill: Some(cloze_pet::model::TrainConfig {
            seed,
            ..cfg.pet.distill_config()
        }),
        ..cfg.pet.clone()
    };
    let classes = &prepared.splits.classes;
    let outcome = run_pet(
        &base,
        bundle(&prepared, shots, a.set)?,
        &prepared.holdout,
        classes,
        &pet,
        Some(&a.exp.out),
    )?;
    let pred = predict_classes(&outcome.checkpoint, &prepared.holdout)?;
    write_predictions(&a.exp.out.join("predictions.csv"), &prepared.holdout, classes, &pred)?;
    println!(
        "accuracy={:.4} macro_f1={:.4}",
        outcome.metrics.accuracy, outcome.metrics.macro_f1
    );
    Ok(())
}

fn cmd_train_sc(a: TrainScArgs) -> Result<()> {
    let t = a.train;
    let cfg = experiment(&t.exp)?;
    let seed = cfg.seeds[0];
    let shots = if a.full { 0 } else { single_shot_size(&cfg)? };
    let echo = json!({"command": "train-sc", "config": cfg, "model": t.model, "set": t.set, "full": a.full});
    let base = load_model(&t.model)?;
    claim_output(&t.exp.out, &echo, t.exp.force)?;
    let prepared = prepare(&cfg)?;
    let labeled: &[Sample] = if a.full {
        &prepared.train_samples
    } else {
        &bundle(&prepared, shots, t.set)?.labeled
    };
    let classes = &prepared.splits.classes;
    let train = cloze_pet::model::TrainConfig { seed, ..cfg.sc.clone() };
    let (ckpt, report) = run_sc(&base, labeled, &prepared.holdout, classes, &train)?;
    let report = report.with_metadata(RunMetadata {
        seed: Some(seed),
        set_id: (!a.full).then_some(t.set),
        shot_size: (!a.full).then_some(shots),
        method: Some(if a.full { "full_sc" } else { "sc" }.into()),
        model_variant: None,
    });
    ckpt.save(t.exp.out.join("checkpoint"))?;
    write_json(&t.exp.out.join("metrics.json"), &report)?;
    let pred = predict_classes(&ckpt, &prepared.holdout)?;
    write_predictions(&t.exp.out.join("predictions.csv"), &prepared.holdout, classes, &pred)?;
    println!("accuracy={:.4} macro_f1={:.4}", report.accuracy, report.macro_f1);
    Ok(())
}

fn resolve_verbalizer(
    path: Option<&Path>,
    cfg: &ExperimentConfig,
    classes: &[String],
    model: &ModelCheckpoint,
) -> Result<Verbalizer> {
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        return Ok(Verbalizer::parse(&text, &model.vocab)?);
    }
    if let Some(v) = cfg.pet.manual(classes, &model.vocab)? {
        return Ok(v);
    }
    match &cfg.synthetic {
        Some(spec) => Ok(Verbalizer::parse(&spec.cue_verbalizer_text(), &model.vocab)?),
        None => Err(Error::Config(
            "zero-shot needs --verbalizer or pet.manual_verbalizer".into(),
        )),
    }
}

fn cmd_zero_shot(a: ZeroShotArgs) -> Result<()> {
    let m = a.model;
    let cfg = experiment(&m.exp)?;
    let template = match &a.template {
        Some(name) => cfg
            .pet
            .templates
            .iter()
            .chain(&builtin_templates().null)
            .find(|t| t.name() == name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown template {name:?}")))?,
        None => cfg.pet.templates[0].clone(),
    };
    let verbalizer_text = a
        .verbalizer
        .as_ref()
        .map(|p| fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display()))))
        .transpose()?;
    let echo = json!({
        "command": "zero-shot",
        "config": cfg,
        "model": m.model,
        "template": template.name(),
        "verbalizer": verbalizer_text,
    });
    let model = load_model(&m.model)?;
    claim_output(&m.exp.out, &echo, m.exp.force)?;
    let prepared = prepare(&cfg)?;
    let classes = &prepared.splits.classes;
    let verbalizer =
        resolve_verbalizer(a.verbalizer.as_deref(), &cfg, classes, &model)?.ordered_for(classes, &model.vocab)?;
    let pred = zero_shot_predict(&model, &verbalizer, &template, &prepared.holdout)?;
    let report = metrics_of(&prepared.holdout, classes, &pred)?.with_metadata(RunMetadata {
        method: Some("zero_shot".into()),
        ..RunMetadata::default()
    });
    fs::write(m.exp.out.join("verbalizer.txt"), verbalizer.to_text())?;
    write_json(&m.exp.out.join("metrics.json"), &report)?;
    write_predictions(&m.exp.out.join("predictions.csv"), &prepared.holdout, classes, &pred)?;
    println!("accuracy={:.4} macro_f1={:.4}", report.accuracy, report.macro_f1);
    Ok(())
}

fn classifier_for(path: &Path, classes: &[String]) -> Result<ModelCheckpoint> {
    let model = load_model(path)?;
    match model.heads().classifier {
        Some(k) if k == classes.len() => Ok(model),
        Some(k) => Err(Error::Config(format!(
            "checkpoint has a {k}-way classifier but the schema has {} classes",
            classes.len()
        ))),
        None => Err(Error::Config("checkpoint has no classification head".into())),
    }
}

fn cmd_eval(a: ModelArgs) -> Result<()> {
    let cfg = experiment(&a.exp)?;
    let echo = json!({"command": "eval", "config": cfg, "model": a.model});
    claim_output(&a.exp.out, &echo, a.exp.force)?;
    let prepared = prepare(&cfg)?;
    let classes = &prepared.splits.classes;
    let model = classifier_for(&a.model, classes)?;
    let pred = predict_classes(&model, &prepared.holdout)?;
    let report = metrics_of(&prepared.holdout, classes, &pred)?;
    write_json(&a.exp.out.join("metrics.json"), &report)?;
    write_predictions(&a.exp.out.join("predictions.csv"), &prepared.holdout, classes, &pred)?;
    println!("accuracy={:.4} macro_f1={:.4}", report.accuracy, report.macro_f1);
    Ok(())
}

fn cmd_significance(a: SignificanceArgs) -> Result<()> {
    let rows_a = read_predictions(&a.a)?;
    let rows_b = read_predictions(&a.b)?;
    if rows_a.len() != rows_b.len() {
        return Err(cloze_pet::eval::EvalError::LengthMismatch(rows_a.len(), rows_b.len()).into());
    }
    let by_id: std::collections::HashMap<&str, &crate::output::PredictionRow> =
        rows_b.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut classes: Vec<String> = Vec::new();
    let mut gold = Vec::with_capacity(rows_a.len());
    let mut pred_a = Vec::with_capacity(rows_a.len());
    let mut pred_b = Vec::with_capacity(rows_a.len());
    let mut index = |label: &str| match classes.iter().position(|c| c == label) {
        Some(i) => i,
        None => {
            classes.push(label.to_string());
            classes.len() - 1
        }
    };
    for r in &rows_a {
        let other = by_id.get(r.id.as_str()).ok_or_else(|| {
            Error::Eval(cloze_pet::eval::EvalError::InvalidArgument(format!(
                "sample {} missing from --b",
                r.id
            )))
        })?;
        if other.gold != r.gold {
            return Err(Error::Eval(cloze_pet::eval::EvalError::InvalidArgument(format!(
                "gold labels of sample {} differ",
                r.id
            ))));
        }
        gold.push(index(&r.gold));
        pred_a.push(index(&r.predicted));
        pred_b.push(index(&other.predicted));
    }
    let metric = match a.metric {
        MetricArg::Accuracy => Metric::Accuracy,
        MetricArg::F1 => {
            let name = a
                .class
                .as_deref()
                .ok_or_else(|| Error::Config("--metric f1 needs --class".into()))?;
            Metric::F1(
                classes
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Config(format!("class {name:?} does not occur in the predictions")))?,
            )
        }
    };
    let echo = json!({
        "command": "significance",
        "a": a.a,
        "b": a.b,
        "metric": metric,
        "class": a.class,
        "rounds": a.rounds,
        "seed": a.seed,
    });
    claim_output(&a.out, &echo, a.force)?;
    let p = approx_randomization_test(&gold, &pred_a, &pred_b, metric, a.rounds, a.seed)?;
    let score = |pred: &[usize]| -> f64 {
        match metric {
            Metric::Accuracy => gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64,
            Metric::F1(c) => {
                let tp = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p == c).count() as f64;
                let fp = gold.iter().zip(pred).filter(|&(&g, &p)| g != c && p == c).count() as f64;
                let fneg = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p != c).count() as f64;
                if tp + fp + fneg == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (2.0 * tp + fp + fneg)
                }
            }
        }
    };
    let result = json!({
        "n": gold.len(),
        "score_a": score(&pred_a),
        "score_b": score(&pred_b),
        "p_value": p,
        "significant": p < SIGNIFICANCE_LEVEL,
    });
    write_json(&a.out.join("significance.json"), &result)?;
    println!("p_value={p:.6}");
    Ok(())
}

fn main_segment(sample: &Sample) -> usize {
    usize::from(sample.context_mode != ContextMode::NoContext && sample.prev.is_some())
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let m = a.model;
    let cfg = experiment(&m.exp)?;
    let echo = json!({
        "command": "explain",
        "config": cfg,
        "model": m.model,
        "limit": a.limit,
        "permutations": a.permutations,
        "subtokens": a.subtokens,
    });
    claim_output(&m.exp.out, &echo, m.exp.force)?;
    let prepared = prepare(&cfg)?;
    let classes = &prepared.splits.classes;
    let model = classifier_for(&m.model, classes)?;
    let seed = cfg.seeds[0];
    let max_tokens = model.config().max_sequence_length - 2;
    let f = |ids: &[u32]| classify(&model, ids).expect("grouped ids fit the model");
    let mut reports: Vec<AttributionReport> = Vec::new();
    let mut ratios = Vec::new();
    for sample in prepared.holdout.iter().take(a.limit) {
        let groups = group_text(&sample.rendered, &model.vocab, max_tokens, a.subtokens)?;
        let target = argmax(&f(&groups.ids));
        let mask = model.vocab.mask_id();
        let report = if groups.grouping.len() <= EXACT_GROUP_LIMIT {
            shapley_exact(f, &groups.ids, &groups.grouping, target, mask)?
        } else {
            shapley_sampled(f, &groups.ids, &groups.grouping, target, mask, a.permutations, seed)?
        };
        let report = report.with_sample_id(sample.id()).with_labels(classes);
        let spans = groups.segment_spans();
        let main = main_segment(sample);
        if spans.len() > 1 && main < spans.len() {
            let context: Vec<_> = spans
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != main)
                .map(|(_, r)| r.clone())
                .collect();
            let ratio = context_contribution_ratio(&report, spans[main].clone(), &context);
            log::info!("event=explain sample={} context_ratio={ratio:.4}", report.sample_id);
            ratios.push(json!({"sample": report.sample_id, "ratio": ratio}));
        }
        reports.push(report);
    }
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &reports)?;
    fs::write(m.exp.out.join("attributions.jsonl"), jsonl)?;
    let html: String = reports.iter().map(|r| render_report(r, ReportFormat::Html)).collect();
    fs::write(
        m.exp.out.join("report.html"),
        format!("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"></head><body>\n{html}</body></html>\n"),
    )?;
    if !ratios.is_empty() {
        write_json(&m.exp.out.join("context_ratios.json"), &ratios)?;
    }
    for r in &reports {
        println!("{}", render_report(r, ReportFormat::Ansi));
    }
    Ok(())
}

/// Parallelism: `--jobs` (default: available cores) capped by `CLOZE_PET_THREADS`.
fn effective_jobs(requested: Option<usize>) -> Result<usize> {
    let mut jobs = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(cap) = std::env::var("CLOZE_PET_THREADS") {
        let cap: usize = cap
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("CLOZE_PET_THREADS must be a positive integer, got {cap:?}")))?;
        jobs = jobs.min(cap);
    }
    Ok(jobs.max(1))
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let mut cfg = load_experiment(a.config.as_deref(), a.seed, a.context, a.templates, &a.shots)?;
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    let jobs = effective_jobs(a.jobs)?;
    claim_output(&cfg.output, &json!({"command": "grid", "config": cfg}), a.force)?;
    let outcome = run_grid(&cfg, jobs)?;
    log::info!(
        "event=grid_done out={} cells={} computed={}",
        cfg.output.display(),
        outcome.rows.len(),
        outcome.computed
    );
    println!("{}", cfg.output.join("results.csv").display());
    Ok(())
}
