use std::path::Path;

use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use super::baselines::{encode_text, evaluate_classifier, gold_indices};
use super::{EnsembleWeighting, PetConfig, PetError, VerbalizerMode};
use crate::corpus::{FewShotBundle, Sample};
use crate::eval::{MetricsReport, RunMetadata};
use crate::model::{train_classifier_soft, train_verbalizer, ModelCheckpoint};
use crate::prompting::{apply_pattern, petal_select, verbalizer_logits, PatternTemplate, Verbalizer};
use crate::util::{argmax, derived_rng, softmax};

/// A step-1 model: one template, its verbalizer and the fine-tuned weights.
#[derive(Debug, Clone)]
pub struct TemplateModel {
    pub template: PatternTemplate,
    pub verbalizer: Verbalizer,
    pub checkpoint: ModelCheckpoint,
    /// Accuracy on the labeled shots it was trained on.
    pub train_accuracy: f64,
}

impl TemplateModel {
    /// Verbalizer scores for one sample, ordered like the verbalizer's classes.
    pub fn logits(&self, sample: &Sample) -> Result<Vec<f64>, PetError> {
        Ok(verbalizer_logits(
            &self.checkpoint,
            &self.template,
            &sample.rendered,
            &self.verbalizer,
        )?)
    }
}

/// Ensemble annotations of the unlabeled pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftLabelSet {
    pub classes: Vec<String>,
    pub sample_ids: Vec<String>,
    #[serde(skip)]
    pub texts: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    pub templates: Vec<String>,
    pub weights: Vec<f64>,
}

impl SoftLabelSet {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `sample_id` plus one probability column per class.
    pub fn write_csv(&self, path: &Path) -> Result<(), PetError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample_id".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for (id, p) in self.sample_ids.iter().zip(&self.probs) {
            let mut row = vec![id.clone()];
            row.extend(p.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pattern_inputs(
    ckpt: &ModelCheckpoint,
    template: &PatternTemplate,
    samples: &[Sample],
) -> Result<Vec<Vec<u32>>, PetError> {
    let max = ckpt.config().max_sequence_length;
    samples
        .iter()
        .map(|s| Ok(apply_pattern(template, &s.rendered, &ckpt.vocab, max)?.ids))
        .collect()
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

/// Fine-tune one copy of `base` per template with the cloze objective.
pub fn pet_step1_finetune(
    base: &ModelCheckpoint,
    bundle: &FewShotBundle,
    classes: &[String],
    cfg: &PetConfig,
) -> Result<Vec<TemplateModel>, PetError> {
    cfg.validate()?;
    if bundle.labeled.is_empty() {
        return Err(PetError::EmptyLabeled);
    }
    let gold = gold_indices(&bundle.labeled, classes)?;
    let targets: Vec<Vec<f64>> = gold.iter().map(|&g| one_hot(classes.len(), g)).collect();
    let manual = cfg.manual(classes, &base.vocab)?;
    let mut shared: Option<Verbalizer> = None;
    let mut out = Vec::with_capacity(cfg.templates.len());
    for template in &cfg.templates {
        let verbalizer = match (cfg.verbalizer_mode, &manual, &shared) {
            (VerbalizerMode::Manual, Some(m), _) => m.clone(),
            (_, _, Some(s)) if cfg.shared_verbalizer => s.clone(),
            _ => {
                let v = petal_select(
                    base,
                    template,
                    &bundle.labeled,
                    classes,
                    &cfg.candidate_filter,
                    &bundle.unlabeled,
                )?;
                if cfg.shared_verbalizer {
                    shared = Some(v.clone());
                }
                v
            }
        };
        let inputs = pattern_inputs(base, template, &bundle.labeled)?;
        let (checkpoint, history) = train_verbalizer(base, &inputs, &targets, verbalizer.tokens(), &cfg.train)?;
        let mut model = TemplateModel {
            template: template.clone(),
            verbalizer,
            checkpoint,
            train_accuracy: 0.0,
        };
        let correct = bundle
            .labeled
            .iter()
            .zip(&gold)
            .map(|(s, &g)| Ok((argmax(&model.logits(s)?) == g) as usize))
            .sum::<Result<usize, PetError>>()?;
        model.train_accuracy = correct as f64 / gold.len() as f64;
        log::info!(
            "step=1 template={} final_loss={:.5} train_accuracy={:.4} verbalizer={}",
            template.name(),
            history.epoch_losses.last().copied().unwrap_or(f64::NAN),
            model.train_accuracy,
            model.verbalizer.words().join(",")
        );
        out.push(model);
    }
    Ok(out)
}

/// Annotate `unlabeled` with the softmax of the weighted mean template logits.
pub fn pet_step2_soft_label(
    models: &[TemplateModel],
    unlabeled: &[Sample],
    classes: &[String],
    cfg: &PetConfig,
) -> Result<SoftLabelSet, PetError> {
    if models.is_empty() {
        return Err(PetError::InvalidConfig("no template models".into()));
    }
    if unlabeled.is_empty() {
        return Err(PetError::EmptyUnlabeled);
    }
    for m in models {
        if m.verbalizer.classes() != classes {
            return Err(PetError::InvalidConfig(format!(
                "verbalizer of template {} does not follow the class order",
                m.template.name()
            )));
        }
    }
    let raw: Vec<f64> = match cfg.ensemble_weighting {
        EnsembleWeighting::Uniform => vec![1.0; models.len()],
        EnsembleWeighting::TrainAccuracy => models.iter().map(|m| m.train_accuracy).collect(),
    };
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / models.len() as f64; models.len()]
    };
    let mut probs = Vec::with_capacity(unlabeled.len());
    for s in unlabeled {
        let mut mean = vec![0.0; classes.len()];
        for (m, &w) in models.iter().zip(&weights) {
            for (a, l) in mean.iter_mut().zip(m.logits(s)?) {
                *a += w * l;
            }
        }
        probs.push(softmax(&mean));
    }
    Ok(SoftLabelSet {
        classes: classes.to_vec(),
        sample_ids: unlabeled.iter().map(Sample::id).collect(),
        texts: unlabeled.iter().map(|s| s.rendered.clone()).collect(),
        probs,
        templates: models.iter().map(|m| m.template.name().to_string()).collect(),
        weights,
    })
}

/// Re-soften distributions: softmax(ln p / T).
pub fn distill_targets(probs: &[Vec<f64>], temperature: f64) -> Vec<Vec<f64>> {
    probs
        .iter()
        .map(|p| softmax(&p.iter().map(|&v| v.ln() / temperature).collect::<Vec<_>>()))
        .collect()
}

/// Train the final classifier on the (temperature-scaled) soft labels.
pub fn pet_step3_distill(
    base: &ModelCheckpoint,
    soft: &SoftLabelSet,
    labeled: &[Sample],
    cfg: &PetConfig,
) -> Result<ModelCheckpoint, PetError> {
    if soft.is_empty() {
        return Err(PetError::EmptyUnlabeled);
    }
    let k = soft.classes.len();
    let train = cfg.distill_config();
    let model = base.with_classifier(k, train.seed)?;
    let max = model.config().max_sequence_length;
    let mut xs: Vec<Vec<u32>> = soft.texts.iter().map(|t| encode_text(t, &model.vocab, max)).collect();
    let mut ys = distill_targets(&soft.probs, cfg.distill_temperature);
    if cfg.include_labeled {
        for (s, g) in labeled.iter().zip(gold_indices(labeled, &soft.classes)?) {
            xs.push(encode_text(&s.rendered, &model.vocab, max));
            ys.push(one_hot(k, g));
        }
    }
    let (trained, history) = train_classifier_soft(&model, &xs, &ys, &train)?;
    log::info!(
        "step=3 n_train={} final_loss={:.5}",
        xs.len(),
        history.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(trained)
}

/// Everything a PET run produces.
#[derive(Debug, Clone)]
pub struct PetOutcome {
    pub checkpoint: ModelCheckpoint,
    pub metrics: MetricsReport,
    pub models: Vec<TemplateModel>,
    pub soft_labels: SoftLabelSet,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config: &'a PetConfig,
    classes: &'a [String],
    shot_size: usize,
    set_id: usize,
    bundle_seed: u64,
    n_labeled: usize,
    n_unlabeled: usize,
}

/// Steps 1–3 followed by holdout evaluation; artifacts go to `run_dir` when given.
pub fn run_pet(
    base: &ModelCheckpoint,
    bundle: &FewShotBundle,
    holdout: &[Sample],
    classes: &[String],
    cfg: &PetConfig,
    run_dir: Option<&Path>,
) -> Result<PetOutcome, PetError> {
    cfg.validate()?;
    if holdout.is_empty() {
        return Err(crate::eval::EvalError::EmptyEvaluation.into());
    }
    let unlabeled: Vec<Sample> = match cfg.max_unlabeled {
        Some(cap) if bundle.unlabeled.len() > cap => {
            let mut rng = derived_rng(cfg.train.seed, "pet-unlabeled");
            let mut idx = sample_indices(&mut rng, bundle.unlabeled.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| bundle.unlabeled[i].clone()).collect()
        }
        _ => bundle.unlabeled.clone(),
    };
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        let record = RunRecord {
            config: cfg,
            classes,
            shot_size: bundle.shot_size,
            set_id: bundle.set_id,
            bundle_seed: bundle.seed,
            n_labeled: bundle.labeled.len(),
            n_unlabeled: unlabeled.len(),
        };
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    }

    let models = pet_step1_finetune(base, bundle, classes, cfg)?;
    if let Some(dir) = run_dir {
        for m in &models {
            let d = dir.join("step1").join(m.template.name());
            std::fs::create_dir_all(&d)?;
            m.checkpoint.save(d.join("checkpoint"))?;
            std::fs::write(d.join("verbalizer.txt"), m.verbalizer.to_text())?;
        }
    }

    let soft = pet_step2_soft_label(&models, &unlabeled, classes, cfg)?;
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir.join("step2"))?;
        soft.write_csv(&dir.join("step2").join("soft_labels.csv"))?;
    }

    let checkpoint = pet_step3_distill(base, &soft, &bundle.labeled, cfg)?;
    let metrics = evaluate_classifier(&checkpoint, holdout, classes)?.with_metadata(RunMetadata {
        seed: Some(cfg.train.seed),
        set_id: Some(bundle.set_id),
        shot_size: Some(bundle.shot_size),
        method: Some("pet".into()),
        model_variant: None,
    });
    log::info!(
        "method=pet shots={} set={} accuracy={:.4}",
        bundle.shot_size,
        bundle.set_id,
        metrics.accuracy
    );
    if let Some(dir) = run_dir {
        checkpoint.save(dir.join("final").join("checkpoint"))?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    }
    Ok(PetOutcome {
        checkpoint,
        metrics,
        models,
        soft_labels: soft,
    })
}
