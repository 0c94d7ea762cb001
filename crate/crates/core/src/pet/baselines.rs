use super::PetError;
use crate::corpus::Sample;
use crate::eval::{metrics_from_indices, EvalError, MetricsReport};
use crate::model::{classify, tokenize, train_classifier_hard, ModelCheckpoint, TrainConfig, Vocabulary};
use crate::prompting::{verbalizer_logits, PatternTemplate, Verbalizer};
use crate::util::argmax;

/// Tokenize and keep the trailing tokens that fit next to `[CLS]`/`[SEP]`.
pub fn encode_text(text: &str, vocab: &Vocabulary, max_sequence_length: usize) -> Vec<u32> {
    let mut ids = tokenize(text, vocab);
    let room = max_sequence_length.saturating_sub(2);
    if ids.len() > room {
        ids.drain(..ids.len() - room);
    }
    ids
}

pub(crate) fn gold_indices(samples: &[Sample], classes: &[String]) -> Result<Vec<usize>, PetError> {
    samples
        .iter()
        .map(|s| {
            let label = s.label().ok_or_else(|| PetError::MissingLabel(s.id()))?;
            classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| PetError::Eval(EvalError::UnknownLabel(label.to_string())))
        })
        .collect()
}

/// Argmax class index of the classification head for each sample.
pub fn predict_classes(ckpt: &ModelCheckpoint, samples: &[Sample]) -> Result<Vec<usize>, PetError> {
    let max = ckpt.config().max_sequence_length;
    samples
        .iter()
        .map(|s| Ok(argmax(&classify(ckpt, &encode_text(&s.rendered, &ckpt.vocab, max))?)))
        .collect()
}

pub fn evaluate_classifier(
    ckpt: &ModelCheckpoint,
    holdout: &[Sample],
    classes: &[String],
) -> Result<MetricsReport, PetError> {
    if holdout.is_empty() {
        return Err(EvalError::EmptyEvaluation.into());
    }
    let gold = gold_indices(holdout, classes)?;
    let pred = predict_classes(ckpt, holdout)?;
    Ok(metrics_from_indices(&gold, &pred, classes)?)
}

/// Supervised sequence-classification baseline on hard labels.
pub fn run_sc(
    base: &ModelCheckpoint,
    labeled: &[Sample],
    holdout: &[Sample],
    classes: &[String],
    train: &TrainConfig,
) -> Result<(ModelCheckpoint, MetricsReport), PetError> {
    if holdout.is_empty() {
        return Err(EvalError::EmptyEvaluation.into());
    }
    if labeled.is_empty() {
        return Err(PetError::EmptyLabeled);
    }
    let model = base.with_classifier(classes.len(), train.seed)?;
    let max = model.config().max_sequence_length;
    let xs: Vec<Vec<u32>> = labeled
        .iter()
        .map(|s| encode_text(&s.rendered, &model.vocab, max))
        .collect();
    let ys = gold_indices(labeled, classes)?;
    let (trained, _) = train_classifier_hard(&model, &xs, &ys, train)?;
    let report = evaluate_classifier(&trained, holdout, classes)?;
    log::info!("method=sc n_train={} accuracy={:.4}", labeled.len(), report.accuracy);
    Ok((trained, report))
}

/// Class index with the highest verbalizer score for each sample.
pub fn zero_shot_predict(
    base: &ModelCheckpoint,
    verbalizer: &Verbalizer,
    template: &PatternTemplate,
    samples: &[Sample],
) -> Result<Vec<usize>, PetError> {
    samples
        .iter()
        .map(|s| Ok(argmax(&verbalizer_logits(base, template, &s.rendered, verbalizer)?)))
        .collect()
}

/// Classify by the highest verbalizer score without any training.
pub fn run_zero_shot(
    base: &ModelCheckpoint,
    verbalizer: &Verbalizer,
    template: &PatternTemplate,
    holdout: &[Sample],
    classes: &[String],
) -> Result<MetricsReport, PetError> {
    if holdout.is_empty() {
        return Err(EvalError::EmptyEvaluation.into());
    }
    let verbalizer = verbalizer.ordered_for(classes, &base.vocab)?;
    let gold = gold_indices(holdout, classes)?;
    let pred = zero_shot_predict(base, &verbalizer, template, holdout)?;
    let report = metrics_from_indices(&gold, &pred, classes)?;
    log::info!(
        "method=zero_shot template={} accuracy={:.4}",
        template.name(),
        report.accuracy
    );
    Ok(report)
}
