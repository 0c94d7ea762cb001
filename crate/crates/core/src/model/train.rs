use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::ModelCheckpoint;
use super::encoder::Encoder;
use super::infer::wrap_sequence;
use super::ops::{self, c, Scalar};
use super::vocab::tokenize;
use super::ModelError;
use crate::util::derived_rng;

/// Optimization settings shared by every training entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_rate: f64,
    pub gradient_accumulation_steps: usize,
    pub seed: u64,
    /// Decoupled (AdamW-style) weight decay; 0 disables it.
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Stop after this many optimizer steps, if set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-3,
            mask_rate: 0.15,
            gradient_accumulation_steps: 1,
            seed: 0,
            weight_decay: 0.0,
            max_grad_norm: 1.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.gradient_accumulation_steps == 0 {
            return bad("epochs, batch_size and gradient_accumulation_steps must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad("mask_rate must be in (0, 1)");
        }
        if self.weight_decay < 0.0 || self.max_grad_norm < 0.0 {
            return bad("weight_decay and max_grad_norm must be non-negative");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be positive");
        }
        Ok(())
    }
}

/// Per-epoch mean training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Supervision attached to one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Predict `labels[i]` at raw position `positions[i]` over the full vocabulary.
    Mlm { positions: Vec<usize>, labels: Vec<u32> },
    /// Distribution over classifier-head classes.
    Class(Vec<f64>),
    /// Distribution over `tokens`, scored at the input's `[MASK]` positions.
    Verbalizer { tokens: Vec<u32>, target: Vec<f64> },
}

/// One training instance; `ids` excludes `[CLS]`/`[SEP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub target: Target,
}

/// Loss of one example and its gradient accumulated into `grads`.
///
/// Dropout is active only when `rng` is given.
pub fn objective_loss_and_grad<T: Scalar, R: Rng>(
    enc: &Encoder<T>,
    vocab: &super::Vocabulary,
    ex: &Example,
    rng: Option<&mut R>,
    grads: &mut [T],
) -> Result<f64, ModelError> {
    let mut seq = Vec::with_capacity(ex.ids.len() + 2);
    seq.push(vocab.cls_id());
    seq.extend_from_slice(&ex.ids);
    seq.push(vocab.sep_id());
    let fwd = enc.forward(&seq, rng)?;
    let d = enc.config().hidden_dim;
    let mut d_hidden = vec![T::zero(); fwd.hidden.len()];
    let loss = match &ex.target {
        Target::Class(t) => {
            let logits = enc.classifier_logits(&fwd.hidden)?;
            let (loss, dz) = soft_ce(&logits, t);
            enc.classifier_backward(&fwd.hidden, &dz, grads, &mut d_hidden);
            loss
        }
        Target::Mlm { positions, labels } => {
            if positions.is_empty() || positions.len() != labels.len() {
                return Err(ModelError::InvalidInput(
                    "MLM target needs matching positions and labels".into(),
                ));
            }
            let scale = 1.0 / positions.len() as f64;
            let mut loss = 0.0;
            for (&p, &label) in positions.iter().zip(labels) {
                let row = &fwd.hidden[(p + 1) * d..(p + 2) * d];
                let mut logits = enc.mlm_logits(row)?;
                let lse = ops::log_sum_exp(&logits);
                loss += (lse - logits[label as usize]).to_f64().unwrap_or(f64::NAN) * scale;
                let s = c::<T>(scale);
                for z in logits.iter_mut() {
                    *z = (*z - lse).exp() * s;
                }
                logits[label as usize] = logits[label as usize] - s;
                let (_, rest) = d_hidden.split_at_mut((p + 1) * d);
                enc.mlm_backward(row, &logits, grads, &mut rest[..d]);
            }
            loss
        }
        Target::Verbalizer { tokens, target } => {
            let mask = vocab.mask_id();
            let positions: Vec<usize> = ex
                .ids
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == mask)
                .map(|(i, _)| i)
                .collect();
            if positions.is_empty() {
                return Err(ModelError::NoMaskPresent);
            }
            let m = positions.len();
            let inv = c::<T>(1.0 / m as f64);
            let mut mean = vec![T::zero(); tokens.len()];
            for &p in &positions {
                let row = &fwd.hidden[(p + 1) * d..(p + 2) * d];
                for (a, z) in mean.iter_mut().zip(enc.mlm_logits_subset(row, tokens)?) {
                    *a = *a + z * inv;
                }
            }
            let (loss, dz) = soft_ce(&mean, target);
            let dz: Vec<T> = dz.iter().map(|&g| g * inv).collect();
            for &p in &positions {
                let row = fwd.hidden[(p + 1) * d..(p + 2) * d].to_vec();
                enc.mlm_backward_subset(&row, tokens, &dz, grads, &mut d_hidden[(p + 1) * d..(p + 2) * d]);
            }
            loss
        }
    };
    enc.backward(&fwd, &d_hidden, grads);
    Ok(loss)
}

/// Cross-entropy of softmax(logits) against a target distribution and its logit gradient.
fn soft_ce<T: Scalar>(logits: &[T], target: &[f64]) -> (f64, Vec<T>) {
    let lse = ops::log_sum_exp(logits);
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&z, &t)| {
            let logp = z - lse;
            if t > 0.0 {
                loss -= t * logp.to_f64().unwrap_or(f64::NAN);
            }
            logp.exp() - c::<T>(t)
        })
        .collect();
    (loss, grad)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, weight_decay: f64) {
        self.t += 1;
        let (b1, b2) = (Self::BETA1 as f32, Self::BETA2 as f32);
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        let step = (lr * bc2.sqrt() / bc1) as f32;
        let eps = (Self::EPS * bc2.sqrt()) as f32;
        let decay = (1.0 - lr * weight_decay) as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g == 0.0 && *m == 0.0 {
                // Untouched coordinate (e.g. unused embedding row): only decay applies.
                *p *= decay;
                continue;
            }
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p = *p * decay - step * *m / (v.sqrt() + eps);
        }
    }
}

/// Generic minibatch loop; `make` produces the example for item `i` in the given epoch.
fn train_loop<F>(
    ckpt: &ModelCheckpoint,
    n_items: usize,
    cfg: &TrainConfig,
    label: &str,
    mut make: F,
) -> Result<(ModelCheckpoint, TrainHistory), ModelError>
where
    F: FnMut(usize, &mut rand_chacha::ChaCha8Rng) -> Result<Option<Example>, ModelError>,
{
    cfg.validate()?;
    if n_items == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    let mut model = ckpt.clone();
    let n = model.encoder.n_params();
    let mut adam = Adam::new(n);
    let mut grads = vec![0f32; n];
    let mut rng = derived_rng(cfg.seed, label);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut pending_examples = 0usize;
    let mut pending_batches = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                let Some(ex) = make(i, &mut rng)? else { continue };
                let loss = objective_loss_and_grad(&model.encoder, &model.vocab, &ex, Some(&mut rng), &mut grads)?;
                epoch_loss += loss;
                epoch_count += 1;
                pending_examples += 1;
            }
            pending_batches += 1;
            if pending_batches == cfg.gradient_accumulation_steps {
                apply_update(&mut model, &mut adam, &mut grads, pending_examples, cfg);
                pending_batches = 0;
                pending_examples = 0;
                history.steps += 1;
                if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                    let mean = if epoch_count > 0 {
                        epoch_loss / epoch_count as f64
                    } else {
                        f64::NAN
                    };
                    history.epoch_losses.push(mean);
                    log::info!(
                        "objective={label} epoch={} loss={mean:.5} steps={} stop=max_steps",
                        epoch + 1,
                        history.steps
                    );
                    break 'epochs;
                }
            }
        }
        let mean = if epoch_count > 0 {
            epoch_loss / epoch_count as f64
        } else {
            f64::NAN
        };
        history.epoch_losses.push(mean);
        log::info!(
            "objective={label} epoch={} loss={mean:.5} steps={}",
            epoch + 1,
            history.steps
        );
    }
    if pending_batches > 0 {
        apply_update(&mut model, &mut adam, &mut grads, pending_examples, cfg);
        history.steps += 1;
    }
    Ok((model, history))
}

fn apply_update(model: &mut ModelCheckpoint, adam: &mut Adam, grads: &mut [f32], n_examples: usize, cfg: &TrainConfig) {
    if n_examples > 0 {
        let inv = 1.0 / n_examples as f32;
        grads.iter_mut().for_each(|g| *g *= inv);
        if cfg.max_grad_norm > 0.0 {
            let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let s = (cfg.max_grad_norm / norm) as f32;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        adam.step(&mut model.encoder.params, grads, cfg.learning_rate, cfg.weight_decay);
    }
    grads.iter_mut().for_each(|g| *g = 0.0);
}

/// Train on a fixed list of examples.
pub fn train_objective(
    ckpt: &ModelCheckpoint,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory), ModelError> {
    train_loop(ckpt, examples.len(), cfg, "objective", |i, _| {
        Ok(Some(examples[i].clone()))
    })
}

/// Split tokenized text into windows that fit the model.
fn windows(ckpt: &ModelCheckpoint, texts: &[String]) -> Vec<Vec<u32>> {
    let width = ckpt.config().max_sequence_length - 2;
    let mut out = Vec::new();
    for t in texts {
        let ids = tokenize(t, &ckpt.vocab);
        out.extend(ids.chunks(width).filter(|w| !w.is_empty()).map(<[u32]>::to_vec));
    }
    out
}

/// Masked-language-model training with dynamic 80/10/10 masking each epoch.
pub fn train_mlm(
    ckpt: &ModelCheckpoint,
    texts: &[String],
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory), ModelError> {
    cfg.validate()?;
    if !ckpt.heads().mlm {
        return Err(ModelError::HeadMissing("mlm"));
    }
    let seqs = windows(ckpt, texts);
    if seqs.iter().all(|s| s.iter().all(|&t| ckpt.vocab.is_special(t))) {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = &ckpt.vocab;
    let replaceable: Vec<u32> = (0..vocab.len() as u32).filter(|&t| !vocab.is_special(t)).collect();
    train_loop(ckpt, seqs.len(), cfg, "mlm", |i, rng| {
        Ok(mask_sequence(&seqs[i], vocab, &replaceable, cfg.mask_rate, rng))
    })
}

/// Apply MLM corruption to one sequence; `None` when it has no maskable token.
pub(crate) fn mask_sequence<R: Rng>(
    seq: &[u32],
    vocab: &super::Vocabulary,
    replaceable: &[u32],
    rate: f64,
    rng: &mut R,
) -> Option<Example> {
    let mut candidates: Vec<usize> = (0..seq.len()).filter(|&i| !vocab.is_special(seq[i])).collect();
    if candidates.is_empty() {
        return None;
    }
    let n = ((rate * candidates.len() as f64).round() as usize).max(1);
    let (chosen, _) = candidates.partial_shuffle(rng, n);
    let mut positions = chosen.to_vec();
    positions.sort_unstable();
    let mut ids = seq.to_vec();
    let labels = positions.iter().map(|&p| seq[p]).collect();
    for &p in &positions {
        let u: f64 = rng.random();
        if u < 0.8 {
            ids[p] = vocab.mask_id();
        } else if u < 0.9 {
            ids[p] = replaceable[rng.random_range(0..replaceable.len())];
        }
    }
    Some(Example {
        ids,
        target: Target::Mlm { positions, labels },
    })
}

fn check_lengths(ckpt: &ModelCheckpoint, samples: &[Vec<u32>]) -> Result<(), ModelError> {
    for s in samples {
        wrap_sequence(ckpt, s)?;
    }
    Ok(())
}

/// Supervised classifier training on hard labels (cross-entropy).
pub fn train_classifier_hard(
    ckpt: &ModelCheckpoint,
    samples: &[Vec<u32>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory), ModelError> {
    let k = ckpt.heads().classifier.ok_or(ModelError::HeadMissing("classifier"))?;
    if samples.len() != labels.len() {
        return Err(ModelError::InvalidInput("samples and labels differ in length".into()));
    }
    let targets = labels
        .iter()
        .map(|&l| {
            if l >= k {
                return Err(ModelError::InvalidInput(format!(
                    "label {l} out of range for {k} classes"
                )));
            }
            let mut t = vec![0.0; k];
            t[l] = 1.0;
            Ok(t)
        })
        .collect::<Result<Vec<_>, _>>()?;
    train_classifier_soft(ckpt, samples, &targets, cfg)
}

/// Classifier training against soft target distributions.
pub fn train_classifier_soft(
    ckpt: &ModelCheckpoint,
    samples: &[Vec<u32>],
    soft_targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory), ModelError> {
    cfg.validate()?;
    let k = ckpt.heads().classifier.ok_or(ModelError::HeadMissing("classifier"))?;
    if samples.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if samples.len() != soft_targets.len() {
        return Err(ModelError::InvalidInput("samples and targets differ in length".into()));
    }
    for (index, t) in soft_targets.iter().enumerate() {
        validate_distribution(t, k, index)?;
    }
    check_lengths(ckpt, samples)?;
    train_loop(ckpt, samples.len(), cfg, "classifier", |i, _| {
        Ok(Some(Example {
            ids: samples[i].clone(),
            target: Target::Class(soft_targets[i].clone()),
        }))
    })
}

/// Cloze-style fine-tuning: cross-entropy over `tokens` at the `[MASK]` positions.
pub fn train_verbalizer(
    ckpt: &ModelCheckpoint,
    samples: &[Vec<u32>],
    targets: &[Vec<f64>],
    tokens: &[u32],
    cfg: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainHistory), ModelError> {
    cfg.validate()?;
    if !ckpt.heads().mlm {
        return Err(ModelError::HeadMissing("mlm"));
    }
    if samples.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if samples.len() != targets.len() {
        return Err(ModelError::InvalidInput("samples and targets differ in length".into()));
    }
    let mask = ckpt.vocab.mask_id();
    for (index, (s, t)) in samples.iter().zip(targets).enumerate() {
        validate_distribution(t, tokens.len(), index)?;
        if !s.contains(&mask) {
            return Err(ModelError::NoMaskPresent);
        }
    }
    check_lengths(ckpt, samples)?;
    train_loop(ckpt, samples.len(), cfg, "verbalizer", |i, _| {
        Ok(Some(Example {
            ids: samples[i].clone(),
            target: Target::Verbalizer {
                tokens: tokens.to_vec(),
                target: targets[i].clone(),
            },
        }))
    })
}

fn validate_distribution(t: &[f64], k: usize, index: usize) -> Result<(), ModelError> {
    let sum: f64 = t.iter().sum();
    if t.len() != k || t.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(ModelError::MalformedTarget { index, sum });
    }
    Ok(())
}
