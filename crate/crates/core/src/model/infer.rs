use rand::seq::SliceRandom;

use super::checkpoint::ModelCheckpoint;
use super::ModelError;
use crate::util::derived_rng;

type NoRng = rand_chacha::ChaCha8Rng;

/// Surround raw token ids with `[CLS]` and `[SEP]`, checking the length limit.
pub fn wrap_sequence(ckpt: &ModelCheckpoint, ids: &[u32]) -> Result<Vec<u32>, ModelError> {
    let max = ckpt.config().max_sequence_length;
    if ids.len() + 2 > max {
        return Err(ModelError::SequenceTooLong {
            len: ids.len() + 2,
            max,
        });
    }
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(ckpt.vocab.cls_id());
    out.extend_from_slice(ids);
    out.push(ckpt.vocab.sep_id());
    Ok(out)
}

/// Full-vocabulary log-probabilities at every `[MASK]` position of `ids`.
pub fn mask_log_probs(ckpt: &ModelCheckpoint, ids: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
    let mask = ckpt.vocab.mask_id();
    let positions: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == mask)
        .map(|(i, _)| i)
        .collect();
    if positions.is_empty() {
        return Err(ModelError::NoMaskPresent);
    }
    if !ckpt.heads().mlm {
        return Err(ModelError::HeadMissing("mlm"));
    }
    let seq = wrap_sequence(ckpt, ids)?;
    let fwd = ckpt.encoder.forward::<NoRng>(&seq, None)?;
    let d = ckpt.config().hidden_dim;
    positions
        .iter()
        .map(|&p| {
            let row = &fwd.hidden[(p + 1) * d..(p + 2) * d];
            let logits: Vec<f64> = ckpt.encoder.mlm_logits(row)?.iter().map(|&v| v as f64).collect();
            Ok(log_softmax(&logits))
        })
        .collect()
}

/// Probability distribution over the vocabulary at each `[MASK]` position.
pub fn predict_mask_distribution(ckpt: &ModelCheckpoint, ids: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
    Ok(mask_log_probs(ckpt, ids)?
        .into_iter()
        .map(|lp| lp.into_iter().map(f64::exp).collect())
        .collect())
}

/// Class probabilities from the classification head.
pub fn classify(ckpt: &ModelCheckpoint, ids: &[u32]) -> Result<Vec<f64>, ModelError> {
    Ok(crate::util::softmax(&classifier_logits(ckpt, ids)?))
}

/// Raw classification-head logits.
pub fn classifier_logits(ckpt: &ModelCheckpoint, ids: &[u32]) -> Result<Vec<f64>, ModelError> {
    if ckpt.heads().classifier.is_none() {
        return Err(ModelError::HeadMissing("classifier"));
    }
    let seq = wrap_sequence(ckpt, ids)?;
    let fwd = ckpt.encoder.forward::<NoRng>(&seq, None)?;
    Ok(ckpt
        .encoder
        .classifier_logits(&fwd.hidden)?
        .iter()
        .map(|&v| v as f64)
        .collect())
}

/// Mean masked-token cross-entropy (nats) over `sequences`.
///
/// A deterministic `mask_rate` share of non-special positions per sequence is
/// replaced by `[MASK]`; the selection depends only on `seed`, so two models
/// evaluated with the same arguments see identical inputs.
pub fn mlm_cross_entropy(
    ckpt: &ModelCheckpoint,
    sequences: &[Vec<u32>],
    mask_rate: f64,
    seed: u64,
) -> Result<f64, ModelError> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(ModelError::InvalidConfig("mask_rate must be in (0, 1)".into()));
    }
    let mut rng = derived_rng(seed, "mlm-eval");
    let d = ckpt.config().hidden_dim;
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in sequences {
        let mut candidates: Vec<usize> = (0..seq.len()).filter(|&i| !ckpt.vocab.is_special(seq[i])).collect();
        if candidates.is_empty() {
            continue;
        }
        let n = ((mask_rate * candidates.len() as f64).round() as usize).max(1);
        candidates.shuffle(&mut rng);
        let chosen = &candidates[..n];
        let mut input = seq.clone();
        for &p in chosen {
            input[p] = ckpt.vocab.mask_id();
        }
        let wrapped = wrap_sequence(ckpt, &input)?;
        let fwd = ckpt.encoder.forward::<NoRng>(&wrapped, None)?;
        for &p in chosen {
            let row = &fwd.hidden[(p + 1) * d..(p + 2) * d];
            let logits: Vec<f64> = ckpt.encoder.mlm_logits(row)?.iter().map(|&v| v as f64).collect();
            total += -log_softmax(&logits)[seq[p] as usize];
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    Ok(total / count as f64)
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}
