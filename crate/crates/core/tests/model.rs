use cloze_pet::model::{
    classify, mlm_cross_entropy, objective_loss_and_grad, predict_mask_distribution, tokenize, train_classifier_hard,
    train_classifier_soft, train_mlm, Encoder, EncoderConfig, Example, HeadConfig, ModelCheckpoint, ModelError, Target,
    TrainConfig, Vocabulary, SPECIALS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_vocab(words: &[&str]) -> Vocabulary {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(words.iter().map(|w| w.to_string()));
    Vocabulary::new(tokens).unwrap()
}

fn tiny_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        max_sequence_length: 8,
        hidden_dim: 4,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 4,
        dropout: 0.0,
        init_std: 0.5,
        seed,
        ..EncoderConfig::default()
    }
}

fn desk_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        max_sequence_length: 32,
        hidden_dim: 32,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 64,
        dropout: 0.0,
        seed,
        ..EncoderConfig::default()
    }
}

/// Central-difference check of `objective_loss_and_grad` on 50 random coordinates.
fn gradient_check(heads: HeadConfig, example: Example, seed: u64) -> f64 {
    let vocab = small_vocab(&["a", "b", "c"]);
    let mut cfg = tiny_config(seed);
    cfg.vocab_size = vocab.len();
    let enc = Encoder::<f64>::new(cfg, heads).unwrap();
    assert!(enc.n_params() <= 500, "{} parameters", enc.n_params());
    let mut grads = vec![0.0; enc.n_params()];
    objective_loss_and_grad::<f64, ChaCha8Rng>(&enc, &vocab, &example, None, &mut grads).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let i = rng.random_range(0..enc.n_params());
        let loss_at = |delta: f64| {
            let mut e = enc.clone();
            e.params[i] += delta;
            let mut scratch = vec![0.0; e.n_params()];
            objective_loss_and_grad::<f64, ChaCha8Rng>(&e, &vocab, &example, None, &mut scratch).unwrap()
        };
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let analytic = grads[i];
        let scale = numeric.abs().max(analytic.abs());
        let err = if scale < 1e-7 {
            (numeric - analytic).abs()
        } else {
            (numeric - analytic).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}

#[test]
fn mlm_gradient_matches_finite_differences() {
    let ex = Example {
        ids: vec![5, 4, 7, 6, 4],
        target: Target::Mlm {
            positions: vec![1, 4],
            labels: vec![6, 5],
        },
    };
    let heads = HeadConfig::default();
    for seed in 0..3 {
        let err = gradient_check(heads.clone(), ex.clone(), seed);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn classifier_gradient_matches_finite_differences() {
    let ex = Example {
        ids: vec![5, 6, 7, 5],
        target: Target::Class(vec![0.7, 0.3]),
    };
    let heads = HeadConfig {
        mlm: false,
        classifier: Some(2),
        ..HeadConfig::default()
    };
    for seed in 0..3 {
        let err = gradient_check(heads.clone(), ex.clone(), seed);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
    let mean = HeadConfig {
        pooling: cloze_pet::model::Pooling::Mean,
        ..heads
    };
    assert!(gradient_check(mean, ex, 9) < 1e-3);
}

#[test]
fn verbalizer_gradient_matches_finite_differences() {
    let ex = Example {
        ids: vec![4, 5, 6, 4],
        target: Target::Verbalizer {
            tokens: vec![5, 7],
            target: vec![1.0, 0.0],
        },
    };
    assert!(gradient_check(HeadConfig::default(), ex, 4) < 1e-3);
}

#[test]
fn mask_distribution_is_normalized_and_near_uniform_at_init() {
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    let vocab = small_vocab(&refs);
    let ckpt = ModelCheckpoint::new(desk_config(1), HeadConfig::default(), vocab.clone()).unwrap();
    let ids = tokenize("w1 w2 [MASK] w3 [MASK]", &vocab);
    let dists = predict_mask_distribution(&ckpt, &ids).unwrap();
    assert_eq!(dists.len(), 2);
    for d in &dists {
        let sum: f64 = d.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let max = d.iter().cloned().fold(f64::MIN, f64::max);
        let min = d.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0 && max / min < 10.0, "ratio {}", max / min);
    }
    assert!(matches!(
        predict_mask_distribution(&ckpt, &tokenize("w1 w2", &vocab)),
        Err(ModelError::NoMaskPresent)
    ));
    let long: Vec<u32> = vec![vocab.mask_id(); 31];
    assert!(matches!(
        predict_mask_distribution(&ckpt, &long),
        Err(ModelError::SequenceTooLong { len: 33, max: 32 })
    ));
}

#[test]
fn mlm_learns_a_planted_token() {
    let vocab = small_vocab(&["a", "b"]);
    let ckpt = ModelCheckpoint::new(desk_config(2), HeadConfig::default(), vocab.clone()).unwrap();
    let texts = vec!["a a a a".to_string(), "a b a a".to_string()];
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 1,
        learning_rate: 3e-3,
        mask_rate: 0.3,
        ..TrainConfig::default()
    };
    let (trained, history) = train_mlm(&ckpt, &texts, &cfg).unwrap();
    assert_eq!(history.steps, 200);
    let dist = predict_mask_distribution(&trained, &tokenize("a [MASK] a a", &vocab)).unwrap();
    let a = vocab.id("a").unwrap() as usize;
    let argmax = cloze_pet::util::argmax(&dist[0]);
    assert_eq!(argmax, a);
}

#[test]
fn first_mlm_step_lowers_held_in_loss() {
    let vocab = small_vocab(&["x", "y", "z"]);
    let ckpt = ModelCheckpoint::new(desk_config(3), HeadConfig::default(), vocab.clone()).unwrap();
    let text = "x y z x y z x y".to_string();
    let seq = vec![tokenize(&text, &vocab)];
    let before = mlm_cross_entropy(&ckpt, &seq, 0.3, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 1,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let (trained, history) = train_mlm(&ckpt, &[text], &cfg).unwrap();
    assert_eq!(history.epoch_losses.len(), 1);
    let after = mlm_cross_entropy(&trained, &seq, 0.3, 5).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn training_validates_inputs() {
    let vocab = small_vocab(&["a", "b"]);
    let ckpt = ModelCheckpoint::new(desk_config(0), HeadConfig::default(), vocab).unwrap();
    let zero_rate = TrainConfig {
        mask_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train_mlm(&ckpt, &["a b".into()], &zero_rate),
        Err(ModelError::InvalidConfig(_))
    ));
    assert!(matches!(
        train_mlm(&ckpt, &[], &TrainConfig::default()),
        Err(ModelError::EmptyCorpus)
    ));
    assert!(matches!(
        train_classifier_hard(&ckpt, &[vec![5]], &[0], &TrainConfig::default()),
        Err(ModelError::HeadMissing(_))
    ));
    let cls = ckpt.with_classifier(2, 0).unwrap();
    assert!(matches!(
        train_classifier_hard(&cls, &[], &[], &TrainConfig::default()),
        Err(ModelError::EmptyCorpus)
    ));
    let bad = train_classifier_soft(&cls, &[vec![5]], &[vec![0.5, 0.3]], &TrainConfig::default());
    assert!(matches!(bad, Err(ModelError::MalformedTarget { index: 0, sum }) if (sum - 0.8).abs() < 1e-12));
}

/// Two classes, each marked by a distinct token somewhere in otherwise shared noise.
fn separable_toy(n: usize, seed: u64, vocab: &Vocabulary) -> (Vec<Vec<u32>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<u32> = ["n1", "n2", "n3", "n4"].iter().map(|w| vocab.id(w).unwrap()).collect();
    let cues = [vocab.id("left").unwrap(), vocab.id("right").unwrap()];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let mut seq: Vec<u32> = (0..6).map(|_| noise[rng.random_range(0..noise.len())]).collect();
        let at = rng.random_range(0..seq.len());
        seq[at] = cues[y];
        xs.push(seq);
        ys.push(y);
    }
    (xs, ys)
}

fn toy_classifier() -> (ModelCheckpoint, Vocabulary) {
    let vocab = small_vocab(&["n1", "n2", "n3", "n4", "left", "right"]);
    let ckpt = ModelCheckpoint::new(desk_config(7), HeadConfig::default(), vocab.clone())
        .unwrap()
        .with_classifier(2, 7)
        .unwrap();
    (ckpt, vocab)
}

#[test]
fn classifier_fits_separable_toy() {
    let (ckpt, vocab) = toy_classifier();
    let (xs, ys) = separable_toy(20, 1, &vocab);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 4,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let (trained, history) = train_classifier_hard(&ckpt, &xs, &ys, &cfg).unwrap();
    assert!(history.steps >= 100);
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| cloze_pet::util::argmax(&classify(&trained, x).unwrap()) == y)
        .count();
    assert_eq!(correct, xs.len());
}

#[test]
fn one_hot_soft_targets_reproduce_hard_training() {
    let (ckpt, vocab) = toy_classifier();
    let (xs, ys) = separable_toy(8, 2, &vocab);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (hard, _) = train_classifier_hard(&ckpt, &xs, &ys, &cfg).unwrap();
    let soft_targets: Vec<Vec<f64>> = ys
        .iter()
        .map(|&y| if y == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        .collect();
    let (soft, _) = train_classifier_soft(&ckpt, &xs, &soft_targets, &cfg).unwrap();
    assert_eq!(hard, soft);
    let (again, _) = train_classifier_hard(&ckpt, &xs, &ys, &cfg).unwrap();
    assert_eq!(hard, again);
}

#[test]
fn uniform_targets_give_uniform_predictions() {
    let (ckpt, vocab) = toy_classifier();
    let (xs, _) = separable_toy(12, 3, &vocab);
    let targets = vec![vec![0.5, 0.5]; xs.len()];
    let cfg = TrainConfig {
        epochs: 10,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let (trained, _) = train_classifier_soft(&ckpt, &xs, &targets, &cfg).unwrap();
    for x in &xs {
        let p = classify(&trained, x).unwrap();
        let kl = cloze_pet::util::kl_divergence(&p, &[0.5, 0.5]);
        assert!(kl < 0.05, "KL {kl}");
    }
}

#[test]
fn single_class_head_is_certain() {
    let vocab = small_vocab(&["a"]);
    let ckpt = ModelCheckpoint::new(desk_config(0), HeadConfig::default(), vocab)
        .unwrap()
        .with_classifier(1, 0)
        .unwrap();
    assert_eq!(classify(&ckpt, &[5, 5]).unwrap(), vec![1.0]);
    let no_head = ModelCheckpoint::new(desk_config(0), HeadConfig::default(), small_vocab(&["a"])).unwrap();
    assert!(matches!(classify(&no_head, &[5]), Err(ModelError::HeadMissing(_))));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (ckpt, vocab) = toy_classifier();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = ModelCheckpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let len = rng.random_range(1..20);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(5..vocab.len() as u32)).collect();
        assert_eq!(classify(&ckpt, &ids).unwrap(), classify(&loaded, &ids).unwrap());
    }

    let mut bytes = ckpt.to_bytes();
    bytes[8] = 2;
    assert!(matches!(
        ModelCheckpoint::from_bytes(&bytes),
        Err(ModelError::VersionMismatch { found: 2, expected: 1 })
    ));
    assert!(ModelCheckpoint::from_bytes(&bytes[..20]).is_err());
}

#[test]
fn classifier_head_keeps_encoder_weights() {
    let (ckpt, _) = toy_classifier();
    let three = ckpt.with_classifier(3, 1).unwrap();
    assert_eq!(three.weights("embeddings.token"), ckpt.weights("embeddings.token"));
    assert_eq!(three.weights("classifier.bias").unwrap().len(), 3);
}
