use cloze_pet::corpus::{build_fewshot_bundles, build_samples, ContextMode, FewShotBundle, Sample, DEFAULT_SEP};
use cloze_pet::model::{EncoderConfig, HeadConfig, ModelCheckpoint, TrainConfig};
use cloze_pet::pet::{
    distill_targets, pet_step1_finetune, pet_step2_soft_label, run_pet, run_sc, run_zero_shot, EnsembleWeighting,
    PetConfig,
};
use cloze_pet::pretrain::build_vocabulary;
use cloze_pet::prompting::{builtin_templates, Verbalizer};
use cloze_pet::synth::{generate, GeneratorSpec};

struct Fixture {
    base: ModelCheckpoint,
    spec: GeneratorSpec,
    classes: Vec<String>,
    bundle: FewShotBundle,
    holdout: Vec<Sample>,
}

fn fixture() -> Fixture {
    let spec = GeneratorSpec {
        n_documents: 10,
        ..GeneratorSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    let vocab = build_vocabulary(corpus.train.iter().map(|p| p.text.as_str()), 4000).unwrap();
    let cfg = EncoderConfig {
        hidden_dim: 16,
        ffn_dim: 16,
        n_layers: 1,
        max_sequence_length: 32,
        seed: 9,
        ..EncoderConfig::default()
    };
    let train = build_samples(&corpus.train, ContextMode::NoContext, DEFAULT_SEP);
    let tree = build_fewshot_bundles(&train, &[18], 1, 2).unwrap();
    Fixture {
        base: ModelCheckpoint::new(cfg, HeadConfig::default(), vocab).unwrap(),
        classes: spec.class_names(),
        bundle: tree.bundle(18, 1).unwrap().clone(),
        holdout: build_samples(&corpus.test, ContextMode::NoContext, DEFAULT_SEP),
        spec,
    }
}

fn quick(templates: usize) -> PetConfig {
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    PetConfig {
        templates: builtin_templates().core[..templates].to_vec(),
        train: tc.clone(),
        distill: Some(tc),
        max_unlabeled: Some(40),
        ..PetConfig::default()
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn distillation_targets_follow_temperature_scaling() {
    let p = vec![vec![0.7, 0.2, 0.1], vec![0.25, 0.25, 0.5]];
    let same = distill_targets(&p, 1.0);
    for (a, b) in same.iter().flatten().zip(p.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
    // At T = 2 targets are proportional to sqrt(p).
    for (row, orig) in distill_targets(&p, 2.0).iter().zip(&p) {
        let norm: f64 = orig.iter().map(|v| v.sqrt()).sum();
        for (t, v) in row.iter().zip(orig) {
            assert!((t - v.sqrt() / norm).abs() < 1e-12);
        }
    }
    let flat = distill_targets(&p, 1e6);
    assert!(flat.iter().flatten().all(|v| (v - 1.0 / 3.0).abs() < 1e-5));
}

#[test]
fn soft_labels_are_the_softmax_of_weighted_mean_logits() {
    let f = fixture();
    let mut cfg = quick(2);
    let models = pet_step1_finetune(&f.base, &f.bundle, &f.classes, &cfg).unwrap();
    assert_eq!(models.len(), 2);
    let unlabeled = &f.bundle.unlabeled[..10];
    for weighting in [EnsembleWeighting::Uniform, EnsembleWeighting::TrainAccuracy] {
        cfg.ensemble_weighting = weighting;
        let soft = pet_step2_soft_label(&models, unlabeled, &f.classes, &cfg).unwrap();
        let raw: Vec<f64> = match weighting {
            EnsembleWeighting::Uniform => vec![1.0, 1.0],
            EnsembleWeighting::TrainAccuracy => models.iter().map(|m| m.train_accuracy).collect(),
        };
        let total: f64 = raw.iter().sum();
        for (s, probs) in unlabeled.iter().zip(&soft.probs) {
            let logits: Vec<Vec<f64>> = models.iter().map(|m| m.logits(s).unwrap()).collect();
            let mean: Vec<f64> = (0..f.classes.len())
                .map(|c| logits.iter().zip(&raw).map(|(l, w)| w * l[c]).sum::<f64>() / total)
                .collect();
            for (a, b) in probs.iter().zip(softmax(&mean)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(soft.sample_ids, unlabeled.iter().map(Sample::id).collect::<Vec<_>>());
    }
}

#[test]
fn run_pet_is_reproducible_and_writes_its_artifacts() {
    let f = fixture();
    let cfg = quick(2);
    let dir = tempfile::tempdir().unwrap();
    let a = run_pet(&f.base, &f.bundle, &f.holdout, &f.classes, &cfg, Some(dir.path())).unwrap();
    let b = run_pet(&f.base, &f.bundle, &f.holdout, &f.classes, &cfg, None).unwrap();
    assert_eq!(a.soft_labels.probs, b.soft_labels.probs);
    assert_eq!(a.metrics.accuracy, b.metrics.accuracy);
    assert_eq!(a.soft_labels.len(), 40);
    let support: u64 = f.classes.iter().map(|c| a.metrics.class(c).unwrap().support).sum();
    assert_eq!(support as usize, f.holdout.len());
    assert!(dir.path().join("run.json").is_file());
    for t in &cfg.templates {
        let step = dir.path().join("step1").join(t.name());
        assert!(step.join("checkpoint").is_file());
        let v = Verbalizer::parse(
            &std::fs::read_to_string(step.join("verbalizer.txt")).unwrap(),
            &f.base.vocab,
        )
        .unwrap();
        assert_eq!(v.classes(), f.classes.as_slice());
    }
}

#[test]
fn run_pet_rejects_empty_inputs() {
    let f = fixture();
    let cfg = quick(1);
    assert!(run_pet(&f.base, &f.bundle, &[], &f.classes, &cfg, None).is_err());
    let empty = FewShotBundle {
        labeled: Vec::new(),
        ..f.bundle.clone()
    };
    assert!(run_pet(&f.base, &empty, &f.holdout, &f.classes, &cfg, None).is_err());
    let no_templates = PetConfig {
        templates: Vec::new(),
        ..cfg
    };
    assert!(run_pet(&f.base, &f.bundle, &f.holdout, &f.classes, &no_templates, None).is_err());
}

#[test]
fn manual_verbalizer_is_used_for_every_template() {
    let f = fixture();
    let manual = f
        .spec
        .classes
        .iter()
        .map(|c| (c.name.clone(), c.cue().to_string()))
        .collect();
    let cfg = PetConfig {
        verbalizer_mode: cloze_pet::pet::VerbalizerMode::Manual,
        manual_verbalizer: Some(manual),
        ..quick(2)
    };
    let models = pet_step1_finetune(&f.base, &f.bundle, &f.classes, &cfg).unwrap();
    let cues: Vec<&str> = f.spec.classes.iter().map(|c| c.cue()).collect();
    for m in models {
        assert_eq!(m.verbalizer.words(), cues.as_slice());
    }
}

#[test]
fn baselines_score_the_whole_holdout() {
    let f = fixture();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (ckpt, report) = run_sc(&f.base, &f.bundle.labeled, &f.holdout, &f.classes, &tc).unwrap();
    assert_eq!(ckpt.heads().classifier, Some(f.classes.len()));
    assert!((0.0..=1.0).contains(&report.accuracy));
    let v = Verbalizer::parse(&f.spec.cue_verbalizer_text(), &f.base.vocab).unwrap();
    let zs = run_zero_shot(&f.base, &v, &builtin_templates().core[0], &f.holdout, &f.classes).unwrap();
    let support: u64 = f.classes.iter().map(|c| zs.class(c).unwrap().support).sum();
    assert_eq!(support as usize, f.holdout.len());
}
