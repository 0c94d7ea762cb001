use cloze_pet::explain::{
    context_contribution_ratio, group_text, read_jsonl, render_report, shapley_exact, shapley_sampled, write_jsonl,
    FeatureGroup, FeatureGrouping, ReportFormat, RATIO_SENTINEL,
};
use cloze_pet::model::{classify, EncoderConfig, HeadConfig, ModelCheckpoint, Vocabulary, SPECIALS};

const MASK: u32 = 0;

fn singletons(n: usize) -> (Vec<u32>, FeatureGrouping) {
    let ids: Vec<u32> = (1..=n as u32).collect();
    let groups = (0..n)
        .map(|i| FeatureGroup {
            text: format!("t{i}"),
            start: i,
            end: i + 1,
        })
        .collect();
    (ids, FeatureGrouping::new(groups).unwrap())
}

fn present(x: &[u32], i: usize) -> f64 {
    (x[i] != MASK) as u8 as f64
}

#[test]
fn additive_games_get_their_weights_back() {
    let weights = [0.3, -0.1, 0.05, 0.2, 0.0];
    let (ids, groups) = singletons(weights.len());
    let f = |x: &[u32]| {
        let v = 0.1 + weights.iter().enumerate().map(|(i, w)| w * present(x, i)).sum::<f64>();
        vec![v, 1.0 - v]
    };
    let exact = shapley_exact(f, &ids, &groups, 0, MASK).unwrap();
    let sampled = shapley_sampled(f, &ids, &groups, 0, MASK, 50, 3).unwrap();
    for (i, w) in weights.iter().enumerate() {
        assert!((exact.phi[i] - w).abs() < 1e-12);
        assert!((sampled.phi[i] - w).abs() < 1e-12);
        assert!(sampled.stderr.as_ref().unwrap()[i] < 1e-12);
    }
    assert!((exact.base_value - 0.1).abs() < 1e-12);
    // Attributions to the complementary class mirror the target's.
    let other = shapley_exact(f, &ids, &groups, 1, MASK).unwrap();
    for (a, b) in exact.phi.iter().zip(&other.phi) {
        assert!((a + b).abs() < 1e-12);
    }
}

#[test]
fn interaction_is_split_between_symmetric_players() {
    let (ids, groups) = singletons(4);
    // Unanimity game on {0, 2} plus a dummy pair.
    let f = |x: &[u32]| vec![present(x, 0) * present(x, 2), 1.0];
    let r = shapley_exact(f, &ids, &groups, 0, MASK).unwrap();
    assert_eq!(r.phi, vec![0.5, 0.0, 0.5, 0.0]);
    let s = shapley_sampled(f, &ids, &groups, 0, MASK, 400, 9).unwrap();
    assert_eq!(s.phi[1], 0.0);
    assert_eq!(s.phi[3], 0.0);
    assert!((s.phi[0] + s.phi[2] - 1.0).abs() < 1e-12);
    assert!((s.phi[0] - 0.5).abs() < 0.1);
}

#[test]
fn groups_must_fit_the_input() {
    let (_, groups) = singletons(3);
    assert!(shapley_exact(|_: &[u32]| vec![1.0], &[1, 2], &groups, 0, MASK).is_err());
    let (ids, groups) = singletons(2);
    assert!(shapley_exact(|_: &[u32]| vec![1.0], &ids, &groups, 3, MASK).is_err());
}

fn vocab() -> Vocabulary {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(["herz", "lunge", "niere", "befund", "ohne", "##s"].map(String::from));
    Vocabulary::new(tokens).unwrap()
}

#[test]
fn context_attribution_on_a_real_classifier() {
    let v = vocab();
    let cfg = EncoderConfig {
        max_sequence_length: 24,
        hidden_dim: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 8,
        dropout: 0.0,
        init_std: 0.5,
        seed: 13,
        ..EncoderConfig::default()
    };
    let heads = HeadConfig {
        classifier: Some(3),
        ..HeadConfig::default()
    };
    let model = ModelCheckpoint::new(cfg, heads, v.clone()).unwrap();
    let text = "herz lunge [SEP] befund ohne niere [SEP] lunge herzs";
    let tg = group_text(text, &v, 22, false).unwrap();
    assert_eq!(tg.segments, [0, 0, 1, 1, 1, 2, 2]);
    assert_eq!(tg.segment_spans(), [0..2, 2..5, 5..7]);
    assert_eq!(tg.grouping.groups()[6].text, "herzs");
    let split = group_text(text, &v, 22, true).unwrap();
    assert_eq!(split.grouping.len(), 8);

    let f = |x: &[u32]| classify(&model, x).unwrap();
    let classes: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let report = shapley_exact(f, &tg.ids, &tg.grouping, 1, v.mask_id())
        .unwrap()
        .with_labels(&classes);
    assert!((report.reconstructed_value() - report.full_value()).abs() < 1e-9);

    let spans = tg.segment_spans();
    let ratio = context_contribution_ratio(&report, spans[1].clone(), &[spans[0].clone(), spans[2].clone()]);
    let main: f64 = report.phi[2..5].iter().sum();
    let context: f64 = report.phi[..2].iter().chain(&report.phi[5..]).sum();
    assert!((ratio - main / context).abs() < 1e-9);
    assert_eq!(context_contribution_ratio(&report, 0..7, &[]), RATIO_SENTINEL);

    let mut buf = Vec::new();
    write_jsonl(&mut buf, std::slice::from_ref(&report)).unwrap();
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].groups, report.groups);
    for (a, b) in back[0].phi.iter().zip(&report.phi) {
        assert!((a - b).abs() < 1e-12);
    }
    let html = render_report(&report, ReportFormat::Html);
    for g in report.groups.iter() {
        assert!(html.contains(&g.text));
    }
    assert!(render_report(&report, ReportFormat::Ansi).contains("\u{1b}["));
}

#[test]
fn truncation_drops_whole_words_from_the_front() {
    let v = vocab();
    let tg = group_text("herzs lunge [SEP] niere", &v, 3, false).unwrap();
    let texts: Vec<&str> = tg.grouping.groups().iter().map(|g| g.text.as_str()).collect();
    assert_eq!(texts, ["lunge", "niere"]);
    // The separator before `niere` still counts, so segment numbering survives.
    assert_eq!(tg.segments, [0, 1]);
}
