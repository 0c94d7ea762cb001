use std::collections::{BTreeMap, BTreeSet};

use cloze_pet::corpus::{
    apply_schema, build_fewshot_bundles, build_samples, read_sample_csv, write_fewshot_tree, ContextMode, LabelSchema,
    Paragraph, DEFAULT_SEP,
};
use cloze_pet::synth::{generate, GeneratorSpec};
use proptest::prelude::*;

fn corpus_with(counts: &[usize]) -> Vec<Paragraph> {
    // Round-robin the labels over a few documents so neighbors cross classes.
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.sort_by_key(|&c| c * 7 % 5);
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let doc = i % 4;
            let at = index.entry(doc).or_default();
            *at += 1;
            Paragraph::new(format!("d{doc}"), *at - 1, format!("w{i} t{c}"), format!("class{c}"))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bundles_are_stratified_partitions(
        counts in prop::collection::vec(1usize..30, 2..5),
        n in 1usize..12,
        n_sets in 1usize..4,
        seed in 0u64..1000,
    ) {
        let train = build_samples(&corpus_with(&counts), ContextMode::PrevContext, DEFAULT_SEP);
        let tree = build_fewshot_bundles(&train, &[n], n_sets, seed).unwrap();
        prop_assert_eq!(tree.bundles.len(), n_sets);
        prop_assert_eq!(tree.warnings.len(), counts.iter().filter(|&&c| c < n).count());
        let all: BTreeSet<String> = train.iter().map(|s| s.id()).collect();
        for b in &tree.bundles {
            for (c, &pop) in counts.iter().enumerate() {
                let got = b.labeled.iter().filter(|s| s.main.label == format!("class{c}")).count();
                prop_assert_eq!(got, pop.min(n));
            }
            let labeled: BTreeSet<String> = b.labeled.iter().map(|s| s.id()).collect();
            let unlabeled: BTreeSet<String> = b.unlabeled.iter().map(|s| s.id()).collect();
            prop_assert_eq!(labeled.len(), b.labeled.len());
            prop_assert!(labeled.is_disjoint(&unlabeled));
            prop_assert_eq!(labeled.union(&unlabeled).cloned().collect::<BTreeSet<_>>(), all.clone());
        }
        let again = build_fewshot_bundles(&train, &[n], n_sets, seed).unwrap();
        prop_assert_eq!(again.bundles, tree.bundles);
    }
}

#[test]
fn written_tree_reads_back_in_every_context_mode() {
    let spec = GeneratorSpec {
        n_documents: 8,
        ..GeneratorSpec::default()
    };
    let corpus = generate(&spec).unwrap();
    for mode in [ContextMode::NoContext, ContextMode::PrevContext, ContextMode::Context] {
        let train = build_samples(&corpus.train, mode, DEFAULT_SEP);
        let holdout = build_samples(&corpus.test, mode, DEFAULT_SEP);
        let tree = build_fewshot_bundles(&train, &[3, 5], 2, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fewshot_tree(dir.path(), &tree, &holdout).unwrap();

        let back = read_sample_csv(&dir.path().join("holdout/full_holdout.csv"), mode, DEFAULT_SEP).unwrap();
        assert_eq!(back, holdout);
        let b = tree.bundle(5, 2).unwrap();
        let labeled = read_sample_csv(&dir.path().join("5shots/set_2.csv"), mode, DEFAULT_SEP).unwrap();
        assert_eq!(labeled, b.labeled);
        let unlabeled = read_sample_csv(&dir.path().join("5shots/unlabeled_2.csv"), mode, DEFAULT_SEP).unwrap();
        assert_eq!(unlabeled.len(), b.unlabeled.len());
        assert!(unlabeled.iter().all(|s| s.label().is_none()));
        assert_eq!(
            unlabeled.iter().map(|s| &s.rendered).collect::<Vec<_>>(),
            b.unlabeled.iter().map(|s| &s.rendered).collect::<Vec<_>>()
        );
    }
}

#[test]
fn context_rendering_joins_document_neighbors() {
    let spec = GeneratorSpec {
        n_documents: 3,
        ..GeneratorSpec::default()
    };
    let paras = generate(&spec).unwrap().train;
    let samples = build_samples(&paras, ContextMode::Context, DEFAULT_SEP);
    let sep = format!(" {DEFAULT_SEP} ");
    for (i, s) in samples.iter().enumerate() {
        let same_doc = |j: usize| paras.get(j).filter(|p| p.doc_id == s.main.doc_id);
        let prev = i.checked_sub(1).and_then(same_doc);
        let next = same_doc(i + 1);
        let mut expected: Vec<&str> = prev.map(|p| p.text.as_str()).into_iter().collect();
        expected.push(&s.main.text);
        expected.extend(next.map(|p| p.text.as_str()));
        assert_eq!(s.rendered, expected.join(&sep));
        let plain = s.with_mode(ContextMode::NoContext, DEFAULT_SEP);
        assert_eq!(plain.rendered, s.main.text);
    }
}

#[test]
fn schema_merges_reindex_documents() {
    let raw = vec![
        Paragraph::new("a", 0, "hallo", "Anrede"),
        Paragraph::new("a", 1, "labor werte", "Labor"),
        Paragraph::new("a", 2, "ekg normal", "Befunde"),
        Paragraph::new("a", 3, "logo", "Briefkopf"),
        Paragraph::new("a", 4, "gruss", "Abschluss"),
    ];
    let schema = LabelSchema {
        classes: vec!["Anrede".into(), "Befunde".into(), "Abschluss".into()],
        merge_map: BTreeMap::from([("Labor".to_string(), "Befunde".to_string())]),
        dropped: BTreeSet::from(["Briefkopf".to_string()]),
    };
    let out = apply_schema(&raw, &schema).unwrap();
    let view: Vec<(usize, &str, &str)> = out
        .iter()
        .map(|p| (p.index, p.label.as_str(), p.text.as_str()))
        .collect();
    assert_eq!(
        view,
        [
            (0, "Anrede", "hallo"),
            (1, "Befunde", "labor werte"),
            (2, "Befunde", "ekg normal"),
            (3, "Abschluss", "gruss")
        ]
    );
}
