//! Synthetic letter corpus with planted section cues.
//!
//! Each document is a sequence of sections in the canonical letter order.
//! Every class has a unique cue word and its own Zipf ranking over one shared
//! topic pool, so topic words are evidence for several classes at once and
//! only their mix points to a section. `cue_strength` is the chance that a
//! paragraph contains its class cue; `context_dependency` is the chance that a
//! follow-up paragraph of a section carries neither cue nor topic words, so only
//! the paragraph before it (which then always holds the cue) identifies the section.

use std::collections::BTreeSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_jsonl, CorpusError, LabelSchema, Paragraph};
use crate::util::derived_rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One section class: relative frequency, cue word and shared topic words by descending rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub share: f64,
    pub cue: String,
    pub topic_words: Vec<String>,
}

impl ClassSpec {
    pub fn cue(&self) -> &str {
        &self.cue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n_documents: usize,
    pub classes: Vec<ClassSpec>,
    pub filler_words: Vec<String>,
    /// Expected paragraphs per document.
    pub paragraphs_per_document: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Share of words drawn from the class topic ranking.
    pub topic_rate: f64,
    pub zipf_exponent: f64,
    pub cue_strength: f64,
    pub context_dependency: f64,
    /// Chance of swapping each pair of adjacent sections.
    pub shuffle_probability: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Paragraph counts of the nine merged classes in the reference training split.
const CLASS_COUNTS: [(&str, f64); 9] = [
    ("Anrede", 402.0),
    ("Diagnosen", 8023.0),
    ("AllergienUnverträglichkeitenRisiken", 1031.0),
    ("Anamnese", 1188.0),
    ("Medikation", 6148.0),
    ("Befunde", 15396.0),
    ("Zusammenfassung", 3645.0),
    ("Mix", 945.0),
    ("Abschluss", 2805.0),
];

const CUES: [&str; 9] = [
    "geehrte",
    "diagnose",
    "allergie",
    "anamnese",
    "medikation",
    "befund",
    "zusammenfassung",
    "verlauf",
    "grüße",
];

const TOPIC_WORDS: usize = 300;
/// Share of class-word draws that yield the cue in a cued paragraph.
const CUE_SHARE: f64 = 0.25;
const FILLER_WORDS: usize = 150;

/// Deterministic pseudo-word lexicon, disjoint from the cue words.
fn lexicon(n: usize) -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sch", "st",
    ];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ei"];
    const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "t"];
    let mut rng = derived_rng(0, "synth-lexicon");
    let reserved: BTreeSet<&str> = CUES.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let words = lexicon(TOPIC_WORDS + FILLER_WORDS);
        let (pool, filler) = words.split_at(TOPIC_WORDS);
        let total: f64 = CLASS_COUNTS.iter().map(|c| c.1).sum();
        let classes = CLASS_COUNTS
            .iter()
            .zip(CUES)
            .map(|(&(name, count), cue)| {
                let mut ranking = pool.to_vec();
                ranking.shuffle(&mut derived_rng(0, &format!("synth-ranking/{name}")));
                ClassSpec {
                    name: name.to_string(),
                    share: count / total,
                    cue: cue.to_string(),
                    topic_words: ranking,
                }
            })
            .collect();
        Self {
            n_documents: 100,
            classes,
            filler_words: filler.to_vec(),
            paragraphs_per_document: 20.0,
            min_words: 8,
            max_words: 14,
            topic_rate: 0.5,
            zipf_exponent: 0.8,
            cue_strength: 0.5,
            context_dependency: 0.0,
            shuffle_probability: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        for (name, p) in [
            ("topic_rate", self.topic_rate),
            ("cue_strength", self.cue_strength),
            ("context_dependency", self.context_dependency),
            ("shuffle_probability", self.shuffle_probability),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.n_documents == 0 || self.classes.is_empty() || self.filler_words.is_empty() {
            return bad("need documents, classes and filler words".into());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("word range must satisfy 0 < min_words <= max_words".into());
        }
        if !(self.zipf_exponent >= 0.0) || !(self.paragraphs_per_document > 0.0) {
            return bad("zipf_exponent must be non-negative and paragraphs_per_document positive".into());
        }
        let mut names = BTreeSet::new();
        let mut cues = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(&c.name) {
                return bad(format!("duplicate class {:?}", c.name));
            }
            if c.topic_words.is_empty() || !(c.share > 0.0) {
                return bad(format!("class {:?} needs topic words and a positive share", c.name));
            }
            if !cues.insert(&c.cue) {
                return bad(format!("cue {:?} used twice", c.cue));
            }
        }
        let topic: BTreeSet<&String> = self.classes.iter().flat_map(|c| &c.topic_words).collect();
        let filler: BTreeSet<&String> = self.filler_words.iter().collect();
        if let Some(w) = cues.iter().find(|w| topic.contains(*w) || filler.contains(*w)) {
            return bad(format!("cue {w:?} is also a topic or filler word"));
        }
        if let Some(w) = topic.intersection(&filler).next() {
            return bad(format!("word {w:?} is both topic and filler"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn schema(&self) -> LabelSchema {
        LabelSchema::identity(self.class_names())
    }

    /// Mean paragraphs of each class per document beyond the guaranteed first one.
    pub fn extra_rates(&self) -> Vec<f64> {
        let total: f64 = self.classes.iter().map(|c| c.share).sum();
        self.classes
            .iter()
            .map(|c| (c.share / total * self.paragraphs_per_document - 1.0).max(0.0))
            .collect()
    }

    /// Expected class proportions of generated paragraphs.
    pub fn expected_proportions(&self) -> Vec<f64> {
        let per_doc: Vec<f64> = self.extra_rates().iter().map(|l| 1.0 + l).collect();
        let total: f64 = per_doc.iter().sum();
        per_doc.iter().map(|c| c / total).collect()
    }

    /// `class = cue` lines usable as a manual verbalizer.
    pub fn cue_verbalizer_text(&self) -> String {
        self.classes
            .iter()
            .map(|c| format!("{} = {}\n", c.name, c.cue()))
            .collect()
    }

    /// Every word the generator can emit, without duplicates.
    pub fn all_words(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.classes
            .iter()
            .map(|c| &c.cue)
            .chain(self.classes.iter().flat_map(|c| &c.topic_words))
            .chain(&self.filler_words)
            .map(String::as_str)
            .filter(|w| seen.insert(*w))
            .collect()
    }
}

/// Generated paragraphs, split by document.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Paragraph>,
    pub test: Vec<Paragraph>,
}

impl SynthCorpus {
    pub fn all(&self) -> Vec<Paragraph> {
        let mut all: Vec<Paragraph> = self.train.iter().chain(&self.test).cloned().collect();
        all.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.index.cmp(&b.index)));
        all
    }
}

struct Sampler<'a> {
    spec: &'a GeneratorSpec,
    zipf: Vec<WeightedIndex<f64>>,
}

impl<'a> Sampler<'a> {
    fn new(spec: &'a GeneratorSpec) -> Result<Self, SynthError> {
        let zipf = spec
            .classes
            .iter()
            .map(|c| {
                let weights: Vec<f64> = (0..c.topic_words.len())
                    .map(|r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent))
                    .collect();
                WeightedIndex::new(weights).map_err(|e| SynthError::InvalidSpec(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { spec, zipf })
    }

    fn filler<R: Rng>(&self, rng: &mut R) -> &'a str {
        &self.spec.filler_words[rng.random_range(0..self.spec.filler_words.len())]
    }

    /// A dependent paragraph is filler only. Otherwise it holds at least one
    /// class word, and the cue appears (possibly repeated) exactly when `cued`.
    fn paragraph<R: Rng>(&self, class: usize, dependent: bool, cued: bool, rng: &mut R) -> String {
        let n = rng.random_range(self.spec.min_words..=self.spec.max_words);
        let spec = &self.spec.classes[class];
        let draw = |rng: &mut R| -> &'a str {
            if cued && rng.random::<f64>() < CUE_SHARE {
                &spec.cue
            } else {
                &spec.topic_words[self.zipf[class].sample(rng)]
            }
        };
        let mut words: Vec<&str> = Vec::with_capacity(n + 1);
        let mut topical = 0;
        for _ in 0..n {
            if !dependent && rng.random::<f64>() < self.spec.topic_rate {
                words.push(draw(rng));
                topical += 1;
            } else {
                words.push(self.filler(rng));
            }
        }
        if !dependent && topical == 0 {
            let at = rng.random_range(0..n);
            words[at] = draw(rng);
        }
        if cued && !words.contains(&spec.cue.as_str()) {
            let at = rng.random_range(0..=n);
            words.insert(at, &spec.cue);
        }
        words.join(" ")
    }
}

/// Generate a corpus; deterministic per `spec.seed`.
pub fn generate(spec: &GeneratorSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let sampler = Sampler::new(spec)?;
    let mut rng = derived_rng(spec.seed, "synth-documents");
    let poisson: Vec<Option<Poisson<f64>>> = spec
        .extra_rates()
        .into_iter()
        .map(|l| if l > 0.0 { Poisson::new(l).ok() } else { None })
        .collect();
    let width = spec.n_documents.to_string().len().max(4);
    let mut docs: Vec<Vec<Paragraph>> = Vec::with_capacity(spec.n_documents);
    for d in 0..spec.n_documents {
        let doc_id = format!("doc{d:0width$}");
        let mut sections: Vec<(usize, usize)> = poisson
            .iter()
            .enumerate()
            .map(|(c, p)| (c, 1 + p.as_ref().map_or(0, |p| p.sample(&mut rng) as usize)))
            .collect();
        for i in 0..sections.len().saturating_sub(1) {
            if rng.random::<f64>() < spec.shuffle_probability {
                sections.swap(i, i + 1);
            }
        }
        let mut paragraphs = Vec::new();
        for (class, count) in sections {
            let mut dependent = vec![false; count];
            for j in 1..count {
                dependent[j] = !dependent[j - 1] && rng.random::<f64>() < spec.context_dependency;
            }
            for j in 0..count {
                // The paragraph before a dependent one carries the cue for both.
                let cued = !dependent[j]
                    && (dependent.get(j + 1).copied().unwrap_or(false) || rng.random::<f64>() < spec.cue_strength);
                let text = sampler.paragraph(class, dependent[j], cued, &mut rng);
                paragraphs.push(Paragraph::new(
                    doc_id.clone(),
                    paragraphs.len(),
                    text,
                    spec.classes[class].name.clone(),
                ));
            }
        }
        docs.push(paragraphs);
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut derived_rng(spec.seed, "synth-split"));
    let n_test = (spec.test_fraction * docs.len() as f64).round() as usize;
    let test_docs: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, doc) in docs.into_iter().enumerate() {
        if test_docs.contains(&i) {
            test.extend(doc);
        } else {
            train.extend(doc);
        }
    }
    Ok(SynthCorpus { train, test })
}

/// Topic-free text over the full lexicon, standing in for a general-domain corpus.
pub fn general_texts(spec: &GeneratorSpec, n_texts: usize, seed: u64) -> Vec<String> {
    let words = spec.all_words();
    let mut rng = derived_rng(seed, "synth-general");
    (0..n_texts)
        .map(|_| {
            let n = rng.random_range(spec.min_words..=spec.max_words);
            let t: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
            t.join(" ")
        })
        .collect()
}

/// Write `train.jsonl`, `test.jsonl`, `corpus.jsonl`, `general.txt`, `verbalizer.txt` and `spec.json`.
pub fn write_synth(dir: &Path, spec: &GeneratorSpec, corpus: &SynthCorpus) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, rows: &[Paragraph]| -> Result<(), SynthError> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, rows)?;
        std::fs::write(dir.join(name), buf)?;
        Ok(())
    };
    write("train.jsonl", &corpus.train)?;
    write("test.jsonl", &corpus.test)?;
    write("corpus.jsonl", &corpus.all())?;
    let general = general_texts(spec, corpus.train.len(), spec.seed);
    std::fs::write(dir.join("general.txt"), general.join("\n") + "\n")?;
    std::fs::write(dir.join("verbalizer.txt"), spec.cue_verbalizer_text())?;
    std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid_and_mirrors_the_reference_classes() {
        let spec = GeneratorSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.class_names(), LabelSchema::default().classes);
        assert_eq!(spec.classes[5].cue(), "befund");
        let total: f64 = spec.classes.iter().map(|c| c.share).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(spec.all_words().len() < 600);
    }

    #[test]
    fn rejects_bad_probabilities() {
        let spec = GeneratorSpec {
            cue_strength: 1.5,
            ..GeneratorSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn split_is_by_document() {
        let c = generate(&GeneratorSpec {
            n_documents: 20,
            ..GeneratorSpec::default()
        })
        .unwrap();
        let train: BTreeSet<&str> = c.train.iter().map(|p| p.doc_id.as_str()).collect();
        let test: BTreeSet<&str> = c.test.iter().map(|p| p.doc_id.as_str()).collect();
        assert_eq!(train.len(), 16);
        assert_eq!(test.len(), 4);
        assert!(train.is_disjoint(&test));
    }
}
