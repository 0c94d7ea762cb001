use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

/// Prefix marking a word-internal continuation piece.
pub const CONTINUATION: &str = "##";

/// Surface forms passed through the tokenizer as special tokens.
const PASSTHROUGH: [&str; 2] = [SEP, MASK];

/// Dense token ↔ id mapping including the five special tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    specials: [u32; 5],
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = ModelError;

    fn try_from(tokens: Vec<String>) -> Result<Self, ModelError> {
        Vocabulary::new(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// A pre-split word: either a special token or a run of text to be piece-matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub special: bool,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(ModelError::InvalidVocabulary("empty token".into()));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(ModelError::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        let mut specials = [0u32; 5];
        for (slot, s) in specials.iter_mut().zip(SPECIALS) {
            *slot = *index
                .get(s)
                .ok_or_else(|| ModelError::InvalidVocabulary(format!("missing special token {s}")))?;
        }
        Ok(Self {
            tokens,
            index,
            specials,
        })
    }

    /// Build a vocabulary from word frequencies.
    ///
    /// Layout: specials, `extra` tokens, then words by descending frequency
    /// (ties lexicographic), then single-character pieces (`c` and `##c`) for
    /// every character seen, so unseen words still decompose.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        extra: &[&str],
        max_size: usize,
        min_freq: usize,
    ) -> Result<Self, ModelError> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeMap<char, ()> = BTreeMap::new();
        let mut feed = |text: &str, counts: &mut BTreeMap<String, usize>| {
            for w in pre_split(text) {
                if w.special {
                    continue;
                }
                for ch in w.text.chars() {
                    chars.insert(ch, ());
                }
                *counts.entry(w.text).or_default() += 1;
            }
        };
        for t in texts {
            feed(t, &mut counts);
        }
        let mut extra_words = Vec::new();
        for e in extra {
            let mut tmp = BTreeMap::new();
            feed(e, &mut tmp);
            for w in pre_split(e).into_iter().filter(|w| !w.special) {
                if !extra_words.contains(&w.text) {
                    extra_words.push(w.text);
                }
            }
        }

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut taken: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for w in extra_words {
            if taken.insert(w.clone()) {
                tokens.push(w);
            }
        }
        let pieces: Vec<String> = chars
            .keys()
            .flat_map(|ch| [ch.to_string(), format!("{CONTINUATION}{ch}")])
            .collect();
        let budget = max_size.saturating_sub(pieces.len());
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in words {
            if tokens.len() >= budget {
                break;
            }
            if taken.insert(w.clone()) {
                tokens.push(w);
            }
        }
        for p in pieces {
            if taken.insert(p.clone()) {
                tokens.push(p);
            }
        }
        if tokens.len() > max_size {
            return Err(ModelError::InvalidVocabulary(format!(
                "{} required tokens exceed the size limit {max_size}",
                tokens.len()
            )));
        }
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        self.specials[0]
    }
    pub fn unk_id(&self) -> u32 {
        self.specials[1]
    }
    pub fn cls_id(&self) -> u32 {
        self.specials[2]
    }
    pub fn sep_id(&self) -> u32 {
        self.specials[3]
    }
    pub fn mask_id(&self) -> u32 {
        self.specials[4]
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(&id)
    }

    /// Pieces of one non-special word, or `None` when no greedy cover exists.
    fn pieces(&self, word: &str) -> Option<Vec<u32>> {
        if let Some(id) = self.id(word) {
            return Some(vec![id]);
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let from = chars[start].0;
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let to = if end == chars.len() { word.len() } else { chars[end].0 };
                let piece = &word[from..to];
                let id = if start == 0 {
                    self.id(piece)
                } else {
                    self.id(&format!("{CONTINUATION}{piece}"))
                };
                if let Some(id) = id {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end) = found?;
            out.push(id);
            start = end;
        }
        Some(out)
    }

    /// Token ids of each pre-split word, in order.
    pub fn tokenize_words(&self, text: &str) -> Vec<(Word, Vec<u32>)> {
        pre_split(text)
            .into_iter()
            .map(|w| {
                let ids = if w.special {
                    vec![self.id(&w.text).unwrap_or(self.unk_id())]
                } else {
                    self.pieces(&w.text).unwrap_or_else(|| vec![self.unk_id()])
                };
                (w, ids)
            })
            .collect()
    }
}

/// Deterministic tokenization: lowercase, whitespace and punctuation split,
/// greedy longest-match pieces, `[UNK]` for words without a cover. Only the
/// literal surface forms `[SEP]` and `[MASK]` produce special ids.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    vocab
        .tokenize_words(text)
        .into_iter()
        .flat_map(|(_, ids)| ids)
        .collect()
}

/// Split text into words: special surface forms, punctuation characters and
/// lowercased alphanumeric runs.
pub fn pre_split(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, out: &mut Vec<Word>| {
        if !current.is_empty() {
            out.push(Word {
                text: std::mem::take(current).to_lowercase(),
                special: false,
            });
        }
    };
    let mut rest = text;
    while let Some(ch) = rest.chars().next() {
        if ch == '[' {
            if let Some(s) = PASSTHROUGH.iter().find(|s| rest.starts_with(**s)) {
                flush(&mut current, &mut out);
                out.push(Word {
                    text: s.to_string(),
                    special: true,
                });
                rest = &rest[s.len()..];
                continue;
            }
        }
        if ch.is_whitespace() {
            flush(&mut current, &mut out);
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            flush(&mut current, &mut out);
            out.push(Word {
                text: ch.to_string(),
                special: false,
            });
        }
        rest = &rest[ch.len_utf8()..];
    }
    flush(&mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Vocabulary {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(["hyper", "##tonie", "und", ":", "a"].map(String::from));
        Vocabulary::new(tokens).unwrap()
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("", &small()).is_empty());
    }

    #[test]
    fn mask_passthrough() {
        let v = small();
        let ids = tokenize("und [MASK] und", &v);
        assert_eq!(ids.iter().filter(|&&i| i == v.mask_id()).count(), 1);
        assert_eq!(ids[1], v.mask_id());
        assert_eq!(
            tokenize("x[SEP]und", &v),
            vec![v.unk_id(), v.sep_id(), v.id("und").unwrap()]
        );
    }

    #[test]
    fn unknown_word_is_one_unk() {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(["ab", "cd", "##e"].map(String::from));
        let v = Vocabulary::new(tokens).unwrap();
        assert_eq!(tokenize("zzz", &v), vec![v.unk_id()]);
        // Partial covers do not count: "abx" has no piece for "x".
        assert_eq!(tokenize("abx", &v), vec![v.unk_id()]);
        assert_eq!(tokenize("abe", &v), vec![v.id("ab").unwrap(), v.id("##e").unwrap()]);
    }

    #[test]
    fn greedy_longest_match_and_punctuation() {
        let v = small();
        let ids = tokenize("Hypertonie: und", &v);
        let names: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(names, ["hyper", "##tonie", ":", "und"]);
    }

    #[test]
    fn specials_must_be_present_once() {
        assert!(Vocabulary::new(vec!["a".into()]).is_err());
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.push(MASK.into());
        assert!(Vocabulary::new(tokens).is_err());
    }

    #[test]
    fn builder_orders_by_frequency_and_covers_characters() {
        let v = Vocabulary::build(["b a a", "c a b"], &["sektion"], 100, 1).unwrap();
        assert_eq!(&v.tokens()[..5], &SPECIALS.map(String::from));
        assert_eq!(v.token(5), Some("sektion"));
        assert_eq!(v.token(6), Some("a"));
        assert_eq!(v.token(7), Some("b"));
        // Unseen word made of seen characters decomposes into pieces.
        assert_eq!(tokenize("cab", &v).len(), 3);
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
    }
}
