use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::model::Vocabulary;

/// A contiguous half-open token span `[start, end)` treated as one feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Ordered, disjoint token spans over one model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGrouping {
    groups: Vec<FeatureGroup>,
}

impl FeatureGrouping {
    pub fn new(groups: Vec<FeatureGroup>) -> Result<Self, ExplainError> {
        let mut last_end = 0;
        for (i, g) in groups.iter().enumerate() {
            if g.start >= g.end {
                return Err(ExplainError::InvalidGrouping(format!("group {i} is empty")));
            }
            if i > 0 && g.start < last_end {
                return Err(ExplainError::InvalidGrouping(format!(
                    "group {i} overlaps or precedes its predecessor"
                )));
            }
            last_end = g.end;
        }
        Ok(Self { groups })
    }

    /// Merge consecutive groups whose `key` is equal (e.g. sub-tokens of one word).
    pub fn merge_by<K: PartialEq>(
        spans: impl IntoIterator<Item = (FeatureGroup, K)>,
        joiner: &str,
    ) -> Result<Self, ExplainError> {
        let mut merged: Vec<(FeatureGroup, K)> = Vec::new();
        for (g, key) in spans {
            match merged.last_mut() {
                Some((last, last_key)) if *last_key == key && last.end == g.start => {
                    last.end = g.end;
                    last.text.push_str(joiner);
                    last.text.push_str(&g.text);
                }
                _ => merged.push((g, key)),
            }
        }
        Self::new(merged.into_iter().map(|(g, _)| g).collect())
    }

    pub fn groups(&self) -> &[FeatureGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Copy of `input` with every group outside the coalition replaced by `mask_id`.
    pub fn ablate(&self, input: &[u32], keep: impl Fn(usize) -> bool, mask_id: u32) -> Vec<u32> {
        let mut out = input.to_vec();
        for (i, g) in self.groups.iter().enumerate() {
            if !keep(i) {
                for t in &mut out[g.start..g.end.min(input.len())] {
                    *t = mask_id;
                }
            }
        }
        out
    }

    pub(crate) fn check_fits(&self, input_len: usize) -> Result<(), ExplainError> {
        match self.groups.last() {
            Some(g) if g.end > input_len => Err(ExplainError::InvalidGrouping(format!(
                "group span ends at {} beyond input length {input_len}",
                g.end
            ))),
            _ => Ok(()),
        }
    }
}

/// Model input for a text plus its feature groups.
#[derive(Debug, Clone, PartialEq)]
pub struct TextGroups {
    pub ids: Vec<u32>,
    pub grouping: FeatureGrouping,
    /// Index of the `[SEP]`-delimited segment each group lies in.
    pub segments: Vec<usize>,
}

impl TextGroups {
    /// Group-index ranges of each segment, in order.
    pub fn segment_spans(&self) -> Vec<Range<usize>> {
        let mut spans: Vec<Range<usize>> = Vec::new();
        for (i, &seg) in self.segments.iter().enumerate() {
            match spans.get_mut(seg) {
                Some(r) => r.end = i + 1,
                None => {
                    while spans.len() < seg {
                        spans.push(i..i);
                    }
                    spans.push(i..i + 1);
                }
            }
        }
        spans
    }
}

/// Tokenize `text` and group it per word (sub-tokens merged) or per sub-token.
///
/// Special tokens stay in the input but belong to no group. When the text
/// exceeds `max_tokens`, whole words are dropped from the front, matching the
/// left truncation used for classification.
pub fn group_text(
    text: &str,
    vocab: &Vocabulary,
    max_tokens: usize,
    per_subtoken: bool,
) -> Result<TextGroups, ExplainError> {
    let mut words = vocab.tokenize_words(text);
    let mut total: usize = words.iter().map(|(_, ids)| ids.len()).sum();
    let mut drop = 0;
    while total > max_tokens && drop < words.len() {
        total -= words[drop].1.len();
        drop += 1;
    }
    let mut ids = Vec::with_capacity(total);
    let mut groups = Vec::new();
    let mut segments = Vec::new();
    // Segments are counted over the full text so truncation keeps their numbering.
    let mut segment = words[..drop]
        .iter()
        .filter(|(w, ids)| w.special && ids[0] == vocab.sep_id())
        .count();
    for (word, word_ids) in words.drain(drop..) {
        let start = ids.len();
        ids.extend_from_slice(&word_ids);
        if word.special {
            if word_ids[0] == vocab.sep_id() {
                segment += 1;
            }
            continue;
        }
        if per_subtoken {
            for (k, &id) in word_ids.iter().enumerate() {
                groups.push(FeatureGroup {
                    text: vocab.token(id).unwrap_or("?").to_string(),
                    start: start + k,
                    end: start + k + 1,
                });
                segments.push(segment);
            }
        } else {
            groups.push(FeatureGroup {
                text: word.text,
                start,
                end: ids.len(),
            });
            segments.push(segment);
        }
    }
    if groups.is_empty() {
        return Err(ExplainError::InvalidGrouping("text has no ablatable tokens".into()));
    }
    Ok(TextGroups {
        ids,
        grouping: FeatureGrouping::new(groups)?,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(text: &str, start: usize, end: usize) -> FeatureGroup {
        FeatureGroup {
            text: text.into(),
            start,
            end,
        }
    }

    #[test]
    fn rejects_overlap_and_empty() {
        assert!(FeatureGrouping::new(vec![g("a", 0, 2), g("b", 1, 3)]).is_err());
        assert!(FeatureGrouping::new(vec![g("a", 2, 2)]).is_err());
        assert!(FeatureGrouping::new(vec![g("a", 0, 1), g("b", 3, 4)]).is_ok());
    }

    #[test]
    fn merges_subtokens_of_a_word() {
        let spans = vec![(g("hyper", 1, 2), 0), (g("##tonie", 2, 3), 0), (g("und", 3, 4), 1)];
        let grouping = FeatureGrouping::merge_by(spans, "").unwrap();
        assert_eq!(grouping.groups(), &[g("hyper##tonie", 1, 3), g("und", 3, 4)]);
    }

    fn vocab() -> Vocabulary {
        let mut tokens: Vec<String> = crate::model::SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(["hyper", "##tonie", "und", "a"].map(String::from));
        Vocabulary::new(tokens).unwrap()
    }

    #[test]
    fn words_merge_subtokens_and_skip_specials() {
        let v = vocab();
        let tg = group_text("a [SEP] hypertonie und", &v, 64, false).unwrap();
        assert_eq!(tg.ids.len(), 5);
        let texts: Vec<&str> = tg.grouping.groups().iter().map(|g| g.text.as_str()).collect();
        assert_eq!(texts, ["a", "hypertonie", "und"]);
        assert_eq!(tg.grouping.groups()[1].start, 2);
        assert_eq!(tg.segments, vec![0, 1, 1]);
        assert_eq!(tg.segment_spans(), vec![0..1, 1..3]);
        let sub = group_text("hypertonie", &v, 64, true).unwrap();
        assert_eq!(sub.grouping.len(), 2);
    }

    #[test]
    fn truncation_drops_leading_words() {
        let v = vocab();
        let tg = group_text("a [SEP] hypertonie und", &v, 3, false).unwrap();
        assert_eq!(
            tg.ids,
            vec![v.id("hyper").unwrap(), v.id("##tonie").unwrap(), v.id("und").unwrap()]
        );
        assert_eq!(tg.segments, vec![1, 1]);
        assert!(group_text("[SEP]", &v, 8, false).is_err());
    }

    #[test]
    fn ablation_masks_outside_coalition() {
        let grouping = FeatureGrouping::new(vec![g("a", 1, 2), g("b", 2, 4)]).unwrap();
        let out = grouping.ablate(&[9, 10, 11, 12, 13], |i| i == 0, 0);
        assert_eq!(out, vec![9, 10, 0, 0, 13]);
    }
}
