use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::template::{apply_pattern, PatternTemplate};
use super::verbalizer::Verbalizer;
use super::PromptError;
use crate::corpus::Sample;
use crate::model::{mask_log_probs, tokenize, ModelCheckpoint, Vocabulary, CONTINUATION};

/// Which vocabulary tokens may serve as verbalizer words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateFilter {
    pub min_alpha_chars: usize,
    pub top_k_frequency: usize,
    pub require_alphabetic: bool,
}

impl Default for CandidateFilter {
    fn default() -> Self {
        Self {
            min_alpha_chars: 2,
            top_k_frequency: 10_000,
            require_alphabetic: true,
        }
    }
}

impl CandidateFilter {
    pub fn accepts(&self, token: &str) -> bool {
        if token.starts_with(CONTINUATION) || token.starts_with('[') {
            return false;
        }
        if self.require_alphabetic && !token.chars().all(char::is_alphabetic) {
            return false;
        }
        token.chars().filter(|c| c.is_alphabetic()).count() >= self.min_alpha_chars
    }
}

/// Filtered candidates among the `top_k_frequency` most frequent tokens of `texts`,
/// in ascending id order.
pub fn candidate_pool<'a>(
    vocab: &Vocabulary,
    texts: impl IntoIterator<Item = &'a str>,
    filter: &CandidateFilter,
) -> Vec<u32> {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for t in texts {
        for id in tokenize(t, vocab) {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(filter.top_k_frequency);
    let mut pool: Vec<u32> = ranked
        .into_iter()
        .map(|(id, _)| id)
        .filter(|&id| !vocab.is_special(id) && vocab.token(id).is_some_and(|t| filter.accepts(t)))
        .collect();
    pool.sort_unstable();
    pool
}

/// Mean MASK log-probability of every pool token, per class (rows follow `classes`).
pub fn petal_scores(
    ckpt: &ModelCheckpoint,
    template: &PatternTemplate,
    fewshot: &[Sample],
    classes: &[String],
    pool: &[u32],
) -> Result<Vec<Vec<f64>>, PromptError> {
    let mut sums = vec![vec![0.0; pool.len()]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for s in fewshot {
        let Some(ci) = s.label().and_then(|l| classes.iter().position(|c| c == l)) else {
            continue;
        };
        let input = apply_pattern(template, &s.rendered, &ckpt.vocab, ckpt.config().max_sequence_length)?;
        let per_mask = mask_log_probs(ckpt, &input.ids)?;
        let inv = 1.0 / per_mask.len() as f64;
        for (slot, &t) in sums[ci].iter_mut().zip(pool) {
            *slot += per_mask.iter().map(|lp| lp[t as usize]).sum::<f64>() * inv;
        }
        counts[ci] += 1;
    }
    for (c, &n) in classes.iter().zip(&counts) {
        if n == 0 {
            return Err(PromptError::MissingClass(c.clone()));
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(row, n)| row.into_iter().map(|v| v / n as f64).collect())
        .collect())
}

/// Greedy distinct assignment: repeatedly fix the (class, token) pair with the
/// highest remaining score. Ties go to the lexicographically smaller class name,
/// then to the lower token id.
pub(crate) fn greedy_assign(scores: &[Vec<f64>], classes: &[String], pool: &[u32]) -> Vec<usize> {
    let k = classes.len();
    let mut assigned: Vec<Option<usize>> = vec![None; k];
    let mut used = vec![false; pool.len()];
    for _ in 0..k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ci, row) in scores.iter().enumerate() {
            if assigned[ci].is_some() {
                continue;
            }
            for (ti, &s) in row.iter().enumerate() {
                if used[ti] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, bc, bt)) => {
                        s > bs
                            || (s == bs
                                && (classes[ci] < classes[bc] || (classes[ci] == classes[bc] && pool[ti] < pool[bt])))
                    }
                };
                if better {
                    best = Some((s, ci, ti));
                }
            }
        }
        let (_, ci, ti) = best.expect("pool at least as large as class set");
        assigned[ci] = Some(ti);
        used[ti] = true;
    }
    assigned.into_iter().map(|a| a.expect("every class assigned")).collect()
}

/// Automatic verbalizer search over frequent unlabeled-data tokens.
pub fn petal_select(
    ckpt: &ModelCheckpoint,
    template: &PatternTemplate,
    fewshot: &[Sample],
    classes: &[String],
    filter: &CandidateFilter,
    unlabeled: &[Sample],
) -> Result<Verbalizer, PromptError> {
    let pool = candidate_pool(&ckpt.vocab, unlabeled.iter().map(|s| s.main.text.as_str()), filter);
    if pool.len() < classes.len() || filter.top_k_frequency < classes.len() {
        return Err(PromptError::PoolTooSmall {
            pool: pool.len(),
            classes: classes.len(),
        });
    }
    let scores = petal_scores(ckpt, template, fewshot, classes, &pool)?;
    let picks = greedy_assign(&scores, classes, &pool);
    let pairs: Vec<(String, String)> = classes
        .iter()
        .zip(picks)
        .map(|(c, ti)| {
            (
                c.clone(),
                ckpt.vocab
                    .token(pool[ti])
                    .expect("pool token in vocabulary")
                    .to_string(),
            )
        })
        .collect();
    log::debug!(
        "template={} verbalizer={}",
        template.name(),
        pairs
            .iter()
            .map(|(c, w)| format!("{c}:{w}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    Verbalizer::new(pairs, &ckpt.vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn filter_rules() {
        let f = CandidateFilter::default();
        assert!(f.accepts("herz"));
        assert!(f.accepts("ödem"));
        assert!(!f.accepts("a"));
        assert!(!f.accepts("##er"));
        assert!(!f.accepts("12"));
        assert!(!f.accepts("b12"));
        assert!(!f.accepts("[MASK]"));
    }

    #[test]
    fn greedy_prefers_highest_score_and_avoids_reuse() {
        let classes = names(&["x", "y"]);
        let scores = vec![vec![-1.0, -2.0, -3.0], vec![-0.5, -2.5, -2.0]];
        // y takes token 0 first (-0.5), x falls back to its next best (token 1).
        assert_eq!(greedy_assign(&scores, &classes, &[10, 11, 12]), vec![1, 0]);
    }

    #[test]
    fn ties_break_by_class_name_then_token_id() {
        let classes = names(&["b", "a"]);
        let scores = vec![vec![-1.0, -1.0], vec![-1.0, -1.0]];
        assert_eq!(greedy_assign(&scores, &classes, &[7, 3]), vec![0, 1]);
        for _ in 0..5 {
            assert_eq!(greedy_assign(&scores, &classes, &[7, 3]), vec![0, 1]);
        }
    }

    #[test]
    fn exact_pool_is_a_bijection() {
        let classes = names(&["a", "b", "c"]);
        let scores = vec![vec![-1.0, -1.1, -1.2], vec![-0.9, -3.0, -0.1], vec![-2.0, -2.0, -2.0]];
        let mut picks = greedy_assign(&scores, &classes, &[5, 6, 7]);
        picks.sort_unstable();
        assert_eq!(picks, vec![0, 1, 2]);
    }

    #[test]
    fn pool_ranks_by_frequency_before_filtering() {
        let v = Vocabulary::build(["aa bb cc dd 7"], &[], 100, 1).unwrap();
        let texts = ["aa aa aa 7 7 7 7 bb bb cc"];
        let f = CandidateFilter {
            top_k_frequency: 3,
            ..CandidateFilter::default()
        };
        let pool = candidate_pool(&v, texts, &f);
        let want: Vec<u32> = {
            let mut w = vec![v.id("aa").unwrap(), v.id("bb").unwrap()];
            w.sort_unstable();
            w
        };
        assert_eq!(pool, want);
    }
}
