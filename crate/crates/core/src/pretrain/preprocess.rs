use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Boundary line inserted before every letter.
pub const LETTER_MARKER: &str = "###BEGINN";

/// Drops table-like lines dominated by numeric tokens (laboratory values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabFilter {
    pub enabled: bool,
    /// Minimum share of numeric tokens for a line to count as a table row.
    pub min_numeric_fraction: f64,
    /// Lines with fewer tokens are never dropped.
    pub min_tokens: usize,
}

impl Default for LabFilter {
    fn default() -> Self {
        Self {
            enabled: true,
            min_numeric_fraction: 0.5,
            min_tokens: 3,
        }
    }
}

impl LabFilter {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    fn numeric_token() -> Regex {
        Regex::new(r"^[<>≤≥]?[-+]?\d+(?:[.,]\d+)?(?:[%/a-zA-Zµ]+(?:/[a-zA-Zµ]+)?)?$").expect("valid regex")
    }

    pub fn is_table_line(&self, line: &str) -> bool {
        if !self.enabled {
            return false;
        }
        let re = Self::numeric_token();
        let tokens: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == '|')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() < self.min_tokens {
            return false;
        }
        let numeric = tokens.iter().filter(|t| re.is_match(t)).count();
        numeric as f64 / tokens.len() as f64 >= self.min_numeric_fraction
    }
}

/// Naive splitter: a sentence ends at `.`, `!` or `?` followed by whitespace.
///
/// Abbreviations are not recognized, so `"Dr. Muster kam."` yields two pieces.
pub fn split_sentences(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(k + 1).is_some_and(|&(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            let s = line[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
    }
    let rest = line[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

/// Letters → marker-separated sentence list.
///
/// Every letter with at least one sentence is headed by [`LETTER_MARKER`];
/// marker lines inside a document start a further letter. Empty letters, blank
/// lines and table lines vanish, so re-processing the output is a no-op.
pub fn preprocess_raw<S: AsRef<str>>(letters: &[S], filter: &LabFilter) -> Vec<String> {
    let mut out = Vec::new();
    for doc in letters {
        let mut letter_open = false;
        for line in doc.as_ref().lines() {
            let line = line.trim();
            if line.is_empty() || filter.is_table_line(line) {
                continue;
            }
            if line == LETTER_MARKER {
                letter_open = false;
                continue;
            }
            for sentence in split_sentences(line) {
                if !letter_open {
                    out.push(LETTER_MARKER.to_string());
                    letter_open = true;
                }
                out.push(sentence);
            }
        }
    }
    out
}

/// Sentences without boundary markers, ready for MLM training.
pub fn training_texts(sentences: &[String]) -> Vec<String> {
    sentences
        .iter()
        .filter(|s| s.as_str() != LETTER_MARKER)
        .cloned()
        .collect()
}

/// A file is one document (split further at marker lines by [`preprocess_raw`]);
/// a directory contributes one document per file in lexicographic name order.
pub fn load_raw_documents(path: &Path) -> std::io::Result<Vec<String>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<Vec<_>, _>>()?;
        files.retain(|p| p.is_file());
        files.sort();
        files.iter().map(std::fs::read_to_string).collect()
    } else {
        Ok(vec![std::fs::read_to_string(path)?])
    }
}
