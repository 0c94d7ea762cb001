use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Paragraph};

/// Surface form of the separator token placed between paragraphs.
pub const DEFAULT_SEP: &str = "[SEP]";

/// How much of the surrounding document a sample sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// The paragraph alone.
    NoContext,
    /// Previous paragraph, then the paragraph.
    PrevContext,
    /// Previous paragraph, the paragraph, then the next paragraph.
    Context,
}

impl ContextMode {
    pub const ALL: [ContextMode; 3] = [ContextMode::NoContext, ContextMode::PrevContext, ContextMode::Context];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::NoContext => "nocontext",
            ContextMode::PrevContext => "prevcontext",
            ContextMode::Context => "context",
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextMode {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nocontext" => Ok(ContextMode::NoContext),
            "prevcontext" => Ok(ContextMode::PrevContext),
            "context" => Ok(ContextMode::Context),
            other => Err(CorpusError::InvalidArgument(format!("unknown context mode {other:?}"))),
        }
    }
}

/// A paragraph to classify, with its neighbors and the text the model sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub main: Paragraph,
    pub prev: Option<String>,
    pub next: Option<String>,
    pub context_mode: ContextMode,
    pub rendered: String,
}

impl Sample {
    pub fn id(&self) -> String {
        self.main.id()
    }

    pub fn label(&self) -> Option<&str> {
        if self.main.label.is_empty() {
            None
        } else {
            Some(&self.main.label)
        }
    }

    /// Re-render the same paragraph under another context mode.
    pub fn with_mode(&self, mode: ContextMode, sep: &str) -> Sample {
        render_sample(&self.main, self.prev.as_deref(), self.next.as_deref(), mode, sep)
    }
}

/// Join a paragraph with its neighbors according to `mode`.
///
/// A missing neighbor (document boundary) is left out together with its separator.
pub fn render_sample(p: &Paragraph, prev: Option<&str>, next: Option<&str>, mode: ContextMode, sep: &str) -> Sample {
    let mut parts: Vec<&str> = Vec::with_capacity(3);
    if mode != ContextMode::NoContext {
        parts.extend(prev);
    }
    parts.push(&p.text);
    if mode == ContextMode::Context {
        parts.extend(next);
    }
    let rendered = parts.join(&format!(" {sep} "));
    Sample {
        main: p.clone(),
        prev: prev.map(str::to_string),
        next: next.map(str::to_string),
        context_mode: mode,
        rendered,
    }
}

/// Render every paragraph with its document neighbors.
///
/// Output follows document first appearance, then paragraph index.
pub fn build_samples(corpus: &[Paragraph], mode: ContextMode, sep: &str) -> Vec<Sample> {
    let mut doc_order: Vec<&str> = Vec::new();
    let mut docs: BTreeMap<&str, Vec<&Paragraph>> = BTreeMap::new();
    for p in corpus {
        let entry = docs.entry(&p.doc_id).or_default();
        if entry.is_empty() {
            doc_order.push(&p.doc_id);
        }
        entry.push(p);
    }
    let mut out = Vec::with_capacity(corpus.len());
    for doc in doc_order {
        let mut paras = docs.remove(doc).unwrap_or_default();
        paras.sort_by_key(|p| p.index);
        for (i, p) in paras.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| paras[j].text.as_str());
            let next = paras.get(i + 1).map(|q| q.text.as_str());
            out.push(render_sample(p, prev, next, mode, sep));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAIN: &str = "Cvrf: Hypertonie, Nikotinkonsum, Hypercholesterinämie";

    fn main_para() -> Paragraph {
        Paragraph::new("brief", 1, MAIN, "Anamnese")
    }

    #[test]
    fn context_types() {
        let p = main_para();
        let prev = Some("- OP am 02.01.2011");
        let next = Some("Anamnese:");
        assert_eq!(
            render_sample(&p, prev, next, ContextMode::NoContext, DEFAULT_SEP).rendered,
            MAIN
        );
        assert_eq!(
            render_sample(&p, prev, next, ContextMode::Context, DEFAULT_SEP).rendered,
            "- OP am 02.01.2011 [SEP] Cvrf: Hypertonie, Nikotinkonsum, Hypercholesterinämie [SEP] Anamnese:"
        );
        assert_eq!(
            render_sample(&p, prev, next, ContextMode::PrevContext, DEFAULT_SEP).rendered,
            "- OP am 02.01.2011 [SEP] Cvrf: Hypertonie, Nikotinkonsum, Hypercholesterinämie"
        );
    }

    #[test]
    fn document_boundaries_drop_the_separator() {
        let p = main_para();
        let first = render_sample(&p, None, Some("next"), ContextMode::Context, DEFAULT_SEP);
        assert_eq!(first.rendered, format!("{MAIN} [SEP] next"));
        let last = render_sample(&p, Some("prev"), None, ContextMode::Context, DEFAULT_SEP);
        assert_eq!(last.rendered, format!("prev [SEP] {MAIN}"));
    }

    #[test]
    fn build_samples_links_neighbors_within_documents() {
        let corpus = vec![
            Paragraph::new("a", 1, "a1", "x"),
            Paragraph::new("a", 0, "a0", "x"),
            Paragraph::new("b", 0, "b0", "y"),
        ];
        let s = build_samples(&corpus, ContextMode::Context, "|");
        let rendered: Vec<&str> = s.iter().map(|s| s.rendered.as_str()).collect();
        assert_eq!(rendered, ["a0 | a1", "a0 | a1", "b0"]);
        assert_eq!(s[0].next.as_deref(), Some("a1"));
        assert_eq!(s[2].prev, None);
    }

    #[test]
    fn mode_parsing() {
        for m in ContextMode::ALL {
            assert_eq!(m.as_str().parse::<ContextMode>().unwrap(), m);
        }
        assert!("both".parse::<ContextMode>().is_err());
    }
}
