use std::fmt;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::model::{tokenize, Vocabulary, MASK};

/// One piece of a cloze template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Sample,
    Mask,
    Text(String),
}

impl Segment {
    fn parse(s: &str) -> Segment {
        match s {
            "SAMPLE" => Segment::Sample,
            MASK => Segment::Mask,
            other => Segment::Text(other.to_string()),
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Sample => f.write_str("SAMPLE"),
            Segment::Mask => f.write_str(MASK),
            Segment::Text(t) => f.write_str(t),
        }
    }
}

/// A named pattern turning a sample into a cloze sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate", into = "RawTemplate")]
pub struct PatternTemplate {
    name: String,
    parts: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
struct RawTemplate {
    name: String,
    parts: Vec<Segment>,
}

impl TryFrom<RawTemplate> for PatternTemplate {
    type Error = PromptError;

    fn try_from(r: RawTemplate) -> Result<Self, PromptError> {
        PatternTemplate::new(r.name, r.parts)
    }
}

impl From<PatternTemplate> for RawTemplate {
    fn from(t: PatternTemplate) -> Self {
        RawTemplate {
            name: t.name,
            parts: t.parts,
        }
    }
}

impl PatternTemplate {
    pub fn new(name: impl Into<String>, parts: Vec<Segment>) -> Result<Self, PromptError> {
        let name = name.into();
        let invalid = |reason: &str| PromptError::InvalidTemplate {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if name.is_empty() || name.contains(char::is_whitespace) || name.contains('/') {
            return Err(invalid("name must be a non-empty word"));
        }
        if parts.iter().filter(|p| **p == Segment::Sample).count() != 1 {
            return Err(invalid("needs exactly one SAMPLE segment"));
        }
        if !parts.contains(&Segment::Mask) {
            return Err(invalid("needs at least one [MASK] segment"));
        }
        if parts
            .iter()
            .any(|p| matches!(p, Segment::Text(t) if t.trim().is_empty()))
        {
            return Err(invalid("literal segments must not be blank"));
        }
        Ok(Self { name, parts })
    }

    /// Build from whitespace-separated pieces, e.g. `"SAMPLE : [MASK]"`.
    pub fn parse(name: impl Into<String>, spec: &str) -> Result<Self, PromptError> {
        Self::new(name, spec.split_whitespace().map(Segment::parse).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parts(&self) -> &[Segment] {
        &self.parts
    }

    pub fn n_masks(&self) -> usize {
        self.parts.iter().filter(|p| **p == Segment::Mask).count()
    }

    /// Surface form with the sample text inserted verbatim.
    pub fn render(&self, sample_text: &str) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                Segment::Sample => sample_text.to_string(),
                other => other.to_string(),
            })
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The built-in catalogue: five core templates and three null-prompt variants.
#[derive(Debug, Clone)]
pub struct BuiltinTemplates {
    pub core: Vec<PatternTemplate>,
    pub null: Vec<PatternTemplate>,
}

impl BuiltinTemplates {
    pub fn group(&self, name: &str) -> Option<&[PatternTemplate]> {
        match name {
            "core" => Some(&self.core),
            "null" => Some(&self.null),
            _ => None,
        }
    }

    /// Look a template up by name in either group.
    pub fn find(&self, name: &str) -> Option<&PatternTemplate> {
        self.core.iter().chain(&self.null).find(|t| t.name() == name)
    }
}

pub fn builtin_templates() -> BuiltinTemplates {
    let t = |name: &str, spec: &str| PatternTemplate::parse(name, spec).expect("built-in template");
    let qa = PatternTemplate::new(
        "qa",
        vec![
            Segment::Sample,
            Segment::Text("Frage: Zu welcher Sektion gehört dieser Text? Antwort:".into()),
            Segment::Mask,
        ],
    )
    .expect("built-in template");
    BuiltinTemplates {
        core: vec![
            t("null", "SAMPLE [MASK]"),
            t("colon", "SAMPLE : [MASK]"),
            t("dash", "SAMPLE - [MASK]"),
            t("prompt", "SAMPLE Sektion [MASK]"),
            qa,
        ],
        null: vec![
            t("null", "SAMPLE [MASK]"),
            t("null_front", "[MASK] SAMPLE"),
            t("null_both", "[MASK] SAMPLE [MASK]"),
        ],
    }
}

/// Token ids of a pattern applied to one sample (without `[CLS]`/`[SEP]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternInput {
    pub ids: Vec<u32>,
    pub mask_positions: Vec<usize>,
    /// Sample tokens dropped from the left to fit.
    pub truncated: usize,
}

/// Apply `template` to `sample_text`, truncating the sample from the left so the
/// wrapped sequence fits `max_sequence_length`.
pub fn apply_pattern(
    template: &PatternTemplate,
    sample_text: &str,
    vocab: &Vocabulary,
    max_sequence_length: usize,
) -> Result<PatternInput, PromptError> {
    let budget = max_sequence_length.saturating_sub(2);
    let mut pieces: Vec<Vec<u32>> = Vec::with_capacity(template.parts.len());
    let mut literal_len = 0;
    for p in &template.parts {
        let ids = match p {
            Segment::Sample => Vec::new(),
            Segment::Mask => vec![vocab.mask_id()],
            Segment::Text(t) => tokenize(t, vocab),
        };
        literal_len += ids.len();
        pieces.push(ids);
    }
    if literal_len > budget {
        return Err(PromptError::TemplateOverflow {
            name: template.name.clone(),
            needed: literal_len,
            max: budget,
        });
    }
    let mut sample = tokenize(sample_text, vocab);
    let room = budget - literal_len;
    let truncated = sample.len().saturating_sub(room);
    sample.drain(..truncated);

    let mut ids = Vec::with_capacity(literal_len + sample.len());
    let mut mask_positions = Vec::with_capacity(template.n_masks());
    for (p, piece) in template.parts.iter().zip(pieces) {
        match p {
            Segment::Sample => ids.extend_from_slice(&sample),
            Segment::Mask => {
                mask_positions.push(ids.len());
                ids.extend(piece);
            }
            Segment::Text(_) => ids.extend(piece),
        }
    }
    Ok(PatternInput {
        ids,
        mask_positions,
        truncated,
    })
}

/// Serialize templates to the editable block format.
///
/// ```text
/// name: colon
/// parts: SAMPLE | : | [MASK]
/// ```
pub fn templates_to_text(templates: &[PatternTemplate]) -> String {
    templates
        .iter()
        .map(|t| {
            let parts: Vec<String> = t.parts.iter().map(ToString::to_string).collect();
            format!("name: {}\nparts: {}\n", t.name, parts.join(" | "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_templates(text: &str) -> Result<Vec<PatternTemplate>, PromptError> {
    let mut out = Vec::new();
    let mut name: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: &str| PromptError::Parse {
            line: line_no,
            reason: reason.to_string(),
        };
        if let Some(rest) = line.strip_prefix("name:") {
            if name.is_some() {
                return Err(parse_err("`name:` without a following `parts:` line"));
            }
            name = Some((line_no, rest.trim().to_string()));
        } else if let Some(rest) = line.strip_prefix("parts:") {
            let (_, n) = name.take().ok_or_else(|| parse_err("`parts:` before `name:`"))?;
            let parts = rest.split('|').map(|s| Segment::parse(s.trim())).collect();
            out.push(PatternTemplate::new(n, parts)?);
        } else {
            return Err(parse_err("expected `name:` or `parts:`"));
        }
    }
    if let Some((line, _)) = name {
        return Err(PromptError::Parse {
            line,
            reason: "template has no `parts:` line".into(),
        });
    }
    Ok(out)
}
