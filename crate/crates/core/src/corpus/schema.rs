use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Paragraph};

/// Target classes plus the raw-label merges and drops applied before training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub classes: Vec<String>,
    #[serde(default)]
    pub merge_map: BTreeMap<String, String>,
    #[serde(default)]
    pub dropped: BTreeSet<String>,
}

impl Default for LabelSchema {
    /// The nine section classes of the cardiology letter corpus, in letter order.
    fn default() -> Self {
        let classes = [
            "Anrede",
            "Diagnosen",
            "AllergienUnverträglichkeitenRisiken",
            "Anamnese",
            "Medikation",
            "Befunde",
            "Zusammenfassung",
            "Mix",
            "Abschluss",
        ]
        .map(String::from)
        .to_vec();
        let merge_map = [
            ("AktuellDiagnosen", "Diagnosen"),
            ("AufnahmeMedikation", "Medikation"),
            ("EntlassMedikation", "Medikation"),
            ("KUBefunde", "Befunde"),
            ("EchoBefunde", "Befunde"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self {
            classes,
            merge_map,
            dropped: BTreeSet::from(["Labor".to_string()]),
        }
    }
}

impl LabelSchema {
    /// Schema that keeps exactly these classes.
    pub fn identity(classes: Vec<String>) -> Self {
        Self {
            classes,
            merge_map: BTreeMap::new(),
            dropped: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let classes: BTreeSet<&String> = self.classes.iter().collect();
        if classes.len() != self.classes.len() {
            return Err(CorpusError::InvalidSchema("duplicate class names".into()));
        }
        if self.classes.is_empty() {
            return Err(CorpusError::InvalidSchema("no classes".into()));
        }
        for (raw, meta) in &self.merge_map {
            if !classes.contains(meta) {
                return Err(CorpusError::InvalidSchema(format!(
                    "{raw:?} merges into unknown class {meta:?}"
                )));
            }
            if self.dropped.contains(raw) {
                return Err(CorpusError::InvalidSchema(format!(
                    "{raw:?} is both merged and dropped"
                )));
            }
        }
        Ok(())
    }

    /// Resolve a raw label: `Some(class)`, `None` when dropped.
    pub fn resolve(&self, raw: &str) -> Result<Option<&str>, CorpusError> {
        if self.dropped.contains(raw) {
            return Ok(None);
        }
        if let Some(meta) = self.merge_map.get(raw) {
            return Ok(Some(meta));
        }
        self.classes
            .iter()
            .find(|c| *c == raw)
            .map(|c| Some(c.as_str()))
            .ok_or_else(|| CorpusError::UnknownLabel(raw.to_string()))
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }
}

/// Map raw labels to meta-classes, drop excluded sections and re-number
/// paragraph indices per document. Relative order is preserved.
pub fn apply_schema(corpus: &[Paragraph], schema: &LabelSchema) -> Result<Vec<Paragraph>, CorpusError> {
    schema.validate()?;
    let mut next_index: HashMap<&str, usize> = HashMap::new();
    // Documents may be interleaved in the input; re-index in input order.
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        (corpus[a].doc_id.as_str(), corpus[a].index).cmp(&(corpus[b].doc_id.as_str(), corpus[b].index))
    });
    let mut new_index = vec![None; corpus.len()];
    let mut labels = vec![String::new(); corpus.len()];
    for &i in &order {
        let p = &corpus[i];
        if let Some(label) = schema.resolve(&p.label)? {
            let slot = next_index.entry(p.doc_id.as_str()).or_insert(0);
            new_index[i] = Some(*slot);
            labels[i] = label.to_string();
            *slot += 1;
        }
    }
    Ok(corpus
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            new_index[i].map(|index| Paragraph {
                doc_id: p.doc_id.clone(),
                index,
                text: p.text.clone(),
                label: std::mem::take(&mut labels[i]),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(i: usize, label: &str) -> Paragraph {
        Paragraph::new("d", i, format!("text {i}"), label)
    }

    #[test]
    fn default_schema_has_nine_classes() {
        let s = LabelSchema::default();
        assert_eq!(s.classes.len(), 9);
        s.validate().unwrap();
    }

    #[test]
    fn merges_and_drops() {
        let corpus = vec![
            para(0, "Anrede"),
            para(1, "Labor"),
            para(2, "AufnahmeMedikation"),
            para(3, "Labor"),
        ];
        let out = apply_schema(&corpus, &LabelSchema::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].label, "Medikation");
        assert_eq!(out[1].index, 1);
        assert_eq!(out[1].text, "text 2");
    }

    #[test]
    fn identity_schema_leaves_corpus_unchanged() {
        let corpus = vec![para(0, "a"), para(1, "b")];
        let schema = LabelSchema::identity(vec!["a".into(), "b".into()]);
        assert_eq!(apply_schema(&corpus, &schema).unwrap(), corpus);
    }

    #[test]
    fn unknown_label_is_an_error() {
        let err = apply_schema(&[para(0, "Sonstiges")], &LabelSchema::default()).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel(l) if l == "Sonstiges"));
    }

    #[test]
    fn invalid_schemas() {
        let mut s = LabelSchema::default();
        s.merge_map.insert("X".into(), "Nope".into());
        assert!(s.validate().is_err());
        let mut s = LabelSchema::default();
        s.dropped.insert("AktuellDiagnosen".into());
        assert!(s.validate().is_err());
    }
}
