use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Precision, recall and F1 for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold samples of this class.
    pub support: u64,
    /// Number of samples predicted as this class.
    pub predicted: u64,
    /// Set when the class is neither gold nor predicted anywhere; its F1 is 0 by convention.
    pub excluded: bool,
}

/// Provenance of an evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: Vec<String>,
    /// `matrix[gold][predicted]` counts.
    pub matrix: Vec<Vec<u64>>,
}

/// Evaluation summary; serializes to the `metrics.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n_samples: u64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub confusion: Confusion,
    #[serde(default)]
    pub metadata: RunMetadata,
}

impl MetricsReport {
    pub fn classes(&self) -> &[String] {
        &self.confusion.classes
    }

    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.per_class.get(name)
    }

    pub fn with_metadata(mut self, metadata: RunMetadata) -> Self {
        self.metadata = metadata;
        self
    }
}

/// Compute metrics from string labels.
pub fn compute_metrics<S: AsRef<str>>(gold: &[S], pred: &[S], classes: &[String]) -> Result<MetricsReport, EvalError> {
    let index_of = |label: &str| {
        classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| EvalError::UnknownLabel(label.to_string()))
    };
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    let gold = gold
        .iter()
        .map(|g| index_of(g.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = pred
        .iter()
        .map(|p| index_of(p.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    metrics_from_indices(&gold, &pred, classes)
}

/// Compute metrics from class indices into `classes`.
pub fn metrics_from_indices(gold: &[usize], pred: &[usize], classes: &[String]) -> Result<MetricsReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let k = classes.len();
    let mut matrix = vec![vec![0u64; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= k {
            return Err(EvalError::UnknownLabel(format!("class index {g}")));
        }
        if p >= k {
            return Err(EvalError::UnknownLabel(format!("class index {p}")));
        }
        matrix[g][p] += 1;
    }
    Ok(report_from_confusion(classes, matrix))
}

pub(crate) fn report_from_confusion(classes: &[String], matrix: Vec<Vec<u64>>) -> MetricsReport {
    let k = classes.len();
    let n: u64 = matrix.iter().flatten().sum();
    let trace: u64 = (0..k).map(|i| matrix[i][i]).sum();
    let mut per_class = BTreeMap::new();
    let mut f1_sum = 0.0;
    for (c, name) in classes.iter().enumerate() {
        let tp = matrix[c][c];
        let support: u64 = matrix[c].iter().sum();
        let predicted: u64 = matrix.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        per_class.insert(
            name.clone(),
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                predicted,
                excluded: support == 0 && predicted == 0,
            },
        );
    }
    MetricsReport {
        accuracy: ratio(trace, n),
        macro_f1: if k > 0 { f1_sum / k as f64 } else { 0.0 },
        n_samples: n,
        per_class,
        confusion: Confusion {
            classes: classes.to_vec(),
            matrix,
        },
        metadata: RunMetadata::default(),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn expand(matrix: &[Vec<u64>]) -> (Vec<usize>, Vec<usize>) {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for (g, row) in matrix.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    gold.push(g);
                    pred.push(p);
                }
            }
        }
        (gold, pred)
    }

    #[test]
    fn perfect_predictions() {
        let gold = ["a", "b", "a"];
        let classes = vec!["a".to_string(), "b".to_string()];
        let r = compute_metrics(&gold, &gold, &classes).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.values().all(|m| m.f1 == 1.0));
    }

    #[test]
    fn two_class_hand_computed() {
        let (gold, pred) = expand(&[vec![3, 1], vec![2, 4]]);
        let r = metrics_from_indices(&gold, &pred, &names(2)).unwrap();
        assert_eq!(r.accuracy, 0.7);
        let c0 = r.class("c0").unwrap();
        assert_eq!(c0.precision, 0.6);
        assert_eq!(c0.recall, 0.75);
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_excluded_with_zero_f1() {
        let r = metrics_from_indices(&[0, 1], &[0, 1], &names(3)).unwrap();
        let c2 = r.class("c2").unwrap();
        assert_eq!(c2.f1, 0.0);
        assert!(c2.excluded);
        assert!(!r.class("c0").unwrap().excluded);
    }

    #[test]
    fn errors() {
        let classes = names(2);
        assert_eq!(
            compute_metrics(&["c0"], &["c0", "c1"], &classes).unwrap_err(),
            EvalError::LengthMismatch(1, 2)
        );
        assert_eq!(
            compute_metrics(&["zz"], &["c0"], &classes).unwrap_err(),
            EvalError::UnknownLabel("zz".into())
        );
        let empty: [&str; 0] = [];
        assert_eq!(
            compute_metrics(&empty, &empty, &classes).unwrap_err(),
            EvalError::EmptyEvaluation
        );
    }

    #[test]
    fn confusion_marginals_match_counts() {
        let gold = [0, 1, 2, 2, 1, 0, 0];
        let pred = [0, 2, 2, 1, 1, 1, 0];
        let r = metrics_from_indices(&gold, &pred, &names(3)).unwrap();
        for c in 0..3 {
            let row: u64 = r.confusion.matrix[c].iter().sum();
            let col: u64 = r.confusion.matrix.iter().map(|row| row[c]).sum();
            assert_eq!(row, gold.iter().filter(|&&g| g == c).count() as u64);
            assert_eq!(col, pred.iter().filter(|&&p| p == c).count() as u64);
        }
    }

    #[test]
    fn json_schema_fields() {
        let r = metrics_from_indices(&[0, 1], &[0, 0], &names(2)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["accuracy"].is_number());
        assert!(v["per_class"]["c0"]["support"].is_number());
        assert_eq!(v["confusion"]["classes"][1], "c1");
        assert_eq!(v["confusion"]["matrix"][1][0], 1);
        let back: MetricsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
