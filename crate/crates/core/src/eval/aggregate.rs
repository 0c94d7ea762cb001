use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport};

/// Mean and population standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_runs: usize,
    pub accuracy: MetricSummary,
    pub macro_f1: MetricSummary,
    pub per_class_f1: BTreeMap<String, MetricSummary>,
}

/// Summarize repeated runs of one configuration (e.g. the sets × seeds grid of a shot size).
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<RunSummary, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewRuns(reports.len()));
    }
    let first = &reports[0];
    for r in &reports[1..] {
        if r.metadata.shot_size != first.metadata.shot_size {
            return Err(EvalError::MixedStrata(format!(
                "shot sizes {:?} and {:?}",
                first.metadata.shot_size, r.metadata.shot_size
            )));
        }
        if r.metadata.method != first.metadata.method || r.metadata.model_variant != first.metadata.model_variant {
            return Err(EvalError::MixedStrata("method or model variant differs".into()));
        }
        if r.classes() != first.classes() {
            return Err(EvalError::MixedStrata("class lists differ".into()));
        }
    }
    let collect = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let per_class_f1 = first
        .classes()
        .iter()
        .map(|c| {
            let values = collect(&|r| r.per_class[c].f1);
            (c.clone(), MetricSummary::of(&values))
        })
        .collect();
    Ok(RunSummary {
        n_runs: reports.len(),
        accuracy: MetricSummary::of(&collect(&|r| r.accuracy)),
        macro_f1: MetricSummary::of(&collect(&|r| r.macro_f1)),
        per_class_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{metrics_from_indices, RunMetadata};

    fn report(correct: usize, n: usize, shots: usize) -> MetricsReport {
        let gold = vec![0; n];
        let pred: Vec<usize> = (0..n).map(|i| usize::from(i >= correct)).collect();
        metrics_from_indices(&gold, &pred, &["a".into(), "b".into()])
            .unwrap()
            .with_metadata(RunMetadata {
                shot_size: Some(shots),
                ..RunMetadata::default()
            })
    }

    #[test]
    fn identical_runs_have_zero_std() {
        let s = aggregate_runs(&[report(7, 10, 20), report(7, 10, 20)]).unwrap();
        assert_eq!(s.accuracy.std, 0.0);
        assert_eq!(s.accuracy.mean, 0.7);
    }

    #[test]
    fn population_std() {
        let s = aggregate_runs(&[report(8, 10, 20), report(9, 10, 20)]).unwrap();
        assert!((s.accuracy.mean - 0.85).abs() < 1e-12);
        assert!((s.accuracy.std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        assert_eq!(
            aggregate_runs(&[report(1, 2, 20)]).unwrap_err(),
            EvalError::TooFewRuns(1)
        );
        assert!(matches!(
            aggregate_runs(&[report(1, 2, 20), report(1, 2, 50)]),
            Err(EvalError::MixedStrata(_))
        ));
    }
}
