use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::util::derived_rng;

/// Default number of randomization rounds.
pub const DEFAULT_ROUNDS: usize = 10_000;
/// Differences with p below this level are reported as significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Statistic compared between two systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    /// F1 score of the class with this index.
    F1(usize),
}

/// Sufficient per-sample counts: (correct, tp, fp, fn) for the chosen metric.
#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    correct: u64,
    tp: u64,
    fp: u64,
    fneg: u64,
}

impl Counts {
    fn of(metric: Metric, gold: usize, pred: usize) -> Counts {
        match metric {
            Metric::Accuracy => Counts {
                correct: u64::from(gold == pred),
                ..Counts::default()
            },
            Metric::F1(c) => Counts {
                tp: u64::from(gold == c && pred == c),
                fp: u64::from(gold != c && pred == c),
                fneg: u64::from(gold == c && pred != c),
                ..Counts::default()
            },
        }
    }

    fn add(&mut self, other: Counts) {
        self.correct += other.correct;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fneg += other.fneg;
    }

    fn value(&self, metric: Metric, n: usize) -> f64 {
        match metric {
            Metric::Accuracy => self.correct as f64 / n as f64,
            Metric::F1(_) => {
                let denom = 2 * self.tp + self.fp + self.fneg;
                if denom == 0 {
                    0.0
                } else {
                    2.0 * self.tp as f64 / denom as f64
                }
            }
        }
    }
}

// Shuffled differences within this tolerance of the observed one count as ties.
const TIE_EPS: f64 = 1e-12;

/// Two-sided approximate randomization test for paired predictions.
///
/// Each of `rounds` rounds swaps the two systems' predictions per sample with
/// probability one half; the p-value is the add-one estimate
/// `(#{shuffled Δ ≥ observed Δ} + 1) / (rounds + 1)`.
pub fn approx_randomization_test(
    gold: &[usize],
    pred_a: &[usize],
    pred_b: &[usize],
    metric: Metric,
    rounds: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if gold.len() != pred_a.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred_a.len()));
    }
    if gold.len() != pred_b.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred_b.len()));
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    if rounds == 0 {
        return Err(EvalError::InvalidArgument("rounds must be at least 1".into()));
    }
    let n = gold.len();
    let per_a: Vec<Counts> = gold
        .iter()
        .zip(pred_a)
        .map(|(&g, &p)| Counts::of(metric, g, p))
        .collect();
    let per_b: Vec<Counts> = gold
        .iter()
        .zip(pred_b)
        .map(|(&g, &p)| Counts::of(metric, g, p))
        .collect();

    let total = |xs: &[Counts]| {
        let mut acc = Counts::default();
        for &x in xs {
            acc.add(x);
        }
        acc
    };
    let observed = (total(&per_a).value(metric, n) - total(&per_b).value(metric, n)).abs();

    // Only samples where the two systems differ can change the statistic.
    let differing: Vec<usize> = (0..n).filter(|&i| pred_a[i] != pred_b[i]).collect();
    let mut rng = derived_rng(seed, "approx-randomization");
    let mut at_least = 0usize;
    for _ in 0..rounds {
        let mut a = total(&per_a);
        let mut b = total(&per_b);
        for &i in &differing {
            if rng.random::<bool>() {
                a = sub_add(a, per_a[i], per_b[i]);
                b = sub_add(b, per_b[i], per_a[i]);
            }
        }
        let delta = (a.value(metric, n) - b.value(metric, n)).abs();
        if delta >= observed - TIE_EPS {
            at_least += 1;
        }
    }
    Ok((at_least + 1) as f64 / (rounds + 1) as f64)
}

fn sub_add(acc: Counts, remove: Counts, insert: Counts) -> Counts {
    Counts {
        correct: acc.correct - remove.correct + insert.correct,
        tp: acc.tp - remove.tp + insert.tp,
        fp: acc.fp - remove.fp + insert.fp,
        fneg: acc.fneg - remove.fneg + insert.fneg,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Exact p-value over all 2^n swap patterns (the quantity the sampled test estimates).
    pub(crate) fn exhaustive_p(gold: &[usize], a: &[usize], b: &[usize], metric: Metric) -> f64 {
        let n = gold.len();
        let stat = |x: &[usize], y: &[usize]| {
            let score = |p: &[usize]| match metric {
                Metric::Accuracy => gold.iter().zip(p).filter(|(g, q)| g == q).count() as f64 / n as f64,
                Metric::F1(c) => {
                    let tp = gold.iter().zip(p).filter(|(&g, &q)| g == c && q == c).count();
                    let fp = gold.iter().zip(p).filter(|(&g, &q)| g != c && q == c).count();
                    let fnn = gold.iter().zip(p).filter(|(&g, &q)| g == c && q != c).count();
                    if 2 * tp + fp + fnn == 0 {
                        0.0
                    } else {
                        2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
                    }
                }
            };
            (score(x) - score(y)).abs()
        };
        let observed = stat(a, b);
        let mut hits = 0usize;
        for mask in 0u32..(1 << n) {
            let (mut x, mut y) = (a.to_vec(), b.to_vec());
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    std::mem::swap(&mut x[i], &mut y[i]);
                }
            }
            if stat(&x, &y) >= observed - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / f64::from(1u32 << n)
    }

    #[test]
    fn identical_predictions_give_one() {
        let gold = [0, 1, 2, 1];
        let p = [0, 2, 2, 1];
        assert_eq!(
            approx_randomization_test(&gold, &p, &p, Metric::Accuracy, 100, 1).unwrap(),
            1.0
        );
        assert_eq!(
            approx_randomization_test(&gold, &p, &p, Metric::F1(2), 100, 1).unwrap(),
            1.0
        );
    }

    #[test]
    fn perfect_vs_always_wrong_is_significant() {
        let gold: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let wrong: Vec<usize> = gold.iter().map(|g| 1 - g).collect();
        let p = approx_randomization_test(&gold, &gold, &wrong, Metric::Accuracy, 10_000, 7).unwrap();
        assert!(p <= 0.001, "p = {p}");
    }

    #[test]
    fn symmetric_in_systems() {
        let gold = [0, 1, 1, 0, 2, 2, 1, 0];
        let a = [0, 1, 0, 0, 2, 1, 1, 1];
        let b = [1, 1, 1, 0, 0, 2, 0, 0];
        let pab = approx_randomization_test(&gold, &a, &b, Metric::Accuracy, 5000, 3).unwrap();
        let pba = approx_randomization_test(&gold, &b, &a, Metric::Accuracy, 5000, 3).unwrap();
        assert_eq!(pab, pba);
    }

    #[test]
    fn close_to_exhaustive_oracle() {
        let gold = [0, 1, 1, 0, 2, 2, 1, 0];
        let a = [0, 1, 0, 0, 2, 1, 1, 1];
        let b = [1, 1, 1, 0, 0, 2, 0, 0];
        for metric in [Metric::Accuracy, Metric::F1(0), Metric::F1(1)] {
            let exact = exhaustive_p(&gold, &a, &b, metric);
            let sampled = approx_randomization_test(&gold, &a, &b, metric, 20_000, 11).unwrap();
            assert!((exact - sampled).abs() < 0.05, "{metric:?}: {exact} vs {sampled}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            approx_randomization_test(&[0], &[0, 1], &[0], Metric::Accuracy, 10, 0),
            Err(EvalError::LengthMismatch(1, 2))
        ));
        assert!(approx_randomization_test(&[0], &[0], &[0], Metric::Accuracy, 0, 0).is_err());
    }
}
