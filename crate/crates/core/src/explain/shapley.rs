use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::{ExplainError, FeatureGroup, FeatureGrouping};
use crate::util::{derived_rng, KahanSum};

/// Exact enumeration evaluates all 2^n coalitions.
pub const MAX_EXACT_GROUPS: usize = 15;
/// Coalitions are tracked as 64-bit masks when sampling.
pub const MAX_SAMPLED_GROUPS: usize = 64;
// Up to 8! permutations are enumerated and drawn without replacement.
const MAX_ENUMERATED_PERMUTATIONS: usize = 40_320;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Sampled { n_permutations: usize, seed: u64 },
}

/// Per-group attributions for one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport {
    pub sample_id: String,
    pub target: usize,
    pub target_label: Option<String>,
    /// Target probability with every group ablated.
    pub base_value: f64,
    pub phi: Vec<f64>,
    /// Monte-Carlo standard error per group (sampled method only).
    pub stderr: Option<Vec<f64>>,
    pub groups: Vec<FeatureGroup>,
    /// Class distribution on the unablated input.
    pub predicted: Vec<f64>,
    pub predicted_label: Option<String>,
    pub method: Method,
}

impl AttributionReport {
    /// `base_value + Σ φ`, which equals the full-input target probability.
    pub fn reconstructed_value(&self) -> f64 {
        let mut acc = KahanSum::new();
        acc.add(self.base_value);
        for &p in &self.phi {
            acc.add(p);
        }
        acc.value()
    }

    pub fn full_value(&self) -> f64 {
        self.predicted[self.target]
    }

    pub fn with_sample_id(mut self, id: impl Into<String>) -> Self {
        self.sample_id = id.into();
        self
    }

    pub fn with_labels(mut self, classes: &[String]) -> Self {
        self.target_label = classes.get(self.target).cloned();
        let best = crate::util::argmax(&self.predicted);
        self.predicted_label = classes.get(best).cloned();
        self
    }
}

/// Exact Shapley values of an `n`-player game by enumerating every coalition.
///
/// `value` receives coalition bitmasks (bit `i` set = player `i` present).
/// Returns `(phi, v(∅), v(N))`.
pub fn exact_values(n: usize, mut value: impl FnMut(u64) -> f64) -> Result<(Vec<f64>, f64, f64), ExplainError> {
    if n > MAX_EXACT_GROUPS {
        return Err(ExplainError::TooManyGroups {
            n,
            max: MAX_EXACT_GROUPS,
        });
    }
    let size = 1usize << n;
    let v: Vec<f64> = (0..size as u64).map(&mut value).collect();
    // weight[s] = s! (n-s-1)! / n!, built multiplicatively to stay finite.
    let weights: Vec<f64> = (0..n)
        .map(|s| {
            let mut w = 1.0 / n as f64;
            // 1 / (n * C(n-1, s))
            let mut binom = 1.0;
            for j in 0..s {
                binom = binom * (n - 1 - j) as f64 / (j + 1) as f64;
            }
            w /= binom;
            w
        })
        .collect();
    let mut phi = Vec::with_capacity(n);
    for i in 0..n {
        let bit = 1u64 << i;
        let mut acc = KahanSum::new();
        for s in 0..size as u64 {
            if s & bit == 0 {
                let w = weights[s.count_ones() as usize];
                acc.add(w * (v[(s | bit) as usize] - v[s as usize]));
            }
        }
        phi.push(acc.value());
    }
    Ok((phi, v[0], v[size - 1]))
}

/// Permutation-sampling estimate with per-player standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledValues {
    pub phi: Vec<f64>,
    pub stderr: Vec<f64>,
    pub empty_value: f64,
    pub full_value: f64,
    /// Permutations actually evaluated (capped at n! when all are enumerated).
    pub n_permutations: usize,
}

/// Monte-Carlo Shapley values: mean marginal contribution over random player orders.
///
/// When `n!` is small the permutations are drawn without replacement, so asking
/// for at least `n!` of them reproduces the exact values.
pub fn sampled_values(
    n: usize,
    n_permutations: usize,
    seed: u64,
    mut value: impl FnMut(u64) -> f64,
) -> Result<SampledValues, ExplainError> {
    if n > MAX_SAMPLED_GROUPS {
        return Err(ExplainError::TooManyGroups {
            n,
            max: MAX_SAMPLED_GROUPS,
        });
    }
    if n_permutations == 0 {
        return Err(ExplainError::InvalidArgument(
            "n_permutations must be at least 1".into(),
        ));
    }
    let mut rng = derived_rng(seed, "shapley-permutations");
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut eval = |mask: u64| *cache.entry(mask).or_insert_with(|| value(mask));
    let empty_value = eval(0);
    let full_mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let full_value = eval(full_mask);

    let orders: Vec<Vec<usize>> = match factorial_capped(n) {
        Some(total) if total <= MAX_ENUMERATED_PERMUTATIONS => {
            let mut all = all_permutations(n);
            all.shuffle(&mut rng);
            all.truncate(n_permutations);
            all
        }
        _ => (0..n_permutations)
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect(),
    };

    let m = orders.len();
    let mut sums = vec![KahanSum::new(); n];
    // Welford running mean and squared deviations, for a cancellation-free variance.
    let mut running = vec![(0.0f64, 0.0f64); n];
    let mut seen = 0.0;
    for order in &orders {
        seen += 1.0;
        let mut mask = 0u64;
        let mut prev = empty_value;
        for &player in order {
            mask |= 1u64 << player;
            let cur = eval(mask);
            let delta = cur - prev;
            sums[player].add(delta);
            let (mean, m2) = &mut running[player];
            let shift = delta - *mean;
            *mean += shift / seen;
            *m2 += shift * (delta - *mean);
            prev = cur;
        }
    }
    let mut phi = Vec::with_capacity(n);
    let mut stderr = Vec::with_capacity(n);
    for i in 0..n {
        let mean = sums[i].value() / m as f64;
        phi.push(mean);
        if m > 1 {
            let var = running[i].1 / (m - 1) as f64;
            stderr.push((var / m as f64).sqrt());
        } else {
            stderr.push(0.0);
        }
    }
    Ok(SampledValues {
        phi,
        stderr,
        empty_value,
        full_value,
        n_permutations: m,
    })
}

fn factorial_capped(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k))
}

// Lexicographic order, so the enumeration itself is deterministic.
fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

fn coalition_value<F>(f: &F, input: &[u32], groups: &FeatureGrouping, target: usize, mask_id: u32, mask: u64) -> f64
where
    F: Fn(&[u32]) -> Vec<f64>,
{
    let ablated = groups.ablate(input, |i| mask & (1u64 << i) != 0, mask_id);
    f(&ablated)[target]
}

fn check_target(predicted: &[f64], target: usize) -> Result<(), ExplainError> {
    if target >= predicted.len() {
        return Err(ExplainError::InvalidArgument(format!(
            "target class {target} out of range for {} classes",
            predicted.len()
        )));
    }
    Ok(())
}

/// Exact attribution of `f`'s target-class probability to the token groups.
pub fn shapley_exact<F>(
    f: F,
    input: &[u32],
    groups: &FeatureGrouping,
    target: usize,
    mask_id: u32,
) -> Result<AttributionReport, ExplainError>
where
    F: Fn(&[u32]) -> Vec<f64>,
{
    groups.check_fits(input.len())?;
    let predicted = f(input);
    check_target(&predicted, target)?;
    let (phi, base_value, _) = exact_values(groups.len(), |mask| {
        coalition_value(&f, input, groups, target, mask_id, mask)
    })?;
    Ok(AttributionReport {
        sample_id: String::new(),
        target,
        target_label: None,
        base_value,
        phi,
        stderr: None,
        groups: groups.groups().to_vec(),
        predicted,
        predicted_label: None,
        method: Method::Exact,
    })
}

/// Permutation-sampled attribution; deterministic for a fixed seed.
pub fn shapley_sampled<F>(
    f: F,
    input: &[u32],
    groups: &FeatureGrouping,
    target: usize,
    mask_id: u32,
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionReport, ExplainError>
where
    F: Fn(&[u32]) -> Vec<f64>,
{
    groups.check_fits(input.len())?;
    let predicted = f(input);
    check_target(&predicted, target)?;
    let est = sampled_values(groups.len(), n_permutations, seed, |mask| {
        coalition_value(&f, input, groups, target, mask_id, mask)
    })?;
    Ok(AttributionReport {
        sample_id: String::new(),
        target,
        target_label: None,
        base_value: est.empty_value,
        phi: est.phi,
        stderr: Some(est.stderr),
        groups: groups.groups().to_vec(),
        predicted,
        predicted_label: None,
        method: Method::Sampled { n_permutations, seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(weights: &[f64]) -> impl Fn(u64) -> f64 + '_ {
        move |mask| {
            weights
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, w)| w)
                .sum()
        }
    }

    #[test]
    fn constant_game_has_zero_values() {
        let (phi, base, full) = exact_values(5, |_| 0.3).unwrap();
        assert!(phi.iter().all(|&p| p.abs() < 1e-15));
        assert_eq!((base, full), (0.3, 0.3));
        let s = sampled_values(5, 50, 9, |_| 0.3).unwrap();
        assert!(s.phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn two_player_linear_game() {
        // Coalitions: v(∅)=0, v({1})=w1, v({2})=w2, v({1,2})=w1+w2.
        let (phi, base, _) = exact_values(2, linear(&[0.25, -0.7])).unwrap();
        assert!((phi[0] - 0.25).abs() < 1e-15);
        assert!((phi[1] + 0.7).abs() < 1e-15);
        assert_eq!(base, 0.0);
    }

    #[test]
    fn single_player_gets_full_difference() {
        let (phi, _, _) = exact_values(1, |m| if m == 1 { 0.9 } else { 0.2 }).unwrap();
        assert!((phi[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn interaction_is_split_evenly() {
        // v = 1 only when both players are present: each gets 1/2.
        let (phi, _, _) = exact_values(2, |m| if m == 3 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(phi, vec![0.5, 0.5]);
    }

    #[test]
    fn too_many_groups() {
        assert_eq!(
            exact_values(16, |_| 0.0).unwrap_err(),
            ExplainError::TooManyGroups { n: 16, max: 15 }
        );
    }

    #[test]
    fn permutations_are_lexicographic_and_complete() {
        let p = all_permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
        assert_eq!(all_permutations(0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn exhausting_permutations_matches_exact() {
        let game = |m: u64| {
            let x = f64::from((m & 0b1011).count_ones());
            (x * 0.7).sin() + if m & 0b0100 != 0 { 0.2 } else { 0.0 }
        };
        let (exact, _, _) = exact_values(4, game).unwrap();
        let s = sampled_values(4, 24, 123, game).unwrap();
        assert_eq!(s.n_permutations, 24);
        for (a, b) in exact.iter().zip(&s.phi) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
