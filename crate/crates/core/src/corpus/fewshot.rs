use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{render_sample, ContextMode, CorpusError, Paragraph, Sample};
use crate::util::derived_rng;

/// N labeled samples per class plus the rest of the training split as an unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotBundle {
    pub shot_size: usize,
    /// 1-based set number within its shot size.
    pub set_id: usize,
    pub labeled: Vec<Sample>,
    /// Remaining training samples; labels are kept in memory but never written.
    pub unlabeled: Vec<Sample>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotTree {
    pub bundles: Vec<FewShotBundle>,
    pub warnings: Vec<String>,
}

impl FewShotTree {
    pub fn bundle(&self, shot_size: usize, set_id: usize) -> Option<&FewShotBundle> {
        self.bundles
            .iter()
            .find(|b| b.shot_size == shot_size && b.set_id == set_id)
    }
}

/// Draw `n_sets` labeled sets per shot size, sampling each class without replacement.
///
/// Sets of one shot size are disjoint while the class population allows it;
/// beyond that a set is resampled independently with its own derived seed. A
/// class with fewer than N members contributes all of them and a warning is
/// recorded.
pub fn build_fewshot_bundles(
    train: &[Sample],
    sizes: &[usize],
    n_sets: usize,
    seed: u64,
) -> Result<FewShotTree, CorpusError> {
    if train.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CorpusError::InvalidArgument("shot sizes must be positive".into()));
    }
    if n_sets == 0 {
        return Err(CorpusError::InvalidArgument("n_sets must be positive".into()));
    }
    let mut classes: Vec<&str> = Vec::new();
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.iter().enumerate() {
        let label = s
            .label()
            .ok_or_else(|| CorpusError::InvalidArgument(format!("training sample {} has no label", s.id())))?;
        let entry = members.entry(label).or_default();
        if entry.is_empty() {
            classes.push(label);
        }
        entry.push(i);
    }

    let mut bundles = Vec::new();
    let mut warnings = Vec::new();
    for &n in sizes {
        let mut per_set: Vec<Vec<usize>> = vec![Vec::new(); n_sets];
        for &class in &classes {
            let pool = &members[class];
            if pool.len() < n {
                let msg = format!(
                    "class {class:?} has {} samples, fewer than {n} shots; using all of them",
                    pool.len()
                );
                warn!(
                    "event=insufficient_class_population class={class} available={} shots={n}",
                    pool.len()
                );
                warnings.push(msg);
            }
            let mut shuffled = pool.clone();
            shuffled.shuffle(&mut derived_rng(seed, &format!("fewshot/{n}/{class}")));
            for (k, set) in per_set.iter_mut().enumerate() {
                let lo = k * n;
                if lo + n <= shuffled.len() {
                    set.extend_from_slice(&shuffled[lo..lo + n]);
                } else if k == 0 {
                    set.extend(shuffled.iter().take(n));
                } else {
                    let mut again = pool.clone();
                    again.shuffle(&mut derived_rng(seed, &format!("fewshot/{n}/{class}/set{}", k + 1)));
                    set.extend(again.into_iter().take(n));
                }
            }
        }
        for (k, labeled_idx) in per_set.into_iter().enumerate() {
            let chosen: HashSet<usize> = labeled_idx.iter().copied().collect();
            bundles.push(FewShotBundle {
                shot_size: n,
                set_id: k + 1,
                labeled: labeled_idx.iter().map(|&i| train[i].clone()).collect(),
                unlabeled: (0..train.len())
                    .filter(|i| !chosen.contains(i))
                    .map(|i| train[i].clone())
                    .collect(),
                seed,
            });
        }
    }
    Ok(FewShotTree { bundles, warnings })
}

/// One CSV row; `label` is absent from unlabeled files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub prev_text: String,
    pub next_text: String,
}

pub fn write_sample_csv(path: &Path, samples: &[Sample], with_label: bool) -> Result<(), CorpusError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if with_label {
        w.write_record(["doc_id", "index", "text", "label", "prev_text", "next_text"])?;
    } else {
        w.write_record(["doc_id", "index", "text", "prev_text", "next_text"])?;
    }
    for s in samples {
        let index = s.main.index.to_string();
        let prev = s.prev.as_deref().unwrap_or("");
        let next = s.next.as_deref().unwrap_or("");
        if with_label {
            w.write_record([&s.main.doc_id, &index, &s.main.text, &s.main.label, prev, next])?;
        } else {
            w.write_record([&s.main.doc_id, &index, &s.main.text, prev, next])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a bundle CSV and render its samples under `mode`.
pub fn read_sample_csv(path: &Path, mode: ContextMode, sep: &str) -> Result<Vec<Sample>, CorpusError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: SampleRow = row?;
        let main = Paragraph {
            doc_id: row.doc_id,
            index: row.index,
            text: row.text,
            label: row.label.unwrap_or_default(),
        };
        let prev = Some(row.prev_text).filter(|t| !t.is_empty());
        let next = Some(row.next_text).filter(|t| !t.is_empty());
        out.push(render_sample(&main, prev.as_deref(), next.as_deref(), mode, sep));
    }
    Ok(out)
}

/// Emit `{N}shots/set_k.csv`, `{N}shots/unlabeled_k.csv` and `holdout/full_holdout.csv`.
pub fn write_fewshot_tree(dir: &Path, tree: &FewShotTree, holdout: &[Sample]) -> Result<(), CorpusError> {
    for b in &tree.bundles {
        let shot_dir = dir.join(format!("{}shots", b.shot_size));
        fs::create_dir_all(&shot_dir)?;
        write_sample_csv(&shot_dir.join(format!("set_{}.csv", b.set_id)), &b.labeled, true)?;
        write_sample_csv(
            &shot_dir.join(format!("unlabeled_{}.csv", b.set_id)),
            &b.unlabeled,
            false,
        )?;
    }
    let holdout_dir = dir.join("holdout");
    fs::create_dir_all(&holdout_dir)?;
    write_sample_csv(&holdout_dir.join("full_holdout.csv"), holdout, true)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_samples, DEFAULT_SEP};

    fn toy(counts: &[(&str, usize)]) -> Vec<Sample> {
        let mut paras = Vec::new();
        let mut doc = 0;
        for &(label, n) in counts {
            for i in 0..n {
                paras.push(Paragraph::new(format!("d{doc}"), i, format!("{label} text {i}"), label));
            }
            doc += 1;
        }
        build_samples(&paras, ContextMode::Context, DEFAULT_SEP)
    }

    fn key(s: &Sample) -> (String, usize) {
        (s.main.doc_id.clone(), s.main.index)
    }

    #[test]
    fn under_populated_class_contributes_everything() {
        let train = toy(&[("a", 30), ("small", 5)]);
        let tree = build_fewshot_bundles(&train, &[10], 1, 42).unwrap();
        let b = &tree.bundles[0];
        assert_eq!(b.labeled.iter().filter(|s| s.main.label == "small").count(), 5);
        assert_eq!(b.labeled.iter().filter(|s| s.main.label == "a").count(), 10);
        assert_eq!(tree.warnings.len(), 1);
    }

    #[test]
    fn sets_are_disjoint_when_population_allows() {
        let train = toy(&[("a", 40), ("b", 40)]);
        let tree = build_fewshot_bundles(&train, &[10], 3, 42).unwrap();
        let mut seen = HashSet::new();
        for b in &tree.bundles {
            for s in &b.labeled {
                assert!(seen.insert(key(s)), "sample drawn twice");
            }
        }
        assert_eq!(seen.len(), 60);
    }

    #[test]
    fn labeled_and_unlabeled_partition_the_training_split() {
        let train = toy(&[("a", 25), ("b", 12), ("c", 9)]);
        let tree = build_fewshot_bundles(&train, &[4, 10], 3, 7).unwrap();
        let all: HashSet<_> = train.iter().map(key).collect();
        for b in &tree.bundles {
            let l: HashSet<_> = b.labeled.iter().map(key).collect();
            let u: HashSet<_> = b.unlabeled.iter().map(key).collect();
            assert!(l.is_disjoint(&u));
            assert_eq!(&l | &u, all);
            assert_eq!(l.len(), b.labeled.len());
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_fewshot_bundles(&[], &[10], 3, 1).is_err());
        let train = toy(&[("a", 3)]);
        assert!(build_fewshot_bundles(&train, &[0], 3, 1).is_err());
        assert!(build_fewshot_bundles(&train, &[1], 0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_neighbors() {
        let train = toy(&[("a", 4)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_sample_csv(&path, &train, true).unwrap();
        assert_eq!(
            read_sample_csv(&path, ContextMode::Context, DEFAULT_SEP).unwrap(),
            train
        );
        write_sample_csv(&path, &train, false).unwrap();
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("doc_id,index,text,prev_text,next_text\n"));
        let back = read_sample_csv(&path, ContextMode::NoContext, DEFAULT_SEP).unwrap();
        assert!(back.iter().all(|s| s.label().is_none()));
        assert_eq!(back[1].rendered, "a text 1");
    }
}
