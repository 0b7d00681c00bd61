//! Leave-one-subject-out splitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

use super::types::EEGDataset;

/// How the non-test pool is divided into train and validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValSplit {
    /// All remaining subjects' segments shuffled together, then cut.
    #[default]
    Pooled,
    /// The cut is applied inside each remaining subject separately.
    PerSubject,
}

/// A segment lifted out of the dataset, tagged with its origin for identity
/// checks and metadata export.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub subject_id: String,
    /// Index within the subject's original segment list.
    pub index: usize,
    pub samples: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledSegment>,
    pub val: Vec<LabeledSegment>,
    pub test: Vec<LabeledSegment>,
}

fn lift(dataset: &EEGDataset, subject: usize, index: usize) -> LabeledSegment {
    let sub = &dataset.subjects[subject];
    let seg = &sub.segments[index];
    LabeledSegment {
        subject_id: sub.subject_id.clone(),
        index,
        samples: seg.samples.clone(),
        label: seg.label,
    }
}

/// Cuts `count` validation items off a shuffled index list. At least one
/// item lands on each side whenever the pool allows it.
fn val_count(pool: usize, val_fraction: f64) -> usize {
    let raw = (pool as f64 * val_fraction).round() as usize;
    raw.clamp(1, pool.saturating_sub(1).max(1))
}

fn check_fraction(val_fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Distributes every segment not belonging to `held` into train and
/// validation under the chosen strategy.
fn cut_pool(
    dataset: &EEGDataset,
    held: Option<usize>,
    val_fraction: f64,
    seed: u64,
    strategy: ValSplit,
) -> (Vec<LabeledSegment>, Vec<LabeledSegment>) {
    let rng = RngState::new(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    match strategy {
        ValSplit::Pooled => {
            let mut pool: Vec<(usize, usize)> = Vec::new();
            for (s, subject) in dataset.subjects.iter().enumerate() {
                if Some(s) != held {
                    pool.extend((0..subject.segments.len()).map(|i| (s, i)));
                }
            }
            rng.derive(0).shuffle(&mut pool);
            let n_val = val_count(pool.len(), val_fraction);
            for (rank, (s, i)) in pool.into_iter().enumerate() {
                let item = lift(dataset, s, i);
                if rank < n_val {
                    val.push(item);
                } else {
                    train.push(item);
                }
            }
        }
        ValSplit::PerSubject => {
            for (s, subject) in dataset.subjects.iter().enumerate() {
                if Some(s) == held {
                    continue;
                }
                let mut order: Vec<usize> = (0..subject.segments.len()).collect();
                rng.derive(1 + s as u64).shuffle(&mut order);
                let n_val = val_count(order.len(), val_fraction);
                for (rank, i) in order.into_iter().enumerate() {
                    let item = lift(dataset, s, i);
                    if rank < n_val {
                        val.push(item);
                    } else {
                        train.push(item);
                    }
                }
            }
        }
    }
    (train, val)
}

/// Every segment in dataset order, lifted with its origin tag.
pub fn all_segments(dataset: &EEGDataset) -> Vec<LabeledSegment> {
    dataset
        .subjects
        .iter()
        .enumerate()
        .flat_map(|(s, subject)| (0..subject.segments.len()).map(move |i| (s, i)))
        .map(|(s, i)| lift(dataset, s, i))
        .collect()
}

/// Splits the whole dataset into train and validation with no held-out
/// subject. Uses the same seeded shuffling scheme as `loso_split`.
pub fn train_val_split(
    dataset: &EEGDataset,
    val_fraction: f64,
    seed: u64,
    strategy: ValSplit,
) -> Result<(Vec<LabeledSegment>, Vec<LabeledSegment>)> {
    dataset.validate()?;
    check_fraction(val_fraction)?;
    Ok(cut_pool(dataset, None, val_fraction, seed, strategy))
}

/// Holds out every segment of `test_subject`; the rest are split into train
/// and validation by `val_fraction` under the chosen strategy. Shuffling is
/// seeded, so membership is a pure function of the arguments.
pub fn loso_split(
    dataset: &EEGDataset,
    test_subject: &str,
    val_fraction: f64,
    seed: u64,
    strategy: ValSplit,
) -> Result<Split> {
    dataset.validate()?;
    if dataset.subjects.len() < 2 {
        return Err(Error::Config(
            "leave-one-subject-out needs at least 2 subjects".into(),
        ));
    }
    check_fraction(val_fraction)?;
    let held = dataset
        .subjects
        .iter()
        .position(|s| s.subject_id == test_subject)
        .ok_or_else(|| Error::Lookup {
            kind: "subject",
            name: test_subject.to_string(),
        })?;

    let test: Vec<LabeledSegment> = (0..dataset.subjects[held].segments.len())
        .map(|i| lift(dataset, held, i))
        .collect();

    let (train, val) = cut_pool(dataset, Some(held), val_fraction, seed, strategy);
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::{Segment, SubjectData};
    use std::collections::HashSet;

    fn dataset(subjects: usize, per_subject: usize) -> EEGDataset {
        EEGDataset {
            channels: 1,
            segment_len: 2,
            sampling_rate: 10.0,
            n_classes: 2,
            subjects: (0..subjects)
                .map(|s| SubjectData {
                    subject_id: format!("s{:02}", s + 1),
                    segments: (0..per_subject)
                        .map(|i| Segment {
                            samples: vec![s as f32, i as f32],
                            label: i % 2,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn identities(items: &[LabeledSegment]) -> HashSet<(String, usize)> {
        items
            .iter()
            .map(|s| (s.subject_id.clone(), s.index))
            .collect()
    }

    #[test]
    fn three_subject_example_counts() {
        let data = dataset(3, 10);
        let split = loso_split(&data, "s02", 0.2, 7, ValSplit::Pooled).unwrap();
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.val.len(), 4);
        assert_eq!(split.train.len(), 16);
        assert!(split.test.iter().all(|s| s.subject_id == "s02"));
    }

    #[test]
    fn partitions_are_disjoint_and_exhaustive() {
        let data = dataset(4, 7);
        let split = loso_split(&data, "s04", 0.2, 3, ValSplit::Pooled).unwrap();
        let train = identities(&split.train);
        let val = identities(&split.val);
        let test = identities(&split.test);
        assert!(train.is_disjoint(&val));
        assert!(train.is_disjoint(&test));
        assert!(val.is_disjoint(&test));
        assert_eq!(train.len() + val.len() + test.len(), 28);
    }

    #[test]
    fn same_seed_reproduces_membership() {
        let data = dataset(3, 9);
        let a = loso_split(&data, "s01", 0.2, 42, ValSplit::Pooled).unwrap();
        let b = loso_split(&data, "s01", 0.2, 42, ValSplit::Pooled).unwrap();
        assert_eq!(a, b);
        let c = loso_split(&data, "s01", 0.2, 43, ValSplit::Pooled).unwrap();
        assert_ne!(identities(&a.val), identities(&c.val));
    }

    #[test]
    fn per_subject_strategy_cuts_inside_each_subject() {
        let data = dataset(3, 10);
        let split = loso_split(&data, "s03", 0.2, 1, ValSplit::PerSubject).unwrap();
        for sid in ["s01", "s02"] {
            let v = split.val.iter().filter(|s| s.subject_id == sid).count();
            let t = split.train.iter().filter(|s| s.subject_id == sid).count();
            assert_eq!(v, 2, "{sid}");
            assert_eq!(t, 8, "{sid}");
        }
    }

    #[test]
    fn bad_requests_are_rejected() {
        let data = dataset(3, 4);
        assert!(matches!(
            loso_split(&data, "nobody", 0.2, 0, ValSplit::Pooled),
            Err(Error::Lookup { kind: "subject", .. })
        ));
        assert!(loso_split(&data, "s01", 0.0, 0, ValSplit::Pooled).is_err());
        assert!(loso_split(&data, "s01", 1.0, 0, ValSplit::Pooled).is_err());
        let solo = dataset(1, 4);
        assert!(loso_split(&solo, "s01", 0.2, 0, ValSplit::Pooled).is_err());
    }

    #[test]
    fn tiny_pools_keep_both_sides_nonempty() {
        let data = dataset(2, 2);
        let split = loso_split(&data, "s02", 0.2, 5, ValSplit::Pooled).unwrap();
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.train.len(), 1);
    }

    #[test]
    fn whole_set_split_covers_everything_once() {
        let data = dataset(3, 10);
        let (train, val) = train_val_split(&data, 0.2, 9, ValSplit::Pooled).unwrap();
        assert_eq!(val.len(), 6);
        assert_eq!(train.len(), 24);
        let train_ids = identities(&train);
        let val_ids = identities(&val);
        assert!(train_ids.is_disjoint(&val_ids));
        assert_eq!(train_ids.len() + val_ids.len(), 30);
        let again = train_val_split(&data, 0.2, 9, ValSplit::Pooled).unwrap();
        assert_eq!((train, val), again);
    }

    #[test]
    fn lifting_all_segments_preserves_order() {
        let data = dataset(2, 3);
        let all = all_segments(&data);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0].subject_id, "s01");
        assert_eq!(all[0].index, 0);
        assert_eq!(all[5].subject_id, "s02");
        assert_eq!(all[5].index, 2);
        assert_eq!(all[4].samples, vec![1.0, 1.0]);
    }
}
