use crate::data::{DatasetIndex, IndexReport};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// The first `labeled_count` samples in index order.
    Prefix,
    /// A seeded random subset, each part kept in index order.
    Shuffled { seed: u64 },
}

/// Partitions `index` into a labeled part of `labeled_count` samples and an unlabeled rest
/// whose annotations are stripped.
pub fn split_labeled_unlabeled(
    index: &DatasetIndex,
    labeled_count: usize,
    mode: SplitMode,
) -> Result<(DatasetIndex, DatasetIndex)> {
    if labeled_count > index.len() {
        return Err(Error::InvalidParameter(format!(
            "labeled count {labeled_count} exceeds the {} samples in the index",
            index.len()
        )));
    }
    let mut is_labeled = vec![false; index.len()];
    match mode {
        SplitMode::Prefix => is_labeled[..labeled_count].fill(true),
        SplitMode::Shuffled { seed } => {
            let mut order: Vec<usize> = (0..index.len()).collect();
            RandomStream::new(seed).split_named("split").shuffle(&mut order);
            for &i in &order[..labeled_count] {
                is_labeled[i] = true;
            }
        }
    }
    let part = |samples| DatasetIndex {
        root: index.root.clone(),
        profile: index.profile,
        samples,
        report: IndexReport::default(),
    };
    let labeled = index
        .samples
        .iter()
        .zip(&is_labeled)
        .filter(|(_, &l)| l)
        .map(|(s, _)| s.clone())
        .collect();
    let unlabeled = index
        .samples
        .iter()
        .zip(&is_labeled)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| s.unlabeled())
        .collect();
    Ok((part(labeled), part(unlabeled)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Profile, Sample};
    use crate::geometry::{Joint, KeypointSet};

    fn index(n: usize) -> DatasetIndex {
        DatasetIndex {
            root: ".".into(),
            profile: Profile::Synth13,
            samples: (0..n)
                .map(|i| Sample {
                    image_id: i as u64,
                    annotation_id: Some(i as u64),
                    file_name: format!("{i}.png"),
                    image_size: None,
                    keypoints: Some(KeypointSet::new(vec![Joint::visible(1.0, 1.0)])),
                    bbox: None,
                    area: Some(1.0),
                    head_size: None,
                    missing_image: false,
                })
                .collect(),
            report: IndexReport::default(),
        }
    }

    #[test]
    fn prefix_is_seed_independent_and_partitions() {
        let idx = index(10);
        let (l, u) = split_labeled_unlabeled(&idx, 3, SplitMode::Prefix).unwrap();
        let ids: Vec<u64> = l.samples.iter().map(|s| s.image_id).collect();
        assert_eq!(ids, [0, 1, 2]);
        assert_eq!(u.len(), 7);
        assert!(u.samples.iter().all(|s| !s.is_labeled()));
    }

    #[test]
    fn all_labeled_leaves_empty_unlabeled() {
        let (l, u) = split_labeled_unlabeled(&index(4), 4, SplitMode::Prefix).unwrap();
        assert_eq!((l.len(), u.len()), (4, 0));
        assert!(split_labeled_unlabeled(&index(4), 5, SplitMode::Prefix).is_err());
    }

    #[test]
    fn shuffled_is_deterministic_disjoint_and_complete() {
        let idx = index(50);
        let run = |seed| split_labeled_unlabeled(&idx, 20, SplitMode::Shuffled { seed }).unwrap();
        let (a, b) = run(3);
        assert_eq!(run(3), (a.clone(), b.clone()));
        let mut ids: Vec<u64> = a.samples.iter().chain(&b.samples).map(|s| s.image_id).collect();
        ids.sort();
        assert_eq!(ids, (0..50).collect::<Vec<u64>>());
        assert_ne!(run(4).0.samples, a.samples);
    }
}
