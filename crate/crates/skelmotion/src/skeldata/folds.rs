//! Cross-validation fold construction.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::skeldata::io::DatasetManifest;

/// One train/test partition. Indices refer to child entries of the manifest
/// (positions in `DatasetManifest::entries`).
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partitions over the manifest's child entries. The default
/// is a sequence-level shuffle with fold sizes differing by at most one;
/// `subject_disjoint` instead keeps each subject's sequences in a single
/// fold (sizes then balance only as well as the subject grouping allows).
pub fn make_folds(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
    subject_disjoint: bool,
) -> Result<Vec<FoldSplit>> {
    let items = manifest.child_indices();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fold count must be at least 2, got {k}")));
    }
    if k > items.len() {
        return Err(Error::InvalidArgument(format!(
            "fold count {} exceeds {} sequences",
            k,
            items.len()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];

    if subject_disjoint {
        let mut subjects: Vec<String> = Vec::new();
        for idx in &items {
            let s = &manifest.entries[*idx].subject_id;
            if !subjects.contains(s) {
                subjects.push(s.clone());
            }
        }
        if k > subjects.len() {
            return Err(Error::InvalidArgument(format!(
                "fold count {} exceeds {} distinct subjects",
                k,
                subjects.len()
            )));
        }
        subjects.shuffle(&mut rng);
        for subject in &subjects {
            let group: Vec<usize> = items
                .iter()
                .copied()
                .filter(|i| &manifest.entries[*i].subject_id == subject)
                .collect();
            let smallest = (0..k).min_by_key(|f| folds[*f].len()).unwrap();
            folds[smallest].extend(group);
        }
    } else {
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        for (pos, idx) in shuffled.into_iter().enumerate() {
            folds[pos % k].push(idx);
        }
    }

    Ok((0..k)
        .map(|f| {
            let test = folds[f].clone();
            let train = (0..k)
                .filter(|g| *g != f)
                .flat_map(|g| folds[g].iter().copied())
                .collect();
            FoldSplit {
                fold_id: f,
                train,
                test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeldata::io::{ManifestEntry, SeqFormat};
    use crate::skeldata::sequence::Role;
    use std::collections::HashSet;

    fn manifest(n: usize, subjects: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry {
                id: format!("seq-{i}"),
                path: format!("seq-{i}.canon"),
                format: SeqFormat::Canon,
                severity_label: (i % 2) as i64,
                action_class: 0,
                subject_id: format!("subject-{}", i % subjects),
                fps: 30.0,
                role: Role::Child,
                partner_path: None,
                joints: None,
            })
            .collect();
        DatasetManifest {
            entries,
            base_dir: ".".into(),
        }
    }

    #[test]
    fn ten_folds_of_two_from_twenty() {
        let folds = make_folds(&manifest(20, 5), 10, 7, false).unwrap();
        assert_eq!(folds.len(), 10);
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.train.len(), 18);
        }
    }

    #[test]
    fn leave_one_out_when_k_equals_count() {
        let folds = make_folds(&manifest(6, 3), 6, 1, false).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 1);
        }
    }

    #[test]
    fn partitions_disjoint_and_exhaustive() {
        for (n, k, seed) in [(20, 10, 0), (21, 4, 9), (7, 3, 5), (50, 7, 123)] {
            let m = manifest(n, 5);
            let folds = make_folds(&m, k, seed, false).unwrap();
            let mut seen = HashSet::new();
            let mut sizes = Vec::new();
            for f in &folds {
                for idx in &f.test {
                    assert!(seen.insert(*idx), "index {idx} in two folds");
                }
                sizes.push(f.test.len());
            }
            assert_eq!(seen.len(), n, "folds not exhaustive");
            let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(max - min <= 1, "sizes differ by more than one: {sizes:?}");
        }
    }

    #[test]
    fn same_seed_same_partition() {
        let m = manifest(20, 5);
        let a = make_folds(&m, 5, 42, false).unwrap();
        let b = make_folds(&m, 5, 42, false).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.test, y.test);
            assert_eq!(x.train, y.train);
        }
        let c = make_folds(&m, 5, 43, false).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.test != y.test));
    }

    #[test]
    fn k_larger_than_count_rejected() {
        assert!(make_folds(&manifest(5, 5), 6, 0, false).is_err());
        assert!(make_folds(&manifest(5, 5), 1, 0, false).is_err());
    }

    #[test]
    fn subject_disjoint_keeps_subjects_together() {
        let m = manifest(24, 6);
        let folds = make_folds(&m, 3, 11, true).unwrap();
        for f in &folds {
            let test_subjects: HashSet<&str> = f
                .test
                .iter()
                .map(|i| m.entries[*i].subject_id.as_str())
                .collect();
            let train_subjects: HashSet<&str> = f
                .train
                .iter()
                .map(|i| m.entries[*i].subject_id.as_str())
                .collect();
            assert!(test_subjects.is_disjoint(&train_subjects));
        }
    }
}
