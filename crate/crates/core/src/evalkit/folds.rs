use std::collections::BTreeMap;

use crate::rng::Rng;

use super::EvalError;

/// Assignment of record indices to cross-validation folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
    pub subject_disjoint: bool,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Train indices = everything outside the given fold, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        train.sort_unstable();
        train
    }
}

/// Sample-level folds: a seeded shuffle dealt round-robin into `k` folds.
pub fn sample_folds(n: usize, k: usize, seed: u64) -> Result<FoldSplit, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::InvalidInput(format!(
            "need 2 <= folds <= samples, got {k} folds for {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    Ok(FoldSplit { folds, seed, subject_disjoint: false })
}

/// Subject-disjoint folds: subjects are shuffled and dealt round-robin, so
/// no fold shares a subject with another.
pub fn subject_folds(subjects: &[&str], k: usize, seed: u64) -> Result<FoldSplit, EvalError> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, subject) in subjects.iter().enumerate() {
        by_subject.entry(subject).or_default().push(idx);
    }
    if k < 2 || k > by_subject.len() {
        return Err(EvalError::InvalidInput(format!(
            "need 2 <= folds <= subjects, got {k} folds for {} subjects",
            by_subject.len()
        )));
    }
    let mut subject_order: Vec<&str> = by_subject.keys().copied().collect();
    Rng::new(seed).shuffle(&mut subject_order);
    let mut folds = vec![Vec::new(); k];
    for (pos, subject) in subject_order.into_iter().enumerate() {
        folds[pos % k].extend(by_subject[subject].iter().copied());
    }
    Ok(FoldSplit { folds, seed, subject_disjoint: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_the_index_set() {
        let split = sample_folds(23, 5, 9).unwrap();
        let mut seen = [false; 23];
        for fold in &split.folds {
            for &i in fold {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // Balanced within one element.
        let sizes: Vec<usize> = split.folds.iter().map(|f| f.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn train_indices_complement_the_fold() {
        let split = sample_folds(10, 3, 1).unwrap();
        for f in 0..3 {
            let train = split.train_indices(f);
            assert_eq!(train.len(), 10 - split.folds[f].len());
            for &i in &split.folds[f] {
                assert!(!train.contains(&i));
            }
        }
    }

    #[test]
    fn subject_folds_share_no_subject() {
        let subjects = vec!["a", "a", "b", "b", "c", "c", "d", "e", "e"];
        let split = subject_folds(&subjects, 3, 4).unwrap();
        assert!(split.subject_disjoint);
        for f in 0..3 {
            for g in (f + 1)..3 {
                for &i in &split.folds[f] {
                    for &j in &split.folds[g] {
                        assert_ne!(subjects[i], subjects[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_split() {
        assert_eq!(sample_folds(12, 4, 7).unwrap(), sample_folds(12, 4, 7).unwrap());
        assert_ne!(sample_folds(12, 4, 7).unwrap(), sample_folds(12, 4, 8).unwrap());
    }

    #[test]
    fn degenerate_fold_counts_rejected() {
        assert!(sample_folds(3, 1, 0).is_err());
        assert!(sample_folds(3, 4, 0).is_err());
    }
}
