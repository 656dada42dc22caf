use std::collections::BTreeMap;

use super::folds::sample_folds;
use super::report::CvOutcome;
use super::EvalError;

/// k-nearest-neighbor cross-validated classification accuracy over
/// embeddings with subject labels.
///
/// Distances are Euclidean and the search is exact (no approximate
/// indexing). Neighbor ties break toward the lowest training index; a vote
/// tie among labels breaks toward the nearest neighbor's label. Folds are
/// sample-level: identifying known subjects requires their other samples in
/// the training folds.
pub fn knn_cv(
    embeddings: &[Vec<f64>],
    subjects: &[String],
    k: usize,
    folds: usize,
    seed: u64,
) -> Result<CvOutcome, EvalError> {
    if embeddings.len() != subjects.len() || embeddings.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            subjects.len()
        )));
    }
    if k == 0 {
        return Err(EvalError::InvalidInput("k must be positive".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in subjects {
        *counts.entry(s).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(EvalError::InvalidInput("need at least 2 subjects".into()));
    }
    if let Some((subject, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(EvalError::InvalidInput(format!(
            "subject {subject} has fewer than 2 samples and cannot be recovered from training folds"
        )));
    }

    let split = sample_folds(embeddings.len(), folds, seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train = split.train_indices(fold);
        let test = &split.folds[fold];
        let mut correct = 0usize;
        for &t in test {
            let predicted = classify(embeddings, subjects, &train, &embeddings[t], k);
            if predicted == subjects[t] {
                correct += 1;
            }
        }
        per_fold.push(correct as f64 / test.len() as f64);
    }
    Ok(CvOutcome::from_folds(per_fold, seed))
}

fn classify<'a>(
    embeddings: &[Vec<f64>],
    subjects: &'a [String],
    train: &[usize],
    query: &[f64],
    k: usize,
) -> &'a str {
    // train is ascending, so stable sort by distance breaks ties toward the
    // lowest training index.
    let mut dists: Vec<(f64, usize)> = train
        .iter()
        .map(|&i| {
            let d: f64 = embeddings[i]
                .iter()
                .zip(query.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let k = k.min(dists.len());
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, idx) in &dists[..k] {
        *votes.entry(subjects[*idx].as_str()).or_default() += 1;
    }
    let best = votes.values().max().copied().unwrap_or(0);
    // Vote tie: the nearest neighbor among the tied labels wins.
    dists[..k]
        .iter()
        .map(|(_, idx)| subjects[*idx].as_str())
        .find(|label| votes[label] == best)
        .expect("at least one neighbor")
}
