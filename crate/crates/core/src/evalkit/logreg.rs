use super::folds::sample_folds;
use super::report::CvOutcome;
use super::EvalError;

const L2_LAMBDA: f64 = 1e-2;
const GD_ITERS: usize = 500;
const GD_STEP: f64 = 0.1;

/// Cross-validated F1 of an L2-regularized logistic regression over
/// embeddings with binary labels (positive = `true`).
///
/// Per fold: features are standardized with the training fold's statistics,
/// the model is fit by full-batch gradient descent (lambda 1e-2, 500
/// iterations, step 0.1, bias unpenalized), and F1 is measured on the
/// held-out fold.
pub fn logreg_cv(
    features: &[Vec<f64>],
    labels: &[bool],
    folds: usize,
    seed: u64,
) -> Result<CvOutcome, EvalError> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(EvalError::InvalidInput(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(EvalError::InvalidInput("feature rows of unequal width".into()));
    }
    let split = sample_folds(features.len(), folds, seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train = split.train_indices(fold);
        let positives = train.iter().filter(|&&i| labels[i]).count();
        if positives == 0 || positives == train.len() {
            return Err(EvalError::InvalidInput(format!(
                "training fold {fold} holds a single label value"
            )));
        }

        // Standardize with training statistics.
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        for &i in &train {
            for (j, v) in features[i].iter().enumerate() {
                mean[j] += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= train.len() as f64;
        }
        for &i in &train {
            for (j, v) in features[i].iter().enumerate() {
                std[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / train.len() as f64).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        let standardized = |i: usize| -> Vec<f64> {
            features[i].iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]).collect()
        };

        // Full-batch gradient descent from zero weights.
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let n = train.len() as f64;
        for _ in 0..GD_ITERS {
            let mut grad_w = vec![0.0; dim];
            let mut grad_b = 0.0;
            for &i in &train {
                let x = standardized(i);
                let z: f64 = w.iter().zip(x.iter()).map(|(wj, xj)| wj * xj).sum::<f64>() + b;
                let residual = sigmoid(z) - if labels[i] { 1.0 } else { 0.0 };
                for j in 0..dim {
                    grad_w[j] += residual * x[j];
                }
                grad_b += residual;
            }
            for j in 0..dim {
                w[j] -= GD_STEP * (grad_w[j] / n + L2_LAMBDA * w[j]);
            }
            b -= GD_STEP * grad_b / n;
        }

        // F1 on the held-out fold, positive class = true.
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for &i in &split.folds[fold] {
            let x = standardized(i);
            let z: f64 = w.iter().zip(x.iter()).map(|(wj, xj)| wj * xj).sum::<f64>() + b;
            let predicted = sigmoid(z) > 0.5;
            match (predicted, labels[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        per_fold.push(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 });
    }
    Ok(CvOutcome::from_folds(per_fold, seed))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn separable_two_dimensional_set_scores_perfect_f1() {
        // Two well-separated Gaussian blobs.
        let mut rng = Rng::new(8);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..30 {
            features.push(vec![2.0 + 0.2 * rng.normal(), 2.0 + 0.2 * rng.normal()]);
            labels.push(true);
            features.push(vec![-2.0 + 0.2 * rng.normal(), -2.0 + 0.2 * rng.normal()]);
            labels.push(false);
        }
        let outcome = logreg_cv(&features, &labels, 5, 3).unwrap();
        assert_eq!(outcome.mean, 1.0, "per-fold F1: {:?}", outcome.per_fold);
    }

    #[test]
    fn permuted_labels_score_near_prevalence() {
        // Label-permutation control: with labels detached from features the
        // mean F1 should sit near the chance level for a balanced set.
        let mut rng = Rng::new(123);
        let n = 60;
        let features: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let mut means = Vec::new();
        for seed in 0..10 {
            let mut label_rng = Rng::new(seed + 1000);
            let labels: Vec<bool> = (0..n).map(|_| label_rng.uniform() < 0.5).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            if let Ok(outcome) = logreg_cv(&features, &labels, 5, seed) {
                means.push(outcome.mean);
            }
        }
        let grand = means.iter().sum::<f64>() / means.len() as f64;
        // A balanced coin-flip classifier has F1 around 0.5.
        assert!(
            (grand - 0.5).abs() < 0.15,
            "permutation control should sit near chance, got {grand}"
        );
    }

    #[test]
    fn single_label_training_fold_rejected() {
        let features = vec![vec![0.0]; 6];
        let labels = vec![true; 6];
        assert!(logreg_cv(&features, &labels, 3, 0).is_err());
    }

    #[test]
    fn ragged_features_rejected() {
        let features = vec![vec![0.0, 1.0], vec![0.0]];
        let labels = vec![true, false];
        assert!(logreg_cv(&features, &labels, 2, 0).is_err());
    }
}
