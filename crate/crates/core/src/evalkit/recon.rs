use crate::datapipe::{preprocess, PreprocessConfig, SignalRecord};
use crate::mae1d::{bind, cross_decode, encode, random_mask, Mae1dModel};
use crate::numcore::Graph;
use crate::rng::mix;

use super::EvalError;

const RECON_CROP_TAG: u64 = 0x52435243; // "RCRC"
const RECON_MASK_TAG: u64 = 0x5243534b; // "RCSK"

/// Cross-channel reconstruction error matrix: entry `(i, j)` is the mean
/// absolute error of reconstructing channel `j` from channel `i`'s masked
/// embedding through channel `j`'s decoder, averaged over records.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconMaeMatrix {
    pub channels: usize,
    /// Row-major `channels x channels`; rows index the source channel.
    pub matrix: Vec<f64>,
    pub record_count: usize,
}

impl ReconMaeMatrix {
    pub fn at(&self, source: usize, target: usize) -> f64 {
        self.matrix[source * self.channels + target]
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.channels).map(|i| self.at(i, i)).sum::<f64>() / self.channels as f64
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let c = self.channels;
        let mut sum = 0.0;
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    sum += self.at(i, j);
                }
            }
        }
        sum / (c * (c - 1)) as f64
    }
}

/// Builds the matrix by, per record: preprocessing one crop, masked-encoding
/// every source channel once, then decoding every (source, target) pair and
/// scoring mean absolute error against the target's true window.
pub fn recon_mae_report(
    models: &[Mae1dModel],
    records: &[SignalRecord],
    preprocess_cfg: &PreprocessConfig,
    mask_ratio: f64,
    seed: u64,
) -> Result<ReconMaeMatrix, EvalError> {
    let c = models.len();
    if c == 0 || records.is_empty() {
        return Err(EvalError::InvalidInput("need at least one model and one record".into()));
    }
    let num_patches = models[0].config.num_patches();
    let mut sums = vec![0.0; c * c];

    for (record_idx, record) in records.iter().enumerate() {
        let crop_seed = mix(seed, &[RECON_CROP_TAG, record_idx as u64]);
        let window = preprocess(record, preprocess_cfg, crop_seed)?;
        let mut graph = Graph::new();
        let bounds: Vec<_> = models.iter().map(|m| bind(&mut graph, m, false)).collect();
        for (source, source_bound) in bounds.iter().enumerate() {
            let plan = random_mask(
                num_patches,
                mask_ratio,
                mix(seed, &[RECON_MASK_TAG, record_idx as u64, source as u64]),
            )?;
            let enc = encode(&mut graph, source_bound, &window[source], Some(plan))?;
            for (target, target_bound) in bounds.iter().enumerate() {
                let pred = cross_decode(&mut graph, target_bound, &enc)?;
                let predicted = graph.value(pred);
                let truth = &window[target];
                let mae = predicted
                    .iter()
                    .zip(truth.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / truth.len() as f64;
                sums[source * c + target] += mae;
            }
        }
    }

    let matrix: Vec<f64> = sums.into_iter().map(|s| s / records.len() as f64).collect();
    Ok(ReconMaeMatrix { channels: c, matrix, record_count: records.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{synth_generate, SyntheticHeartConfig};
    use crate::mae1d::ModelConfig;

    fn fixture() -> (Vec<Mae1dModel>, Vec<SignalRecord>, PreprocessConfig) {
        let records = synth_generate(&SyntheticHeartConfig {
            n_subjects: 2,
            records_per_subject: 1,
            channels: 2,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap();
        let models: Vec<Mae1dModel> =
            (0..2).map(|c| Mae1dModel::init(&ModelConfig::tiny(), 100 + c as u64).unwrap()).collect();
        let cfg = PreprocessConfig { target_fs: 50.0, crop_seconds: 2.0, normalize: true };
        (models, records, cfg)
    }

    #[test]
    fn entries_are_finite_and_non_negative() {
        let (models, records, cfg) = fixture();
        let report = recon_mae_report(&models, &records, &cfg, 0.75, 3).unwrap();
        assert_eq!(report.matrix.len(), 4);
        for v in &report.matrix {
            assert!(v.is_finite() && *v >= 0.0);
        }
    }

    #[test]
    fn diagonal_equals_native_channel_reconstruction() {
        // Entry (i, i) must equal a direct reconstruct-and-score of channel
        // i with its own model under the same crop and mask.
        let (models, records, cfg) = fixture();
        let seed = 9;
        let report = recon_mae_report(&models, &records, &cfg, 0.75, seed).unwrap();

        let source = 0usize;
        let mut expected = 0.0;
        for (record_idx, record) in records.iter().enumerate() {
            let window = preprocess(&record.clone(), &cfg, mix(seed, &[RECON_CROP_TAG, record_idx as u64])).unwrap();
            let plan = random_mask(
                10,
                0.75,
                mix(seed, &[RECON_MASK_TAG, record_idx as u64, source as u64]),
            )
            .unwrap();
            let predicted = models[source].reconstruct(&window[source], Some(plan)).unwrap();
            expected += predicted
                .iter()
                .zip(window[source].iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / window[source].len() as f64;
        }
        expected /= records.len() as f64;
        assert!((report.at(source, source) - expected).abs() < 1e-12);
    }

    #[test]
    fn report_is_deterministic() {
        let (models, records, cfg) = fixture();
        let a = recon_mae_report(&models, &records, &cfg, 0.75, 3).unwrap();
        let b = recon_mae_report(&models, &records, &cfg, 0.75, 3).unwrap();
        assert_eq!(a, b);
    }
}
