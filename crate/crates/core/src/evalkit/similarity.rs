use crate::datapipe::{preprocess, PreprocessConfig, SignalRecord};
use crate::mae1d::Mae1dModel;
use crate::rng::mix;

use super::stats::{cosine_sim, pearson_corr};
use super::EvalError;

const SIM_CROP_TAG: u64 = 0x53494d43; // "SIMC"

/// Channel-pair similarity matrix: the lower triangle holds mean raw-signal
/// correlation, the upper triangle mean embedding cosine similarity, and the
/// diagonal is 1. Both triangles are computed from the same crops.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub channels: usize,
    /// Row-major `channels x channels`.
    pub matrix: Vec<f64>,
    pub repeats: usize,
    pub record_count: usize,
}

impl SimilarityReport {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.channels + j]
    }

    /// Mean of the embedding-similarity (upper) triangle.
    pub fn mean_upper(&self) -> f64 {
        let c = self.channels;
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..c {
            for j in (i + 1)..c {
                sum += self.at(i, j);
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Repeats a random-crop experiment: per repeat and record, one shared crop
/// is preprocessed; each channel pair contributes the Pearson correlation of
/// its two signals (lower triangle) and the cosine similarity of the
/// unmasked class-token embeddings (upper triangle). Entries average over
/// repeats and records.
pub fn similarity_report(
    models: &[Mae1dModel],
    records: &[SignalRecord],
    preprocess_cfg: &PreprocessConfig,
    repeats: usize,
    seed: u64,
) -> Result<SimilarityReport, EvalError> {
    let c = models.len();
    if c < 2 || records.is_empty() || repeats == 0 {
        return Err(EvalError::InvalidInput(
            "similarity report needs at least 2 models, 1 record, and 1 repeat".into(),
        ));
    }
    let mut signal_sums = vec![0.0; c * c];
    let mut embed_sums = vec![0.0; c * c];
    let mut samples = 0usize;

    for repeat in 0..repeats {
        for (record_idx, record) in records.iter().enumerate() {
            if record.n_channels() < c {
                return Err(EvalError::InvalidInput(format!(
                    "record {} has {} channels, need {c}",
                    record.id,
                    record.n_channels()
                )));
            }
            let crop_seed = mix(seed, &[SIM_CROP_TAG, repeat as u64, record_idx as u64]);
            let window = preprocess(record, preprocess_cfg, crop_seed)?;
            let embeddings: Vec<Vec<f64>> = models
                .iter()
                .enumerate()
                .map(|(ch, model)| model.embed_cls(&window[ch], None))
                .collect::<Result<_, _>>()?;
            for i in 0..c {
                for j in (i + 1)..c {
                    signal_sums[i * c + j] += pearson_corr(&window[i], &window[j])?;
                    embed_sums[i * c + j] += cosine_sim(&embeddings[i], &embeddings[j])?;
                }
            }
            samples += 1;
        }
    }

    let mut matrix = vec![0.0; c * c];
    for i in 0..c {
        matrix[i * c + i] = 1.0;
        for j in (i + 1)..c {
            // Upper triangle: embeddings. Lower triangle: signals.
            matrix[i * c + j] = embed_sums[i * c + j] / samples as f64;
            matrix[j * c + i] = signal_sums[i * c + j] / samples as f64;
        }
    }
    Ok(SimilarityReport { channels: c, matrix, repeats, record_count: records.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{synth_generate, SyntheticHeartConfig};
    use crate::mae1d::ModelConfig;

    fn fixture() -> (Vec<Mae1dModel>, Vec<SignalRecord>, PreprocessConfig) {
        let records = synth_generate(&SyntheticHeartConfig {
            n_subjects: 2,
            records_per_subject: 2,
            channels: 3,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap();
        let models: Vec<Mae1dModel> =
            (0..3).map(|c| Mae1dModel::init(&ModelConfig::tiny(), c as u64).unwrap()).collect();
        let cfg = PreprocessConfig { target_fs: 50.0, crop_seconds: 2.0, normalize: true };
        (models, records, cfg)
    }

    #[test]
    fn identical_models_on_identical_channels_give_unit_upper_triangle() {
        // Duplicate one channel across all slots and use one shared model:
        // embeddings per pair are identical, so cosine similarity is 1.
        let (_, mut records, cfg) = fixture();
        for record in records.iter_mut() {
            let first = record.channels[0].clone();
            record.channels = vec![first.clone(), first.clone(), first];
        }
        let shared = Mae1dModel::init(&ModelConfig::tiny(), 9).unwrap();
        let models = vec![shared.clone(), shared.clone(), shared];
        let report = similarity_report(&models, &records, &cfg, 2, 5).unwrap();
        for i in 0..3 {
            assert!((report.at(i, i) - 1.0).abs() < 1e-9);
            for j in (i + 1)..3 {
                assert!((report.at(i, j) - 1.0).abs() < 1e-9, "upper ({i},{j}) = {}", report.at(i, j));
                assert!((report.at(j, i) - 1.0).abs() < 1e-9, "lower ({j},{i}) = {}", report.at(j, i));
            }
        }
    }

    #[test]
    fn entries_are_bounded() {
        let (models, records, cfg) = fixture();
        let report = similarity_report(&models, &records, &cfg, 2, 7).unwrap();
        for v in &report.matrix {
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v), "entry {v} out of range");
        }
    }

    #[test]
    fn report_is_deterministic_in_seed() {
        let (models, records, cfg) = fixture();
        let a = similarity_report(&models, &records, &cfg, 2, 7).unwrap();
        let b = similarity_report(&models, &records, &cfg, 2, 7).unwrap();
        assert_eq!(a, b);
    }
}
