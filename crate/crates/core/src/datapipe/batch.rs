use std::collections::BTreeMap;

use crate::rng::{mix, Rng};

use super::preprocess::{preprocess, PreprocessConfig};
use super::record::{DataError, SignalRecord};

const CROP_TAG: u64 = 0x43524f50; // "CROP"

/// One preprocessed record inside a batch: the crop-and-normalize output for
/// every channel, plus the identity needed for triplet assignment and
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    /// Index into the record list the batch stream was built from.
    pub record_idx: usize,
    pub id: String,
    pub subject_id: String,
    pub labels: BTreeMap<String, String>,
    /// `[C][T]` preprocessed samples.
    pub channels: Vec<Vec<f64>>,
}

/// Builds one epoch's batches: a seeded shuffle of the records, chunked into
/// `batch_size` groups, each record preprocessed with a crop window that is
/// a pure function of `(epoch_seed, record index)`. Every consumer given the
/// same inputs produces the identical sequence, which is what lets
/// distributed workers stay in lockstep without exchanging data.
///
/// The final partial batch is kept unless it has fewer than two records
/// (a single-record batch admits no valid triplet negative).
pub fn batch_iter(
    records: &[SignalRecord],
    batch_size: usize,
    cfg: &PreprocessConfig,
    epoch_seed: u64,
) -> Result<Vec<Vec<PreparedRecord>>, DataError> {
    if batch_size < 2 {
        return Err(DataError::InvalidConfig(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    if records.len() < 2 {
        return Err(DataError::InsufficientRecords(format!(
            "need at least 2 records, have {}",
            records.len()
        )));
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    Rng::new(epoch_seed).shuffle(&mut order);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            break;
        }
        let mut batch = Vec::with_capacity(chunk.len());
        for &record_idx in chunk {
            let record = &records[record_idx];
            let crop_seed = mix(epoch_seed, &[CROP_TAG, record_idx as u64]);
            batch.push(PreparedRecord {
                record_idx,
                id: record.id.clone(),
                subject_id: record.subject_id.clone(),
                labels: record.labels.clone(),
                channels: preprocess(record, cfg, crop_seed)?,
            });
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::synth::{synth_generate, SyntheticHeartConfig};

    fn records(n_subjects: usize, per_subject: usize) -> Vec<SignalRecord> {
        synth_generate(&SyntheticHeartConfig {
            n_subjects,
            records_per_subject: per_subject,
            channels: 3,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap()
    }

    fn cfg() -> PreprocessConfig {
        PreprocessConfig { target_fs: 50.0, crop_seconds: 2.0, normalize: true }
    }

    #[test]
    fn ten_records_in_batches_of_four() {
        let records = records(5, 2);
        let batches = batch_iter(&records, 4, &cfg(), 99).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2], "final partial batch kept");
    }

    #[test]
    fn trailing_single_record_batch_dropped() {
        let records = records(3, 3); // 9 records, batches of 4 -> 4, 4, 1
        let batches = batch_iter(&records, 4, &cfg(), 5).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4]);
    }

    #[test]
    fn same_epoch_seed_gives_identical_streams() {
        let records = records(4, 3);
        let a = batch_iter(&records, 4, &cfg(), 1234).unwrap();
        let b = batch_iter(&records, 4, &cfg(), 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_epoch_seeds_permute_differently() {
        let records = records(4, 3);
        let base: Vec<usize> = batch_iter(&records, 4, &cfg(), 0)
            .unwrap()
            .iter()
            .flatten()
            .map(|p| p.record_idx)
            .collect();
        let mut any_different = false;
        for seed in 1..=10 {
            let other: Vec<usize> = batch_iter(&records, 4, &cfg(), seed)
                .unwrap()
                .iter()
                .flatten()
                .map(|p| p.record_idx)
                .collect();
            if other != base {
                any_different = true;
            }
        }
        assert!(any_different, "ten fresh seeds should not all reproduce one permutation");
    }

    #[test]
    fn batch_records_are_normalized_windows() {
        let records = records(3, 2);
        let batches = batch_iter(&records, 3, &cfg(), 7).unwrap();
        for batch in &batches {
            for prepared in batch {
                assert_eq!(prepared.channels.len(), 3);
                for channel in &prepared.channels {
                    assert_eq!(channel.len(), 100);
                    let mean = channel.iter().sum::<f64>() / channel.len() as f64;
                    assert!(mean.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn too_few_records_rejected() {
        let records = records(1, 1);
        assert!(matches!(
            batch_iter(&records, 4, &cfg(), 0),
            Err(DataError::InsufficientRecords(_))
        ));
    }
}
