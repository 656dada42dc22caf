use serde::{Deserialize, Serialize};

use crate::rng::Rng;

use super::record::{DataError, SignalRecord};

/// Preprocessing applied before every training or inference forward pass:
/// resample to a common grid, crop a fixed-length window, subtract each
/// channel's mean. No filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_fs: f64,
    pub crop_seconds: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { target_fs: 500.0, crop_seconds: 5.0, normalize: true }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.target_fs.is_nan() || self.target_fs <= 0.0 || self.crop_seconds.is_nan() || self.crop_seconds <= 0.0 {
            return Err(DataError::InvalidConfig(format!(
                "target_fs {} and crop_seconds {} must be positive",
                self.target_fs, self.crop_seconds
            )));
        }
        Ok(())
    }

    /// Window length in samples.
    pub fn crop_len(&self) -> usize {
        crop_samples(self.crop_seconds, self.target_fs)
    }
}

pub fn crop_samples(crop_seconds: f64, target_fs: f64) -> usize {
    (crop_seconds * target_fs).round() as usize
}

/// Linear interpolation of a signal onto the uniform `fs_out` grid spanning
/// the same duration (`n_out = round(n * fs_out / fs_in)`). Values past the
/// last input sample clamp to it.
pub fn resample_linear(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>, DataError> {
    if fs_in.is_nan() || fs_in <= 0.0 || fs_out.is_nan() || fs_out <= 0.0 {
        return Err(DataError::InvalidConfig(format!(
            "sampling rates must be positive, got {fs_in} and {fs_out}"
        )));
    }
    if signal.len() < 2 {
        return Err(DataError::InvalidRecord(format!(
            "resample needs at least 2 samples, got {}",
            signal.len()
        )));
    }
    if fs_in == fs_out {
        return Ok(signal.to_vec());
    }
    let n_in = signal.len();
    let n_out = ((n_in as f64) * fs_out / fs_in).round() as usize;
    let step = fs_in / fs_out;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let pos = j as f64 * step;
        let i = pos.floor() as usize;
        if i + 1 >= n_in {
            out.push(signal[n_in - 1]);
        } else {
            let frac = pos - i as f64;
            out.push(signal[i] + frac * (signal[i + 1] - signal[i]));
        }
    }
    Ok(out)
}

/// Resamples every channel to the target rate and crops one shared random
/// window of `crop_seconds`. The window offset is a deterministic function
/// of the seed.
pub fn crop_random(
    record: &SignalRecord,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>, DataError> {
    cfg.validate()?;
    record.validate()?;
    let window = cfg.crop_len();
    let resampled: Vec<Vec<f64>> = record
        .channels
        .iter()
        .map(|c| resample_linear(c, record.fs_hz, cfg.target_fs))
        .collect::<Result<_, _>>()?;
    let n = resampled[0].len();
    if n < window {
        return Err(DataError::RecordTooShort {
            id: record.id.clone(),
            have: n as f64 / cfg.target_fs,
            need: cfg.crop_seconds,
        });
    }
    let offset = Rng::new(seed).below(n - window + 1);
    Ok(resampled
        .into_iter()
        .map(|c| c[offset..offset + window].to_vec())
        .collect())
}

/// Subtracts each channel's mean in place. No variance scaling, no
/// filtering.
pub fn mean_normalize(channels: &mut [Vec<f64>]) {
    for channel in channels.iter_mut() {
        if channel.is_empty() {
            continue;
        }
        let mean = channel.iter().sum::<f64>() / channel.len() as f64;
        for v in channel.iter_mut() {
            *v -= mean;
        }
    }
}

/// Full preprocessing: resample, seeded crop, then per-channel mean
/// subtraction when the config asks for it.
pub fn preprocess(
    record: &SignalRecord,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>, DataError> {
    let mut channels = crop_random(record, cfg, seed)?;
    if cfg.normalize {
        mean_normalize(&mut channels);
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record_from(channels: Vec<Vec<f64>>, fs_hz: f64) -> SignalRecord {
        SignalRecord {
            id: "r".into(),
            subject_id: "s".into(),
            fs_hz,
            channels,
            labels: BTreeMap::new(),
        }
    }

    #[test]
    fn five_seconds_at_257hz_becomes_2500_samples() {
        let signal = vec![0.25; 1285];
        let out = resample_linear(&signal, 257.0, 500.0).unwrap();
        assert_eq!(out.len(), 2500);
    }

    #[test]
    fn constant_signal_stays_constant() {
        let signal = vec![3.75; 123];
        for fs_out in [100.0, 257.0, 500.0, 1000.0] {
            let out = resample_linear(&signal, 400.0, fs_out).unwrap();
            assert!(out.iter().all(|&v| (v - 3.75).abs() < 1e-12));
        }
    }

    #[test]
    fn identical_rates_are_identity() {
        let signal: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        assert_eq!(resample_linear(&signal, 128.0, 128.0).unwrap(), signal);
    }

    #[test]
    fn linear_ramp_is_exact_at_interior_points() {
        let signal: Vec<f64> = (0..100).map(|i| 0.5 * i as f64 - 3.0).collect();
        let out = resample_linear(&signal, 100.0, 250.0).unwrap();
        // Interior output points sit on the same line: value = 0.5 * t*fs_in - 3.
        for (j, &v) in out.iter().enumerate() {
            let pos = j as f64 * (100.0 / 250.0);
            if pos <= 99.0 {
                let expect = 0.5 * pos - 3.0;
                assert!((v - expect).abs() < 1e-12, "j={j}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn singleton_signal_rejected() {
        assert!(resample_linear(&[1.0], 10.0, 20.0).is_err());
    }

    #[test]
    fn crop_yields_exact_window_shape() {
        let record = record_from(vec![vec![0.1; 1000], vec![0.2; 1000]], 100.0);
        let cfg = PreprocessConfig { target_fs: 500.0, crop_seconds: 5.0, normalize: false };
        let out = crop_random(&record, &cfg, 7).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|c| c.len() == 2500));
    }

    #[test]
    fn record_exactly_window_long_is_the_unique_window() {
        let data: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let record = record_from(vec![data.clone()], 100.0);
        let cfg = PreprocessConfig { target_fs: 100.0, crop_seconds: 5.0, normalize: false };
        for seed in 0..5 {
            assert_eq!(crop_random(&record, &cfg, seed).unwrap()[0], data);
        }
    }

    #[test]
    fn same_seed_same_window_and_offsets_shared_across_channels() {
        let base: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.01).sin()).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 1.0).collect();
        let record = record_from(vec![base, shifted], 200.0);
        let cfg = PreprocessConfig { target_fs: 200.0, crop_seconds: 2.0, normalize: false };
        let a = crop_random(&record, &cfg, 42).unwrap();
        let b = crop_random(&record, &cfg, 42).unwrap();
        assert_eq!(a, b);
        // Shared offset: channel 1 is channel 0 plus the constant shift.
        for (x, y) in a[0].iter().zip(a[1].iter()) {
            assert!((y - x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_record_rejected() {
        let record = record_from(vec![vec![0.0; 100]], 100.0);
        let cfg = PreprocessConfig { target_fs: 100.0, crop_seconds: 5.0, normalize: false };
        assert!(matches!(
            crop_random(&record, &cfg, 1),
            Err(DataError::RecordTooShort { .. })
        ));
    }

    #[test]
    fn normalization_zeroes_channel_means() {
        let mut channels = vec![
            (0..100).map(|i| (i as f64 * 0.3).sin() + 4.2).collect::<Vec<f64>>(),
            (0..100).map(|i| (i as f64 * 0.7).cos() - 9.9).collect::<Vec<f64>>(),
        ];
        mean_normalize(&mut channels);
        for c in &channels {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent_and_shift_invariant() {
        let base: Vec<f64> = (0..64).map(|i| (i as f64 * 0.2).sin()).collect();
        let mut once = vec![base.clone()];
        mean_normalize(&mut once);
        let mut twice = once.clone();
        mean_normalize(&mut twice);
        for (a, b) in once[0].iter().zip(twice[0].iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut shifted = vec![base.iter().map(|v| v + 123.0).collect::<Vec<f64>>()];
        mean_normalize(&mut shifted);
        for (a, b) in once[0].iter().zip(shifted[0].iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
