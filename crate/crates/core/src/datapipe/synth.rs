use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rng::{mix, Rng};

use super::record::{DataError, SignalRecord};

const PROJ_TAG: u64 = 0x50524f4a; // "PROJ"
const SUBJ_TAG: u64 = 0x5355424a; // "SUBJ"
const REC_TAG: u64 = 0x5245434f; // "RECO"
const NOISE_TAG: u64 = 0x4e4f4953; // "NOIS"

const N_HARMONICS: usize = 3;

/// Synthetic multi-channel generator built on a shared latent trajectory:
/// each subject gets its own pseudo-periodic latent dynamics (harmonics of a
/// subject-specific beat rate plus a sharp periodic pulse train), and each
/// channel is a fixed linear projection of that latent state plus noise.
///
/// With 12 channels the layout follows the standard lead set: leads I and
/// III are independent projections, II = I + III, aVR = -(I+II)/2,
/// aVL = (I-III)/2, aVF = (II+III)/2, and V1..V6 are six further independent
/// projections. The derived-lead identities hold exactly before noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticHeartConfig {
    pub n_subjects: usize,
    pub records_per_subject: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub noise_std: f64,
    pub fs_hz: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SyntheticHeartConfig {
    fn default() -> Self {
        SyntheticHeartConfig {
            n_subjects: 5,
            records_per_subject: 4,
            latent_dim: 6,
            channels: 12,
            noise_std: 0.01,
            fs_hz: 500.0,
            duration_s: 5.0,
            seed: 7,
        }
    }
}

impl SyntheticHeartConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_subjects == 0
            || self.records_per_subject == 0
            || self.latent_dim == 0
            || self.channels == 0
        {
            return Err(DataError::InvalidConfig(
                "subject, record, latent, and channel counts must be positive".into(),
            ));
        }
        if self.fs_hz.is_nan()
            || self.fs_hz <= 0.0
            || self.duration_s.is_nan()
            || self.duration_s <= 0.0
            || self.noise_std < 0.0
        {
            return Err(DataError::InvalidConfig(format!(
                "fs_hz {}, duration_s {}, noise_std {} out of range",
                self.fs_hz, self.duration_s, self.noise_std
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }
}

/// Channel naming convention: the standard lead names when there are 12
/// channels, generic `ch{i}` otherwise. "Channel 1" in reports maps to lead
/// I, index 0.
pub fn channel_names(channels: usize) -> Vec<String> {
    if channels == 12 {
        ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (0..channels).map(|i| format!("ch{i}")).collect()
    }
}

/// Subject-specific latent dynamics.
struct SubjectDynamics {
    beat_hz: f64,
    /// `amplitudes[m][j]`: harmonic j of latent component m.
    amplitudes: Vec<Vec<f64>>,
    phases: Vec<Vec<f64>>,
    /// Pulse-train weight per latent component.
    pulse_weight: Vec<f64>,
    /// Pulse width in seconds.
    pulse_sigma: f64,
}

impl SubjectDynamics {
    fn draw(subject: usize, cfg: &SyntheticHeartConfig) -> Self {
        let mut rng = Rng::new(mix(cfg.seed, &[SUBJ_TAG, subject as u64]));
        // Beat rates are spaced wider than their jitter, so every subject's
        // dynamics are distinct by construction.
        let beat_hz = 0.9 + 0.17 * subject as f64 + rng.uniform_in(0.0, 0.05);
        let amplitudes = (0..cfg.latent_dim)
            .map(|_| {
                (0..N_HARMONICS)
                    .map(|j| rng.uniform_in(0.2, 1.0) / (j + 1) as f64)
                    .collect()
            })
            .collect();
        let phases = (0..cfg.latent_dim)
            .map(|_| (0..N_HARMONICS).map(|_| rng.uniform_in(0.0, std::f64::consts::TAU)).collect())
            .collect();
        let pulse_weight = (0..cfg.latent_dim)
            .map(|_| {
                let magnitude = rng.uniform_in(0.6, 1.6);
                if rng.uniform() < 0.5 {
                    -magnitude
                } else {
                    magnitude
                }
            })
            .collect();
        SubjectDynamics {
            beat_hz,
            amplitudes,
            phases,
            pulse_weight,
            pulse_sigma: 0.06 / beat_hz,
        }
    }

    /// Latent state at time `t` (seconds).
    fn latent_at(&self, t: f64, out: &mut [f64]) {
        let period = 1.0 / self.beat_hz;
        let r = t.rem_euclid(period);
        let dist = r.min(period - r);
        let pulse = (-dist * dist / (2.0 * self.pulse_sigma * self.pulse_sigma)).exp();
        for (m, slot) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            for j in 0..N_HARMONICS {
                let w = std::f64::consts::TAU * (j + 1) as f64 * self.beat_hz;
                v += self.amplitudes[m][j] * (w * t + self.phases[m][j]).sin();
            }
            *slot = v + self.pulse_weight[m] * pulse;
        }
    }
}

/// Indices of channels generated from their own projection. With 12
/// channels, II/aVR/aVL/aVF are derived instead.
fn independent_slots(channels: usize) -> Vec<usize> {
    if channels == 12 {
        let mut slots = vec![0, 2];
        slots.extend(6..12);
        slots
    } else {
        (0..channels).collect()
    }
}

/// Generates the full record set for a configuration. Deterministic: the
/// same config yields identical records.
pub fn synth_generate(cfg: &SyntheticHeartConfig) -> Result<Vec<SignalRecord>, DataError> {
    cfg.validate()?;
    let n = cfg.n_samples();
    let k = cfg.latent_dim;

    let slots = independent_slots(cfg.channels);
    let projections: Vec<Vec<f64>> = slots
        .iter()
        .map(|&slot| {
            let mut rng = Rng::new(mix(cfg.seed, &[PROJ_TAG, slot as u64]));
            (0..k).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.n_subjects * cfg.records_per_subject);
    for subject in 0..cfg.n_subjects {
        let dynamics = SubjectDynamics::draw(subject, cfg);
        for rec in 0..cfg.records_per_subject {
            let mut rec_rng = Rng::new(mix(cfg.seed, &[REC_TAG, subject as u64, rec as u64]));
            // Records of one subject share dynamics but start at different
            // phases (up to a tenth of a beat period).
            let t0 = rec_rng.uniform_in(0.0, 0.1 / dynamics.beat_hz);

            let mut latent = vec![0.0; k];
            let mut channels = vec![vec![0.0; n]; cfg.channels];
            #[allow(clippy::needless_range_loop)]
            for i in 0..n {
                let t = i as f64 / cfg.fs_hz + t0;
                dynamics.latent_at(t, &mut latent);
                for (p, &slot) in projections.iter().zip(slots.iter()) {
                    channels[slot][i] = p.iter().zip(latent.iter()).map(|(a, b)| a * b).sum();
                }
                if cfg.channels == 12 {
                    let lead_i = channels[0][i];
                    let lead_iii = channels[2][i];
                    let lead_ii = lead_i + lead_iii;
                    channels[1][i] = lead_ii;
                    channels[3][i] = -(lead_i + lead_ii) / 2.0;
                    channels[4][i] = (lead_i - lead_iii) / 2.0;
                    channels[5][i] = (lead_ii + lead_iii) / 2.0;
                }
            }
            if cfg.noise_std > 0.0 {
                let mut noise = Rng::new(mix(cfg.seed, &[NOISE_TAG, subject as u64, rec as u64]));
                for channel in channels.iter_mut() {
                    for v in channel.iter_mut() {
                        *v += cfg.noise_std * noise.normal();
                    }
                }
            }
            records.push(SignalRecord {
                id: format!("s{subject:02}r{rec:02}"),
                subject_id: format!("subj{subject:02}"),
                fs_hz: cfg.fs_hz,
                channels,
                labels: BTreeMap::from([("mi".to_string(), (subject % 2).to_string())]),
            });
        }
    }
    Ok(records)
}
