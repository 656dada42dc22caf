use std::path::Path;

use crate::datapipe::{preprocess, PreprocessConfig, SignalRecord};
use crate::mae1d::Mae1dModel;
use crate::rng::mix;

use super::EvalError;

const EXPORT_CROP_TAG: u64 = 0x45585043; // "EXPC"

/// One exported row: record id, subject id, channel, embedding.
pub type EmbeddingRow = (String, String, usize, Vec<f64>);

/// Computes unmasked class-token embeddings for every `(record, channel)`
/// pair. Row order is records outer, channels inner.
pub fn record_embeddings(
    models: &[Mae1dModel],
    records: &[SignalRecord],
    preprocess_cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Vec<EmbeddingRow>, EvalError> {
    let mut rows = Vec::with_capacity(records.len() * models.len());
    for (record_idx, record) in records.iter().enumerate() {
        let window = preprocess(record, preprocess_cfg, mix(seed, &[EXPORT_CROP_TAG, record_idx as u64]))?;
        for (channel, model) in models.iter().enumerate() {
            let embedding = model.embed_cls(&window[channel], None)?;
            rows.push((record.id.clone(), record.subject_id.clone(), channel, embedding));
        }
    }
    Ok(rows)
}

/// Writes one CSV row per `(record, channel)`: id, subject id, channel, then
/// the embedding components. Output is byte-deterministic for a fixed seed.
pub fn export_embeddings(
    models: &[Mae1dModel],
    records: &[SignalRecord],
    preprocess_cfg: &PreprocessConfig,
    seed: u64,
    out_path: &Path,
) -> Result<usize, EvalError> {
    let rows = record_embeddings(models, records, preprocess_cfg, seed)?;
    let dim = rows.first().map_or(0, |(_, _, _, e)| e.len());
    let mut text = String::from("id,subject_id,channel");
    for j in 0..dim {
        text.push_str(&format!(",e{j}"));
    }
    text.push('\n');
    for (id, subject, channel, embedding) in &rows {
        text.push_str(&format!("{id},{subject},{channel}"));
        for v in embedding {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(out_path, text.as_bytes())
        .map_err(|source| EvalError::Io { path: out_path.to_path_buf(), source })?;
    Ok(rows.len())
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
            channels: 2,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap();
        let models: Vec<Mae1dModel> =
            (0..2).map(|c| Mae1dModel::init(&ModelConfig::tiny(), 40 + c as u64).unwrap()).collect();
        let cfg = PreprocessConfig { target_fs: 50.0, crop_seconds: 2.0, normalize: true };
        (models, records, cfg)
    }

    #[test]
    fn row_count_is_records_times_channels() {
        let dir = tempfile::tempdir().unwrap();
        let (models, records, cfg) = fixture();
        let path = dir.path().join("emb.csv");
        let rows = export_embeddings(&models, &records, &cfg, 3, &path).unwrap();
        assert_eq!(rows, 4 * 2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(text.starts_with("id,subject_id,channel,e0,"));
    }

    #[test]
    fn re_export_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (models, records, cfg) = fixture();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        export_embeddings(&models, &records, &cfg, 7, &p1).unwrap();
        export_embeddings(&models, &records, &cfg, 7, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn spot_check_row_matches_direct_encode() {
        let (models, records, cfg) = fixture();
        let rows = record_embeddings(&models, &records, &cfg, 11).unwrap();
        let (id, _, channel, embedding) = &rows[3];
        let record_idx = records.iter().position(|r| &r.id == id).unwrap();
        let window = preprocess(
            &records[record_idx],
            &cfg,
            mix(11, &[EXPORT_CROP_TAG, record_idx as u64]),
        )
        .unwrap();
        let direct = models[*channel].embed_cls(&window[*channel], None).unwrap();
        assert_eq!(embedding, &direct);
    }
}
