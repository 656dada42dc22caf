use std::path::{Path, PathBuf};

use modred::datapipe::{channel_names, load_records, preprocess, synth_generate, write_records, SignalRecord};
use modred::disttrain::{
    model_path, run_coordinator, run_distributed_in_memory, run_worker, train_reference,
};
use modred::evalkit::{
    cv_csv, export_embeddings, knn_cv, logreg_cv, matrix_csv, record_embeddings,
    recon_mae_report, similarity_report, CvOutcome, JsonSummary,
};
use modred::mae1d::{cross_reconstruct, random_mask, read_model, Mae1dModel};
use modred::rng::mix;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{log_info, EvalKind, Role};

const RECONSTRUCT_CROP_TAG: u64 = 0x52435243;
const RECONSTRUCT_MASK_TAG: u64 = 0x5243534b;

/// `synth`: generate the configured synthetic record set and persist it in
/// the record format under `<out>/data/`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let records = synth_generate(&cfg.synth)?;
    let data_dir = cfg.out_path().join("data");
    let manifest = write_records(&records, &data_dir)?;
    log_info(&format!(
        "synth: wrote {} records ({} channels) to {}",
        records.len(),
        cfg.synth.channels,
        manifest.display()
    ));
    println!("wrote {} records to {}", records.len(), manifest.display());
    Ok(())
}

/// `pretrain`: single-process training over all channels.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let records = load_records(cfg.manifest_path())?;
    log_info(&format!(
        "pretrain: {} records, {} channels, {} epochs, align={}",
        records.len(),
        cfg.train.channels,
        cfg.train.epochs,
        cfg.train.align
    ));
    let outcome = train_reference(&cfg.train, &records)?;
    let last = outcome.metrics.last().expect("at least one epoch");
    println!(
        "trained {} channels for {} epochs; final reconstruction loss {}",
        cfg.train.channels,
        cfg.train.epochs,
        last.rec_loss.unwrap_or(f64::NAN)
    );
    println!("checkpoints and metrics in {}", cfg.checkpoints_path().display());
    Ok(())
}

/// `pretrain-dist`: one process per protocol role.
pub fn cmd_pretrain_dist(
    cfg: &RunConfig,
    role: Role,
    channel: Option<usize>,
    endpoint: &str,
) -> Result<(), CliError> {
    match role {
        Role::Coordinator => {
            cfg.write_resolved()?;
            let stats = run_coordinator(&cfg.train, endpoint)?;
            println!(
                "coordinator done: {} steps, {} embeddings in, {} gradients out",
                stats.steps, stats.embeddings_received, stats.grads_sent
            );
        }
        Role::Worker => {
            let channel = channel
                .ok_or_else(|| CliError::usage("worker role requires --channel".into()))?;
            let outcome = run_worker(&cfg.train, channel, endpoint)?;
            let last_rec = outcome
                .metrics
                .last()
                .and_then(|r| r.rec_loss)
                .unwrap_or(f64::NAN);
            println!("worker {channel} done: final reconstruction loss {last_rec}");
        }
        Role::Memory => {
            // Whole-protocol run in one process over the in-memory transport;
            // useful for smoke tests without port management.
            cfg.write_resolved()?;
            let records = load_records(cfg.manifest_path())?;
            let (outcomes, stats) = run_distributed_in_memory(&cfg.train, &records)?;
            println!(
                "in-memory distributed run done: {} workers, {} steps",
                outcomes.len(),
                stats.steps
            );
        }
    }
    Ok(())
}

fn load_models(checkpoints: &Path, channels: usize) -> Result<Vec<Mae1dModel>, CliError> {
    (0..channels)
        .map(|c| read_model(&model_path(checkpoints, c)).map_err(CliError::from))
        .collect()
}

/// `embed`: unmasked class-token embeddings for every (record, channel).
pub fn cmd_embed(cfg: &RunConfig, checkpoints: &Path, manifest: &Path) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let models = load_models(checkpoints, cfg.train.channels)?;
    let records = load_records(manifest)?;
    let out_csv = cfg.out_path().join("embeddings.csv");
    let rows = export_embeddings(&models, &records, &cfg.train.preprocess, cfg.seed, &out_csv)?;
    println!("wrote {rows} embedding rows to {}", out_csv.display());
    Ok(())
}

/// `reconstruct`: original and reconstructed traces plus the masked-window
/// flag per sample, from the native channel or from one fixed source
/// channel.
pub fn cmd_reconstruct(
    cfg: &RunConfig,
    checkpoints: &Path,
    manifest: &Path,
    source: &str,
) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let models = load_models(checkpoints, cfg.train.channels)?;
    let records = load_records(manifest)?;
    let source_channel: Option<usize> = match source {
        "native" => None,
        s => Some(s.parse().map_err(|_| {
            CliError::usage(format!("--source must be 'native' or a channel index, got {s:?}"))
        })?),
    };
    if let Some(s) = source_channel {
        if s >= models.len() {
            return Err(CliError::usage(format!(
                "source channel {s} out of range for {} channels",
                models.len()
            )));
        }
    }

    let model_cfg = &models[0].config;
    let num_patches = model_cfg.num_patches();
    let mut csv = String::from("record_id,channel,sample_idx,original,reconstructed,masked\n");
    for (record_idx, record) in records.iter().enumerate() {
        let window = preprocess(
            record,
            &cfg.train.preprocess,
            mix(cfg.seed, &[RECONSTRUCT_CROP_TAG, record_idx as u64]),
        )?;
        for target in 0..models.len() {
            let encoder_channel = source_channel.unwrap_or(target);
            let plan = random_mask(
                num_patches,
                model_cfg.mask_ratio,
                mix(cfg.seed, &[RECONSTRUCT_MASK_TAG, record_idx as u64, encoder_channel as u64]),
            )?;
            let reconstructed = cross_reconstruct(
                &models[encoder_channel],
                &models[target],
                &window[encoder_channel],
                Some(plan.clone()),
            )?;
            for (sample_idx, (orig, rec)) in
                window[target].iter().zip(reconstructed.iter()).enumerate()
            {
                let masked = plan.is_masked(sample_idx / model_cfg.patch_len) as u8;
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    record.id, target, sample_idx, orig, rec, masked
                ));
            }
        }
    }
    let out_csv = cfg.out_path().join(format!(
        "reconstruct_{}.csv",
        source_channel.map_or("native".to_string(), |s| format!("ch{s}"))
    ));
    std::fs::write(&out_csv, csv.as_bytes())
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", out_csv.display())))?;
    println!("wrote reconstruction traces to {}", out_csv.display());
    Ok(())
}

/// Embeddings of one channel plus the records they came from.
fn single_channel_embeddings(
    cfg: &RunConfig,
    models: &[Mae1dModel],
    records: &[SignalRecord],
    channel: usize,
) -> Result<Vec<Vec<f64>>, CliError> {
    if channel >= models.len() {
        return Err(CliError::usage(format!(
            "channel {channel} out of range for {} channels",
            models.len()
        )));
    }
    let rows = record_embeddings(models, records, &cfg.train.preprocess, cfg.seed)?;
    Ok(rows
        .into_iter()
        .filter(|(_, _, ch, _)| *ch == channel)
        .map(|(_, _, _, e)| e)
        .collect())
}

fn write_report(
    cfg: &RunConfig,
    stem: &str,
    csv: &str,
    summary: &JsonSummary<'_>,
) -> Result<(PathBuf, PathBuf), CliError> {
    let csv_path = cfg.out_path().join(format!("{stem}.csv"));
    let json_path = cfg.out_path().join(format!("{stem}_summary.json"));
    std::fs::write(&csv_path, csv.as_bytes())
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", csv_path.display())))?;
    std::fs::write(&json_path, summary.to_json().as_bytes())
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", json_path.display())))?;
    Ok((csv_path, json_path))
}

fn print_cv(kind: &str, metric: &str, outcome: &CvOutcome) {
    println!("{kind}: mean {metric} {}", outcome.mean);
    for (fold, v) in outcome.per_fold.iter().enumerate() {
        println!("  fold {fold}: {v}");
    }
}

/// `eval`: dispatch to the four report generators.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoints: &Path,
    manifest: &Path,
    kind: EvalKind,
    repeats: usize,
    folds: Option<usize>,
    k: usize,
    channel: usize,
) -> Result<(), CliError> {
    cfg.write_resolved()?;
    let models = load_models(checkpoints, cfg.train.channels)?;
    let records = load_records(manifest)?;
    let hash = cfg.hash();
    let names = channel_names(cfg.train.channels);

    match kind {
        EvalKind::Similarity => {
            let report =
                similarity_report(&models, &records, &cfg.train.preprocess, repeats, cfg.seed)?;
            let upper: Vec<f64> = (0..report.channels)
                .flat_map(|i| ((i + 1)..report.channels).map(move |j| (i, j)))
                .map(|(i, j)| report.at(i, j))
                .collect();
            let outcome = CvOutcome::from_folds(upper, cfg.seed);
            let summary = JsonSummary {
                metric: "mean_embedding_cosine_similarity",
                mean: outcome.mean,
                std: outcome.std,
                seed: cfg.seed,
                config_hash: &hash,
            };
            let (csv_path, _) = write_report(cfg, "similarity", &matrix_csv(&names, &report.matrix), &summary)?;
            println!(
                "similarity: mean embedding cosine {} over {} pairs; matrix in {}",
                outcome.mean,
                outcome.per_fold.len(),
                csv_path.display()
            );
        }
        EvalKind::ReconMae => {
            let report = recon_mae_report(
                &models,
                &records,
                &cfg.train.preprocess,
                cfg.train.model.mask_ratio,
                cfg.seed,
            )?;
            let outcome = CvOutcome::from_folds(report.matrix.clone(), cfg.seed);
            let summary = JsonSummary {
                metric: "mean_reconstruction_mae",
                mean: outcome.mean,
                std: outcome.std,
                seed: cfg.seed,
                config_hash: &hash,
            };
            let (csv_path, _) = write_report(cfg, "recon_mae", &matrix_csv(&names, &report.matrix), &summary)?;
            println!(
                "recon-mae: diagonal mean {}, off-diagonal mean {}; matrix in {}",
                report.mean_diagonal(),
                report.mean_off_diagonal(),
                csv_path.display()
            );
        }
        EvalKind::MiClf => {
            let embeddings = single_channel_embeddings(cfg, &models, &records, channel)?;
            let labels: Vec<bool> = records
                .iter()
                .map(|r| {
                    r.labels.get("mi").map(|v| v == "1").ok_or_else(|| {
                        CliError::data(format!("record {} has no 'mi' label", r.id))
                    })
                })
                .collect::<Result<_, _>>()?;
            let outcome = logreg_cv(&embeddings, &labels, folds.unwrap_or(5), cfg.seed)?;
            let summary = JsonSummary {
                metric: "f1",
                mean: outcome.mean,
                std: outcome.std,
                seed: cfg.seed,
                config_hash: &hash,
            };
            write_report(cfg, "mi_clf", &cv_csv(&outcome, "f1"), &summary)?;
            print_cv("mi-clf", "F1", &outcome);
        }
        EvalKind::Knn => {
            let embeddings = single_channel_embeddings(cfg, &models, &records, channel)?;
            let subjects: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
            let outcome = knn_cv(&embeddings, &subjects, k, folds.unwrap_or(10), cfg.seed)?;
            let summary = JsonSummary {
                metric: "accuracy",
                mean: outcome.mean,
                std: outcome.std,
                seed: cfg.seed,
                config_hash: &hash,
            };
            write_report(cfg, "knn", &cv_csv(&outcome, "accuracy"), &summary)?;
            print_cv("knn", "accuracy", &outcome);
        }
    }
    Ok(())
}
