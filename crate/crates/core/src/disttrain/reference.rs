use std::path::Path;

use crate::datapipe::{batch_iter, SignalRecord};
use crate::mae1d::Mae1dModel;
use crate::numcore::{cosine_lr, AdamWState};
use crate::objectives::{alignment_loss_and_grads, assign_triplets};

use super::checkpoint::{init_or_resume, save_checkpoint};
use super::config::TrainConfig;
use super::metrics::{write_metrics, MetricsRow};
use super::seeds::{epoch_seed, triplet_seed};
use super::step::{channel_complete, channel_forward};
use super::TrainError;

/// Result of a training run: the per-channel models, optimizer states, and
/// per-epoch metrics.
pub struct TrainOutcome {
    pub models: Vec<Mae1dModel>,
    pub optimizers: Vec<AdamWState>,
    pub metrics: Vec<MetricsRow>,
}

/// Single-process trainer over all channel models. Numerically identical to
/// the distributed mode: the same step code runs per channel, and the
/// alignment gradient is computed by the same coordinator-side function,
/// just without a wire in between.
pub fn train_reference(cfg: &TrainConfig, records: &[SignalRecord]) -> Result<TrainOutcome, TrainError> {
    train_reference_until(cfg, records, cfg.epochs)
}

/// [`train_reference`] stopped after `stop_after` epochs, as if the run were
/// interrupted there. The per-epoch checkpoint lets a later call with the
/// same config resume and finish the remaining epochs.
pub fn train_reference_until(
    cfg: &TrainConfig,
    records: &[SignalRecord],
    stop_after: u32,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    for record in records {
        if record.n_channels() < cfg.channels {
            return Err(TrainError::Config(format!(
                "record {} has {} channels, config needs {}",
                record.id,
                record.n_channels(),
                cfg.channels
            )));
        }
    }

    let (mut models, mut opts, epoch_start, mut global_step) = init_or_resume(cfg)?;
    let sched = cfg.lr_schedule();
    let mut metrics: Vec<MetricsRow> = Vec::new();

    for epoch in epoch_start..stop_after.min(cfg.epochs) {
        let (w_align, w_rec) = cfg.loss_weights(epoch);
        let lr = cosine_lr(epoch, &sched)?;
        let batches = batch_iter(records, cfg.batch_size, &cfg.preprocess, epoch_seed(cfg.master_seed, epoch))?;

        let mut epoch_rec = 0.0;
        let mut epoch_align = 0.0;
        for (step_in_epoch, batch) in batches.iter().enumerate() {
            let mut steps = Vec::with_capacity(cfg.channels);
            for (channel, model) in models.iter().enumerate() {
                steps.push(channel_forward(cfg, model, batch, channel, epoch, step_in_epoch as u64, w_rec)?);
            }
            let step_rec =
                steps.iter().map(|s| s.rec_loss).sum::<f64>() / cfg.channels as f64;
            epoch_rec += step_rec;

            let align_grads = if cfg.align {
                let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
                let assignment = assign_triplets(
                    &ids,
                    cfg.channels,
                    cfg.triplet_margin,
                    triplet_seed(cfg.master_seed, epoch, step_in_epoch as u64),
                )?;
                let embeddings: Vec<_> = steps.iter().map(|s| s.embeddings.clone()).collect();
                let result = alignment_loss_and_grads(&embeddings, &assignment, w_align)?;
                epoch_align += result.loss;
                Some(result.grads)
            } else {
                None
            };

            for (channel, step) in steps.into_iter().enumerate() {
                channel_complete(
                    &mut models[channel],
                    &mut opts[channel],
                    step,
                    align_grads.as_ref().map(|g| &g[channel]),
                    lr,
                )?;
            }
            global_step += 1;
        }

        let n_steps = batches.len() as f64;
        let rec_mean = epoch_rec / n_steps;
        let align_mean = cfg.align.then_some(epoch_align / n_steps);
        metrics.push(MetricsRow {
            epoch,
            step: global_step,
            w_align,
            w_rec,
            rec_loss: Some(rec_mean),
            align_loss: align_mean,
            total_loss: Some(w_rec * rec_mean + align_mean.map_or(0.0, |a| w_align * a)),
            lr,
        });

        if !cfg.out_dir.is_empty() {
            let dir = Path::new(&cfg.out_dir);
            save_checkpoint(dir, cfg, &models, &opts, epoch + 1, global_step)?;
            write_metrics(&dir.join("metrics.csv"), &metrics)?;
        }
    }

    Ok(TrainOutcome { models, optimizers: opts, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{synth_generate, SyntheticHeartConfig};

    fn records(channels: usize) -> Vec<SignalRecord> {
        synth_generate(&SyntheticHeartConfig {
            n_subjects: 4,
            records_per_subject: 2,
            channels,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn short_run_produces_one_metrics_row_per_epoch() {
        let cfg = TrainConfig::tiny(3, 2, 4, 5);
        let outcome = train_reference(&cfg, &records(3)).unwrap();
        assert_eq!(outcome.metrics.len(), 2);
        assert_eq!(outcome.models.len(), 3);
        for row in &outcome.metrics {
            assert!(row.rec_loss.unwrap().is_finite());
            assert!(row.align_loss.unwrap().is_finite());
            assert!(row.total_loss.unwrap().is_finite());
            assert!(row.lr.is_finite());
        }
        // Two batches of 4 per epoch over 8 records.
        assert_eq!(outcome.metrics[0].step, 2);
        assert_eq!(outcome.metrics[1].step, 4);
    }

    #[test]
    fn epoch_zero_matches_align_off_run_exactly() {
        // At epoch 0 the curriculum weight of the alignment term is zero, so
        // the first epoch's updates are identical with alignment disabled.
        let recs = records(2);
        let mut cfg_on = TrainConfig::tiny(2, 1, 4, 33);
        let mut cfg_off = cfg_on.clone();
        cfg_off.align = false;
        cfg_on.epochs = 1;
        cfg_off.epochs = 1;
        let on = train_reference(&cfg_on, &recs).unwrap();
        let off = train_reference(&cfg_off, &recs).unwrap();
        for (a, b) in on.models.iter().zip(off.models.iter()) {
            let mut va = Vec::new();
            let mut vb = Vec::new();
            a.params.for_each_named(&mut |_, t| va.extend_from_slice(t.data()));
            b.params.for_each_named(&mut |_, t| vb.extend_from_slice(t.data()));
            assert_eq!(va, vb);
        }
    }

    #[test]
    fn aligned_and_baseline_diverge_after_epoch_zero() {
        let recs = records(2);
        let mut cfg_on = TrainConfig::tiny(2, 2, 4, 33);
        let mut cfg_off = cfg_on.clone();
        cfg_off.align = false;
        // keep epochs = 2 on both so curricula share shape
        cfg_on.epochs = 2;
        cfg_off.epochs = 2;
        let on = train_reference(&cfg_on, &recs).unwrap();
        let off = train_reference(&cfg_off, &recs).unwrap();
        let mut va = Vec::new();
        let mut vb = Vec::new();
        on.models[0].params.for_each_named(&mut |_, t| va.extend_from_slice(t.data()));
        off.models[0].params.for_each_named(&mut |_, t| vb.extend_from_slice(t.data()));
        assert_ne!(va, vb, "epoch 1 has nonzero alignment weight");
    }

    #[test]
    fn run_is_deterministic() {
        let recs = records(2);
        let cfg = TrainConfig::tiny(2, 2, 4, 12);
        let a = train_reference(&cfg, &recs).unwrap();
        let b = train_reference(&cfg, &recs).unwrap();
        for (x, y) in a.models.iter().zip(b.models.iter()) {
            let mut vx = Vec::new();
            let mut vy = Vec::new();
            x.params.for_each_named(&mut |_, t| vx.extend_from_slice(t.data()));
            y.params.for_each_named(&mut |_, t| vy.extend_from_slice(t.data()));
            assert_eq!(vx, vy);
        }
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (ra, rb) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(ra, rb);
        }
    }
}
