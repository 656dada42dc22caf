use std::path::Path;

use crate::datapipe::{batch_iter, load_records, SignalRecord};
use crate::mae1d::{write_model, Mae1dModel};
use crate::numcore::{cosine_lr, AdamWState, Tensor};

use super::checkpoint::{load_channel_checkpoint, optim_path, write_optimizer_file};
use super::config::TrainConfig;
use super::metrics::{write_metrics, MetricsRow};
use super::seeds::init_seed;
use super::step::{channel_complete, channel_forward, optimizer_for};
use super::transport::{TcpTransport, Transport};
use super::wire::{ProtocolError, WireMessage};
use super::TrainError;

/// Result of one worker's run.
pub struct WorkerOutcome {
    pub channel: usize,
    pub model: Mae1dModel,
    pub optimizer: AdamWState,
    pub metrics: Vec<MetricsRow>,
}

/// Runs one per-channel worker over a connected transport.
///
/// The worker follows the coordinator's epoch broadcasts. Every step it
/// forwards its own channel (masked), ships the class-token embeddings,
/// blocks for the coordinator's alignment gradient, injects that gradient at
/// the embedding node while completing its own reconstruction backward pass,
/// and applies a single AdamW update to the summed gradients. With alignment
/// off it never touches the embedding exchange.
pub fn run_worker_on<T: Transport>(
    cfg: &TrainConfig,
    channel: usize,
    mut conn: T,
    records: &[SignalRecord],
) -> Result<WorkerOutcome, TrainError> {
    cfg.validate()?;
    if channel >= cfg.channels {
        return Err(TrainError::Config(format!(
            "channel {channel} out of range for {} channels",
            cfg.channels
        )));
    }
    conn.send(&WireMessage::Hello { channel_id: channel as u8 })?;

    let (mut model, mut opt, mut global_step) = match resume_channel(cfg, channel)? {
        Some((model, opt, step)) => (model, opt, step),
        None => {
            let model = Mae1dModel::init(&cfg.model, init_seed(cfg.master_seed, channel))?;
            let opt = optimizer_for(cfg, &model);
            (model, opt, 0)
        }
    };
    let sched = cfg.lr_schedule();
    let mut metrics: Vec<MetricsRow> = Vec::new();

    loop {
        match conn.recv()? {
            WireMessage::Epoch { epoch, epoch_seed, w_align, w_rec } => {
                let lr = cosine_lr(epoch, &sched)?;
                let batches = batch_iter(records, cfg.batch_size, &cfg.preprocess, epoch_seed)?;
                let mut epoch_rec = 0.0;
                for (step_in_epoch, batch) in batches.iter().enumerate() {
                    let step =
                        channel_forward(cfg, &model, batch, channel, epoch, step_in_epoch as u64, w_rec)?;
                    epoch_rec += step.rec_loss;

                    let align_grad = if cfg.align {
                        conn.send(&WireMessage::Emb {
                            step: global_step,
                            rows: batch.len() as u32,
                            dim: cfg.model.enc_dim as u32,
                            data: step.embeddings.data().to_vec(),
                        })?;
                        match conn.recv()? {
                            WireMessage::Grad { step: s, rows, dim, data } => {
                                if s != global_step {
                                    return Err(ProtocolError::StepMismatch {
                                        expected: global_step,
                                        got: s,
                                    }
                                    .into());
                                }
                                if rows as usize != batch.len() || dim != cfg.model.enc_dim as u32 {
                                    return Err(ProtocolError::GeometryMismatch {
                                        expected_rows: batch.len() as u32,
                                        expected_dim: cfg.model.enc_dim as u32,
                                        rows,
                                        dim,
                                    }
                                    .into());
                                }
                                Some(Tensor::new(vec![rows as usize, dim as usize], data)?)
                            }
                            WireMessage::Err { reason } => {
                                return Err(ProtocolError::Remote(reason).into())
                            }
                            other => {
                                return Err(ProtocolError::UnexpectedMessage {
                                    expected: "GRAD",
                                    got: other.name(),
                                }
                                .into())
                            }
                        }
                    } else {
                        None
                    };

                    channel_complete(&mut model, &mut opt, step, align_grad.as_ref(), lr)?;
                    conn.send(&WireMessage::Done { step: global_step })?;
                    global_step += 1;
                }
                metrics.push(MetricsRow {
                    epoch,
                    step: global_step,
                    w_align,
                    w_rec,
                    rec_loss: Some(epoch_rec / batches.len() as f64),
                    align_loss: None,
                    total_loss: (!cfg.align).then_some(w_rec * epoch_rec / batches.len() as f64),
                    lr,
                });
            }
            WireMessage::Shutdown => {
                if !cfg.out_dir.is_empty() {
                    let dir = Path::new(&cfg.out_dir);
                    std::fs::create_dir_all(dir)
                        .map_err(|e| TrainError::Config(format!("cannot create {}: {e}", dir.display())))?;
                    write_model(&super::checkpoint::model_path(dir, channel), &model)?;
                    write_optimizer_file(&optim_path(dir, channel), &model, &opt)?;
                    write_metrics(&dir.join(format!("metrics_c{channel:02}.csv")), &metrics)?;
                }
                return Ok(WorkerOutcome { channel, model, optimizer: opt, metrics });
            }
            WireMessage::Err { reason } => return Err(ProtocolError::Remote(reason).into()),
            other => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: "EPOCH or SHUTDOWN",
                    got: other.name(),
                }
                .into())
            }
        }
    }
}

fn resume_channel(
    cfg: &TrainConfig,
    channel: usize,
) -> Result<Option<(Mae1dModel, AdamWState, u64)>, TrainError> {
    if cfg.out_dir.is_empty() {
        return Ok(None);
    }
    Ok(load_channel_checkpoint(Path::new(&cfg.out_dir), cfg, channel)?
        .map(|(model, opt, state)| (model, opt, state.global_step)))
}

/// TCP front end: connects to the coordinator and runs the worker. Records
/// come from the config's manifest.
pub fn run_worker(cfg: &TrainConfig, channel: usize, endpoint: &str) -> Result<WorkerOutcome, TrainError> {
    let records = load_records(Path::new(&cfg.manifest))?;
    let conn = TcpTransport::connect(endpoint)?;
    run_worker_on(cfg, channel, conn, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{synth_generate, SyntheticHeartConfig};
    use crate::disttrain::transport::{mem_pair, Transport};
    use crate::disttrain::wire::encode_frame;

    #[test]
    fn corrupted_frame_makes_worker_abort_cleanly() {
        let cfg = TrainConfig::tiny(2, 1, 4, 3);
        let records = synth_generate(&SyntheticHeartConfig {
            n_subjects: 4,
            records_per_subject: 1,
            latent_dim: 4,
            channels: 2,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            seed: 31,
        })
        .unwrap();
        let (mut coordinator, worker_conn) = mem_pair();
        let handle = std::thread::spawn({
            let cfg = cfg.clone();
            let records = records.clone();
            move || run_worker_on(&cfg, 0, worker_conn, &records)
        });
        // Swallow the HELLO, then ship a frame with broken magic.
        assert!(matches!(coordinator.recv(), Ok(WireMessage::Hello { channel_id: 0 })));
        let mut bad = encode_frame(&WireMessage::Shutdown);
        bad[2] = b'?';
        coordinator.send_raw(bad).unwrap();
        let result = handle.join().expect("worker must not panic");
        assert!(
            matches!(result, Err(TrainError::Protocol(ProtocolError::BadMagic))),
            "worker reports the protocol error: {:?}", result.err()
        );
    }
}
