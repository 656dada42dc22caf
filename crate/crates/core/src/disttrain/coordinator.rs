use std::net::TcpListener;
use std::path::Path;

use crate::datapipe::{batch_iter, load_records, SignalRecord};
use crate::numcore::{cosine_lr, Tensor};
use crate::objectives::{alignment_loss_and_grads, assign_triplets};

use super::checkpoint::{load_checkpoint, TrainState, STATE_FILE};
use super::config::TrainConfig;
use super::metrics::{write_metrics, MetricsRow};
use super::seeds::{epoch_seed, triplet_seed};
use super::transport::{TcpTransport, Transport};
use super::wire::{ProtocolError, WireMessage};
use super::TrainError;

/// Protocol accounting for a coordinator run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoordinatorStats {
    pub embeddings_received: u64,
    pub grads_sent: u64,
    pub steps: u64,
}

fn abort_all<T: Transport>(workers: &mut [T], reason: &str) {
    for w in workers.iter_mut() {
        let _ = w.send(&WireMessage::Err { reason: reason.to_string() });
    }
}

/// Runs the coordinator over already-connected transports (one per worker,
/// in any order; the HELLO handshake sorts them by channel).
///
/// Per step the coordinator barrier-collects one embedding matrix per
/// channel, draws the seeded triplet assignment, computes the alignment loss
/// and its gradient per channel, and returns those gradients. No gradient
/// leaves before every channel's embeddings have arrived.
pub fn run_coordinator_on<T: Transport>(
    cfg: &TrainConfig,
    conns: Vec<T>,
    records: &[SignalRecord],
) -> Result<CoordinatorStats, TrainError> {
    cfg.validate()?;
    if conns.len() != cfg.channels {
        return Err(TrainError::Config(format!(
            "{} connections for {} channels",
            conns.len(),
            cfg.channels
        )));
    }

    // Handshake: exactly one HELLO per distinct channel id.
    let mut slots: Vec<Option<T>> = (0..cfg.channels).map(|_| None).collect();
    for mut conn in conns {
        match conn.recv()? {
            WireMessage::Hello { channel_id } => {
                let channel = channel_id as usize;
                if channel >= cfg.channels {
                    let err = ProtocolError::UnexpectedMessage {
                        expected: "HELLO with a known channel id",
                        got: "HELLO",
                    };
                    let _ = conn.send(&WireMessage::Err { reason: err.to_string() });
                    return Err(err.into());
                }
                if slots[channel].is_some() {
                    let err = ProtocolError::DuplicateChannel(channel_id);
                    let _ = conn.send(&WireMessage::Err { reason: err.to_string() });
                    return Err(err.into());
                }
                slots[channel] = Some(conn);
            }
            other => {
                let err = ProtocolError::UnexpectedMessage { expected: "HELLO", got: other.name() };
                let _ = conn.send(&WireMessage::Err { reason: err.to_string() });
                return Err(err.into());
            }
        }
    }
    let mut workers: Vec<T> = Vec::with_capacity(cfg.channels);
    for slot in slots {
        workers.push(slot.expect("every channel said hello"));
    }

    // Resume point comes from the shared checkpoint directory, if any.
    let (epoch_start, mut global_step) = match resume_state(cfg)? {
        Some(state) => (state.epoch_next, state.global_step),
        None => (0, 0),
    };

    let sched = cfg.lr_schedule();
    let mut stats = CoordinatorStats::default();
    let mut metrics: Vec<MetricsRow> = Vec::new();

    for epoch in epoch_start..cfg.epochs {
        let (w_align, w_rec) = cfg.loss_weights(epoch);
        let lr = cosine_lr(epoch, &sched)?;
        let eseed = epoch_seed(cfg.master_seed, epoch);
        for worker in workers.iter_mut() {
            worker.send(&WireMessage::Epoch { epoch, epoch_seed: eseed, w_align, w_rec })?;
        }
        let batches = batch_iter(records, cfg.batch_size, &cfg.preprocess, eseed)?;

        let mut epoch_align = 0.0;
        for (step_in_epoch, batch) in batches.iter().enumerate() {
            if cfg.align {
                let mut embeddings = Vec::with_capacity(cfg.channels);
                for worker in workers.iter_mut() {
                    let msg = match worker.recv() {
                        Ok(m) => m,
                        Err(e) => {
                            abort_all(&mut workers, &e.to_string());
                            return Err(e.into());
                        }
                    };
                    match msg {
                        WireMessage::Emb { step, rows, dim, data } => {
                            if step != global_step {
                                let err = ProtocolError::StepMismatch { expected: global_step, got: step };
                                abort_all(&mut workers, &err.to_string());
                                return Err(err.into());
                            }
                            if rows as usize != batch.len() || dim != cfg.model.enc_dim as u32 {
                                let err = ProtocolError::GeometryMismatch {
                                    expected_rows: batch.len() as u32,
                                    expected_dim: cfg.model.enc_dim as u32,
                                    rows,
                                    dim,
                                };
                                abort_all(&mut workers, &err.to_string());
                                return Err(err.into());
                            }
                            stats.embeddings_received += 1;
                            embeddings.push(Tensor::new(vec![rows as usize, dim as usize], data)?);
                        }
                        other => {
                            let err = ProtocolError::UnexpectedMessage { expected: "EMB", got: other.name() };
                            abort_all(&mut workers, &err.to_string());
                            return Err(err.into());
                        }
                    }
                }
                let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
                let assignment = assign_triplets(
                    &ids,
                    cfg.channels,
                    cfg.triplet_margin,
                    triplet_seed(cfg.master_seed, epoch, step_in_epoch as u64),
                )?;
                let result = alignment_loss_and_grads(&embeddings, &assignment, w_align)?;
                epoch_align += result.loss;
                for (worker, grad) in workers.iter_mut().zip(result.grads.iter()) {
                    worker.send(&WireMessage::Grad {
                        step: global_step,
                        rows: batch.len() as u32,
                        dim: cfg.model.enc_dim as u32,
                        data: grad.data().to_vec(),
                    })?;
                    stats.grads_sent += 1;
                }
            }
            for worker in workers.iter_mut() {
                match worker.recv() {
                    Ok(WireMessage::Done { step }) if step == global_step => {}
                    Ok(WireMessage::Done { step }) => {
                        let err = ProtocolError::StepMismatch { expected: global_step, got: step };
                        abort_all(&mut workers, &err.to_string());
                        return Err(err.into());
                    }
                    Ok(other) => {
                        let err = ProtocolError::UnexpectedMessage { expected: "DONE", got: other.name() };
                        abort_all(&mut workers, &err.to_string());
                        return Err(err.into());
                    }
                    Err(e) => {
                        abort_all(&mut workers, &e.to_string());
                        return Err(e.into());
                    }
                }
            }
            global_step += 1;
            stats.steps += 1;
        }

        metrics.push(MetricsRow {
            epoch,
            step: global_step,
            w_align,
            w_rec,
            rec_loss: None,
            align_loss: cfg.align.then_some(epoch_align / batches.len() as f64),
            total_loss: None,
            lr,
        });
    }

    for worker in workers.iter_mut() {
        worker.send(&WireMessage::Shutdown)?;
    }

    if !cfg.out_dir.is_empty() {
        let dir = Path::new(&cfg.out_dir);
        std::fs::create_dir_all(dir)
            .map_err(|e| TrainError::Config(format!("cannot create {}: {e}", dir.display())))?;
        write_metrics(&dir.join("metrics_coordinator.csv"), &metrics)?;
        let state = TrainState {
            version: 1,
            epoch_next: cfg.epochs,
            global_step,
            master_seed: cfg.master_seed,
            channels: cfg.channels,
            config_hash: super::checkpoint::config_hash(cfg),
        };
        let json = serde_json::to_string_pretty(&state).expect("state serializes");
        std::fs::write(dir.join(STATE_FILE), json.as_bytes())
            .map_err(|e| TrainError::Config(format!("cannot write state: {e}")))?;
    }
    Ok(stats)
}

fn resume_state(cfg: &TrainConfig) -> Result<Option<TrainState>, TrainError> {
    if cfg.out_dir.is_empty() {
        return Ok(None);
    }
    Ok(load_checkpoint(Path::new(&cfg.out_dir), cfg)?.map(|(_, _, state)| state))
}

/// TCP front end: binds the endpoint, accepts one connection per channel,
/// and runs the protocol. Records come from the config's manifest.
pub fn run_coordinator(cfg: &TrainConfig, listen: &str) -> Result<CoordinatorStats, TrainError> {
    let records = load_records(Path::new(&cfg.manifest))?;
    let listener = TcpListener::bind(listen)
        .map_err(|e| TrainError::Config(format!("cannot bind {listen}: {e}")))?;
    run_coordinator_listener(cfg, &listener, &records)
}

/// Accepts `cfg.channels` connections from an already-bound listener, then
/// delegates to [`run_coordinator_on`]. Split out so tests can bind an
/// ephemeral port first.
pub fn run_coordinator_listener(
    cfg: &TrainConfig,
    listener: &TcpListener,
    records: &[SignalRecord],
) -> Result<CoordinatorStats, TrainError> {
    let mut conns = Vec::with_capacity(cfg.channels);
    for _ in 0..cfg.channels {
        let (stream, _) = listener
            .accept()
            .map_err(|e| TrainError::Config(format!("accept failed: {e}")))?;
        conns.push(TcpTransport::new(stream)?);
    }
    run_coordinator_on(cfg, conns, records)
}
