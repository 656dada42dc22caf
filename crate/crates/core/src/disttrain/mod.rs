//! Training orchestration in two interchangeable modes: a single-process
//! reference trainer over all channel models, and the distributed mode with
//! one worker per channel plus a coordinator exchanging embeddings and
//! alignment gradients per step over a framed byte protocol.
//!
//! Both modes share the per-channel step code and the coordinator-side
//! alignment math, and every random choice derives from
//! `(master_seed, epoch, step, channel)`, so for any config and seed the two
//! modes produce bit-identical parameters.

mod checkpoint;
mod config;
mod coordinator;
mod memory_run;
mod metrics;
mod reference;
mod seeds;
mod step;
mod transport;
mod wire;
mod worker;

use thiserror::Error;

pub use checkpoint::{
    config_hash, init_or_resume, load_channel_checkpoint, load_checkpoint, model_path,
    optim_path, save_checkpoint, write_optimizer_file, TrainState, STATE_FILE,
};
pub use config::TrainConfig;
pub use coordinator::{
    run_coordinator, run_coordinator_listener, run_coordinator_on, CoordinatorStats,
};
pub use memory_run::run_distributed_in_memory;
pub use metrics::{read_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use reference::{train_reference, train_reference_until, TrainOutcome};
pub use seeds::{epoch_seed, init_seed, mask_seed, triplet_seed};
pub use step::{channel_complete, channel_forward, optimizer_for, ChannelStep};
pub use transport::{mem_pair, MemTransport, TcpTransport, Transport};
pub use wire::{
    decode_frame, encode_frame, read_frame, write_frame, ProtocolError, WireMessage, MAX_PAYLOAD,
    WIRE_MAGIC,
};
pub use worker::{run_worker, run_worker_on, WorkerOutcome};

/// Errors surfaced by training runs in either mode.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Num(#[from] crate::numcore::NumError),
    #[error(transparent)]
    Data(#[from] crate::datapipe::DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Checkpoint(#[from] crate::mae1d::CheckpointError),
    #[error("configuration error: {0}")]
    Config(String),
}
