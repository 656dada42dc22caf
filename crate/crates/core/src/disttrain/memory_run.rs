//! Whole-protocol run over the in-memory transport: coordinator and one
//! thread per worker, wired through the frame codec exactly as over sockets.

use crate::datapipe::SignalRecord;

use super::config::TrainConfig;
use super::coordinator::{run_coordinator_on, CoordinatorStats};
use super::transport::mem_pair;
use super::worker::{run_worker_on, WorkerOutcome};
use super::TrainError;

/// Spawns `cfg.channels` worker threads plus an in-thread coordinator over
/// in-memory framed channels, and returns worker outcomes sorted by channel
/// along with the coordinator's protocol accounting.
pub fn run_distributed_in_memory(
    cfg: &TrainConfig,
    records: &[SignalRecord],
) -> Result<(Vec<WorkerOutcome>, CoordinatorStats), TrainError> {
    cfg.validate()?;
    let mut coordinator_ends = Vec::with_capacity(cfg.channels);
    let mut worker_ends = Vec::with_capacity(cfg.channels);
    for _ in 0..cfg.channels {
        let (coord, worker) = mem_pair();
        coordinator_ends.push(coord);
        worker_ends.push(worker);
    }

    std::thread::scope(|scope| {
        let handles: Vec<_> = worker_ends
            .into_iter()
            .enumerate()
            .map(|(channel, conn)| {
                scope.spawn(move || run_worker_on(cfg, channel, conn, records))
            })
            .collect();

        let stats = run_coordinator_on(cfg, coordinator_ends, records);

        let mut outcomes = Vec::with_capacity(cfg.channels);
        let mut first_err: Option<TrainError> = None;
        for handle in handles {
            match handle.join().expect("worker thread must not panic") {
                Ok(outcome) => outcomes.push(outcome),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let stats = stats?;
        outcomes.sort_by_key(|o| o.channel);
        Ok((outcomes, stats))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{synth_generate, SyntheticHeartConfig};

    fn records(channels: usize, n: usize) -> Vec<SignalRecord> {
        synth_generate(&SyntheticHeartConfig {
            n_subjects: n,
            records_per_subject: 1,
            channels,
            noise_std: 0.01,
            fs_hz: 50.0,
            duration_s: 2.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn four_channel_three_step_accounting() {
        // 4 records in batches of 4 give one step per epoch; three epochs
        // make exactly 3 steps, 4x3 embeddings in and 4x3 gradients out.
        let cfg = TrainConfig::tiny(4, 3, 4, 21);
        let recs = records(4, 4);
        let (outcomes, stats) = run_distributed_in_memory(&cfg, &recs).unwrap();
        assert_eq!(outcomes.len(), 4);
        assert_eq!(stats.steps, 3);
        assert_eq!(stats.embeddings_received, 12);
        assert_eq!(stats.grads_sent, 12);
    }

    #[test]
    fn distributed_matches_reference_parameters_exactly() {
        let cfg = TrainConfig::tiny(3, 2, 4, 42);
        let recs = records(3, 4);
        let reference = crate::disttrain::train_reference(&cfg, &recs).unwrap();
        let (outcomes, _) = run_distributed_in_memory(&cfg, &recs).unwrap();
        for (channel, outcome) in outcomes.iter().enumerate() {
            let mut dist = Vec::new();
            let mut refr = Vec::new();
            outcome.model.params.for_each_named(&mut |_, t| dist.extend_from_slice(t.data()));
            reference.models[channel]
                .params
                .for_each_named(&mut |_, t| refr.extend_from_slice(t.data()));
            assert_eq!(dist.len(), refr.len());
            let max_delta = dist
                .iter()
                .zip(refr.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_delta < 1e-8, "channel {channel}: max |delta| {max_delta}");
        }
    }

    #[test]
    fn align_off_worker_matches_standalone_single_channel_run() {
        let mut cfg = TrainConfig::tiny(3, 2, 4, 7);
        cfg.align = false;
        let recs = records(3, 4);
        let (outcomes, stats) = run_distributed_in_memory(&cfg, &recs).unwrap();
        assert_eq!(stats.embeddings_received, 0, "align off sends no embeddings");
        assert_eq!(stats.grads_sent, 0);
        let reference = crate::disttrain::train_reference(&cfg, &recs).unwrap();
        for (channel, outcome) in outcomes.iter().enumerate() {
            let mut dist = Vec::new();
            let mut refr = Vec::new();
            outcome.model.params.for_each_named(&mut |_, t| dist.extend_from_slice(t.data()));
            reference.models[channel]
                .params
                .for_each_named(&mut |_, t| refr.extend_from_slice(t.data()));
            assert_eq!(dist, refr, "decoupled mode must match exactly");
        }
    }
}
