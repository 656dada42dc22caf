use crate::numcore::{NumError, Result};
use crate::rng::Rng;

/// Seeded triplet assignment over a batch of per-channel embeddings.
///
/// Every `(record, channel)` pair in the batch is an anchor exactly once.
/// Its positive is the same record seen through a different channel; its
/// negative is a different record through any channel. Indices address the
/// stacked embedding matrix whose row for `(record b, channel c)` is
/// `c * batch_size + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletAssignment {
    pub batch_size: usize,
    pub channels: usize,
    /// Flat row index of each anchor, in `(channel-major, record-minor)` order.
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub margin: f64,
}

impl TripletAssignment {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    fn flat(&self, record: usize, channel: usize) -> usize {
        channel * self.batch_size + record
    }
}

/// Draws a triplet assignment for a batch described by its record ids (one
/// per batch slot) and channel count. Deterministic in the seed. Fails when
/// no valid negative exists (fewer than two distinct record ids) or no valid
/// positive exists (fewer than two channels).
pub fn assign_triplets(
    record_ids: &[&str],
    channels: usize,
    margin: f64,
    seed: u64,
) -> Result<TripletAssignment> {
    let b = record_ids.len();
    if channels < 2 {
        return Err(NumError::InvalidArgument {
            op: "assign_triplets",
            detail: format!("need at least 2 channels for positives, got {channels}"),
        });
    }
    let distinct = {
        let mut ids: Vec<&str> = record_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if distinct < 2 {
        return Err(NumError::InvalidArgument {
            op: "assign_triplets",
            detail: "batch has a single record id; no valid negative exists".into(),
        });
    }

    let mut rng = Rng::new(seed);
    let mut assignment = TripletAssignment {
        batch_size: b,
        channels,
        anchors: Vec::with_capacity(b * channels),
        positives: Vec::with_capacity(b * channels),
        negatives: Vec::with_capacity(b * channels),
        margin,
    };
    for channel in 0..channels {
        for record in 0..b {
            // Positive: same record, uniformly drawn different channel.
            let mut pos_channel = rng.below(channels - 1);
            if pos_channel >= channel {
                pos_channel += 1;
            }
            // Negative: uniformly drawn slot with a different record id,
            // through a uniformly drawn channel.
            let neg_record = loop {
                let candidate = rng.below(b);
                if record_ids[candidate] != record_ids[record] {
                    break candidate;
                }
            };
            let neg_channel = rng.below(channels);
            assignment.anchors.push(assignment.flat(record, channel));
            assignment.positives.push(assignment.flat(record, pos_channel));
            assignment.negatives.push(assignment.flat(neg_record, neg_channel));
        }
    }
    Ok(assignment)
}
