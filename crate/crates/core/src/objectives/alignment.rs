use crate::numcore::{Graph, NumError, Result, Tensor};

use super::losses::triplet_loss_graph;
use super::triplets::TripletAssignment;

/// Alignment loss over one step's coordinated embeddings, plus the gradient
/// of `w_align * loss` with respect to each channel's `[B, d]` embedding
/// matrix. This is the coordinator-side computation; the per-channel
/// gradients are what gets shipped back to the workers.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub loss: f64,
    /// One `[B, d]` gradient matrix per channel, in channel order.
    pub grads: Vec<Tensor>,
}

/// Computes the triplet alignment loss over per-channel embedding matrices
/// (each `[B, d]`, rows in batch order) under a seeded assignment, and
/// differentiates `w_align * loss` back to every embedding.
pub fn alignment_loss_and_grads(
    embeddings: &[Tensor],
    assignment: &TripletAssignment,
    w_align: f64,
) -> Result<AlignmentResult> {
    if embeddings.len() != assignment.channels {
        return Err(NumError::InvalidArgument {
            op: "alignment_loss",
            detail: format!(
                "{} embedding matrices for {} channels",
                embeddings.len(),
                assignment.channels
            ),
        });
    }
    let (b, d) = match embeddings[0].shape() {
        [b, d] => (*b, *d),
        s => {
            return Err(NumError::ShapeMismatch {
                op: "alignment_loss",
                detail: format!("expected [B, d] embeddings, got {:?}", s),
            })
        }
    };
    if b != assignment.batch_size {
        return Err(NumError::ShapeMismatch {
            op: "alignment_loss",
            detail: format!("assignment batch {} vs embeddings {}", assignment.batch_size, b),
        });
    }

    let mut g = Graph::new();
    let leaves: Vec<_> = embeddings
        .iter()
        .map(|e| {
            if e.shape() != [b, d] {
                return Err(NumError::ShapeMismatch {
                    op: "alignment_loss",
                    detail: format!("embedding shape {:?} vs [{b}, {d}]", e.shape()),
                });
            }
            Ok(g.param(&e.clone().with_grad()))
        })
        .collect::<Result<Vec<_>>>()?;
    // Stack channel matrices so assignment indices address rows directly.
    let stacked = g.concat_rows(&leaves)?;
    let anchors = g.gather_rows(stacked, &assignment.anchors)?;
    let positives = g.gather_rows(stacked, &assignment.positives)?;
    let negatives = g.gather_rows(stacked, &assignment.negatives)?;
    let loss = triplet_loss_graph(&mut g, anchors, positives, negatives, assignment.margin)?;
    let weighted = g.scale(loss, w_align)?;
    g.backward(weighted)?;

    let grads = leaves
        .iter()
        .map(|&leaf| Tensor::new(vec![b, d], g.grad(leaf).expect("leaf grad").to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentResult { loss: g.scalar_value(loss), grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::assign_triplets;
    use crate::rng::Rng;

    fn random_embeddings(channels: usize, b: usize, d: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = Rng::new(seed);
        (0..channels)
            .map(|_| {
                Tensor::new(vec![b, d], (0..b * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_weight_yields_zero_gradients() {
        let embs = random_embeddings(3, 4, 8, 5);
        let ids = ["r0", "r1", "r2", "r3"];
        let assignment = assign_triplets(&ids, 3, 0.2, 9).unwrap();
        let result = alignment_loss_and_grads(&embs, &assignment, 0.0).unwrap();
        assert!(result.loss >= 0.0);
        for grad in &result.grads {
            assert!(grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_scale_linearly_with_weight() {
        let embs = random_embeddings(2, 3, 4, 6);
        let ids = ["a", "b", "c"];
        let assignment = assign_triplets(&ids, 2, 0.2, 3).unwrap();
        let r1 = alignment_loss_and_grads(&embs, &assignment, 0.5).unwrap();
        let r2 = alignment_loss_and_grads(&embs, &assignment, 1.0).unwrap();
        assert!((r1.loss - r2.loss).abs() < 1e-15, "loss value is weight-independent");
        for (g1, g2) in r1.grads.iter().zip(r2.grads.iter()) {
            for (a, b) in g1.data().iter().zip(g2.data().iter()) {
                assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let embs = random_embeddings(2, 3, 4, 6);
        let ids = ["a", "b", "c"];
        let assignment = assign_triplets(&ids, 3, 0.2, 3).unwrap();
        assert!(alignment_loss_and_grads(&embs, &assignment, 1.0).is_err());
    }
}
