use crate::numcore::{Graph, NodeId, NumError, Result, Tensor};

/// Margin used by the alignment loss unless a run configures its own.
///
/// On unit-normalized embeddings the pairwise distance lives in [0, 2], and
/// the hinge stops pushing once negatives clear the margin; a small margin
/// therefore lets all embeddings collapse into one tight cone whose
/// same-record and different-record similarities are indistinguishable.
/// The canonical published default for the Euclidean triplet loss keeps
/// negatives separated by a meaningful fraction of the diameter.
pub const DEFAULT_TRIPLET_MARGIN: f64 = 1.0;

/// Mean squared error between a signal matrix and its reconstruction,
/// averaged over every channel and sample.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(NumError::ShapeMismatch {
            op: "reconstruction_loss",
            detail: format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        });
    }
    let n = x.numel() as f64;
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_hat.data().iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let loss = sum / n;
    if !loss.is_finite() {
        return Err(NumError::NonFinite { op: "reconstruction_loss" });
    }
    Ok(loss)
}

/// In-graph mean squared error over all positions of `pred` vs `target`
/// (both `[L, patch_len]`).
pub fn reconstruction_loss_graph(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    g.mean_all(sq)
}

/// In-graph mean squared error restricted to the masked patches, the
/// original masked-autoencoder convention. Available as an ablation switch;
/// the default objective averages over every position.
pub fn masked_reconstruction_loss_graph(
    g: &mut Graph,
    pred: NodeId,
    target: NodeId,
    masked_idx: &[usize],
) -> Result<NodeId> {
    if masked_idx.is_empty() {
        return Err(NumError::InvalidArgument {
            op: "masked_reconstruction_loss",
            detail: "no masked patches".into(),
        });
    }
    let pred_masked = g.gather_rows(pred, masked_idx)?;
    let target_masked = g.gather_rows(target, masked_idx)?;
    reconstruction_loss_graph(g, pred_masked, target_masked)
}

/// Scales each row of `[n, d]` to unit Euclidean norm. Zero-norm rows are a
/// hard error (they cannot be normalized).
pub fn l2_normalize_rows(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let sq = g.mul(x, x)?;
    let sums = g.row_sum(sq)?;
    if g.value(sums).iter().any(|&s| s <= 0.0) {
        return Err(NumError::InvalidArgument {
            op: "l2_normalize_rows",
            detail: "zero-norm embedding cannot be normalized".into(),
        });
    }
    let norms = g.sqrt(sums)?;
    g.div_col(x, norms)
}

/// In-graph triplet loss: rows of the three `[B, d]` matrices are
/// L2-normalized, then the batch mean of
/// `max(0, ||a - p|| - ||a - n|| + margin)` is taken.
pub fn triplet_loss_graph(
    g: &mut Graph,
    anchors: NodeId,
    positives: NodeId,
    negatives: NodeId,
    margin: f64,
) -> Result<NodeId> {
    for (name, id) in [("anchors", anchors), ("positives", positives), ("negatives", negatives)] {
        if g.shape(id) != g.shape(anchors) {
            return Err(NumError::ShapeMismatch {
                op: "triplet_loss",
                detail: format!("{name} shape {:?} vs anchors {:?}", g.shape(id), g.shape(anchors)),
            });
        }
    }
    let a = l2_normalize_rows(g, anchors)?;
    let p = l2_normalize_rows(g, positives)?;
    let n = l2_normalize_rows(g, negatives)?;
    let d_ap = row_distance(g, a, p)?;
    let d_an = row_distance(g, a, n)?;
    let gap = g.sub(d_ap, d_an)?;
    let shifted = g.add_scalar(gap, margin)?;
    let hinge = g.relu(shifted)?;
    g.mean_all(hinge)
}

/// Per-row Euclidean distance between two `[n, d]` matrices, as `[n, 1]`.
fn row_distance(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let diff = g.sub(a, b)?;
    let sq = g.mul(diff, diff)?;
    let sums = g.row_sum(sq)?;
    // Guard the sqrt gradient at identical rows: ||a - p|| = 0 has an
    // unbounded derivative, so keep a tiny floor under the root.
    let eps = 1e-24;
    let shifted = g.add_scalar(sums, eps)?;
    g.sqrt(shifted)
}

/// Triplet loss on plain tensors (no graph): the independent value path used
/// by tests and reports.
pub fn triplet_loss(anchors: &Tensor, positives: &Tensor, negatives: &Tensor, margin: f64) -> Result<f64> {
    if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
        return Err(NumError::ShapeMismatch {
            op: "triplet_loss",
            detail: format!(
                "{:?} / {:?} / {:?}",
                anchors.shape(),
                positives.shape(),
                negatives.shape()
            ),
        });
    }
    let (b, d) = match anchors.shape() {
        [b, d] => (*b, *d),
        s => {
            return Err(NumError::ShapeMismatch {
                op: "triplet_loss",
                detail: format!("expected [B, d], got {:?}", s),
            })
        }
    };
    let normalize = |t: &Tensor, row: usize| -> Result<Vec<f64>> {
        let slice = &t.data()[row * d..(row + 1) * d];
        let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(NumError::InvalidArgument {
                op: "triplet_loss",
                detail: "zero-norm embedding cannot be normalized".into(),
            });
        }
        Ok(slice.iter().map(|v| v / norm).collect())
    };
    let mut total = 0.0;
    for row in 0..b {
        let a = normalize(anchors, row)?;
        let p = normalize(positives, row)?;
        let n = normalize(negatives, row)?;
        let dist = |u: &[f64], v: &[f64]| {
            u.iter().zip(v.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        total += (dist(&a, &p) - dist(&a, &n) + margin).max(0.0);
    }
    Ok(total / b as f64)
}
