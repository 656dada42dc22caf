use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Result};

/// Position within the training curriculum: epoch index `i` out of
/// `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epoch_index: u32,
    pub total_epochs: u32,
}

impl CurriculumState {
    pub fn new(epoch_index: u32, total_epochs: u32) -> Result<Self> {
        if epoch_index > total_epochs || total_epochs == 0 {
            return Err(NumError::InvalidArgument {
                op: "curriculum_state",
                detail: format!("epoch {epoch_index} out of range 0..={total_epochs}"),
            });
        }
        Ok(CurriculumState { epoch_index, total_epochs })
    }
}

/// Loss weights at an epoch: `(w_align, w_rec) = (sin(i/N * pi/2),
/// cos(i/N * pi/2))`. Training starts as pure reconstruction and ends as
/// pure alignment; the weights always sit on the unit circle.
pub fn curriculum_weights(state: CurriculumState) -> (f64, f64) {
    let angle = state.epoch_index as f64 / state.total_epochs as f64 * std::f64::consts::FRAC_PI_2;
    (angle.sin(), angle.cos())
}

/// Blends the two scalar losses with the epoch's curriculum weights.
pub fn combined_loss(rec: f64, align: f64, state: CurriculumState) -> Result<f64> {
    if !rec.is_finite() || !align.is_finite() {
        return Err(NumError::NonFinite { op: "combined_loss" });
    }
    let (w_align, w_rec) = curriculum_weights(state);
    Ok(w_align * align + w_rec * rec)
}
