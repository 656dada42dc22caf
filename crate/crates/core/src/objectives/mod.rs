//! Training objectives: reconstruction MSE, triplet alignment over
//! channel embeddings, and the sinusoidal curriculum that blends them.

mod alignment;
mod curriculum;
mod losses;
mod triplets;

pub use alignment::{alignment_loss_and_grads, AlignmentResult};
pub use curriculum::{combined_loss, curriculum_weights, CurriculumState};
pub use losses::{
    l2_normalize_rows, masked_reconstruction_loss_graph, reconstruction_loss,
    reconstruction_loss_graph, triplet_loss, triplet_loss_graph, DEFAULT_TRIPLET_MARGIN,
};
pub use triplets::{assign_triplets, TripletAssignment};
