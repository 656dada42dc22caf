//! Evaluation procedures over trained channel models: channel-pair
//! similarity matrices, cross-channel reconstruction error, logistic
//! regression and nearest-neighbor cross-validation, and embedding export
//! for external plotting.

mod export;
mod folds;
mod knn;
mod logreg;
mod recon;
mod report;
mod similarity;
mod stats;

use thiserror::Error;

pub use export::{export_embeddings, record_embeddings};
pub use folds::{sample_folds, subject_folds, FoldSplit};
pub use knn::knn_cv;
pub use logreg::logreg_cv;
pub use recon::{recon_mae_report, ReconMaeMatrix};
pub use report::{cv_csv, matrix_csv, CvOutcome, JsonSummary};
pub use similarity::{similarity_report, SimilarityReport};
pub use stats::{cosine_sim, pearson_corr};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("zero-variance signal in correlation")]
    ZeroVariance,
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error(transparent)]
    Num(#[from] crate::numcore::NumError),
    #[error(transparent)]
    Data(#[from] crate::datapipe::DataError),
    #[error("i/o error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
