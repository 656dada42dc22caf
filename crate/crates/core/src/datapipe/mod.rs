//! Record storage and ingestion, preprocessing (resample, crop, mean
//! normalization), batching, and a synthetic latent-heart signal generator
//! used as the test oracle for the whole pipeline.

mod batch;
mod preprocess;
mod record;
mod synth;

pub use batch::{batch_iter, PreparedRecord};
pub use preprocess::{
    crop_random, crop_samples, mean_normalize, preprocess, resample_linear, PreprocessConfig,
};
pub use record::{
    import_csv, load_manifest, load_records, read_record, write_records, DataError, Manifest,
    ManifestEntry, SignalRecord,
};
pub use synth::{channel_names, synth_generate, SyntheticHeartConfig};
