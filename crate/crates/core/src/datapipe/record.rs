use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("waveform file missing: {0}")]
    MissingFile(PathBuf),
    #[error("length mismatch for record {id}: manifest says {expected} samples x {channels} channels, file holds {found} values")]
    LengthMismatch { id: String, expected: usize, channels: usize, found: usize },
    #[error("malformed CSV {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },
    #[error("record {id} too short: {have:.3} s available, {need:.3} s required")]
    RecordTooShort { id: String, have: f64, need: f64 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient records: {0}")]
    InsufficientRecords(String),
}

/// One multi-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub id: String,
    pub subject_id: String,
    pub fs_hz: f64,
    /// Channel-major samples: `channels[c][t]`.
    pub channels: Vec<Vec<f64>>,
    pub labels: BTreeMap<String, String>,
}

impl SignalRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.channels.is_empty() {
            return Err(DataError::InvalidRecord(format!("record {} has no channels", self.id)));
        }
        if self.fs_hz.is_nan() || self.fs_hz <= 0.0 {
            return Err(DataError::InvalidRecord(format!(
                "record {} has non-positive sampling rate {}",
                self.id, self.fs_hz
            )));
        }
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(DataError::InvalidRecord(format!(
                "record {} has channels of unequal length",
                self.id
            )));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs_hz
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub records: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub subject_id: String,
    pub fs_hz: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub labels: BTreeMap<String, String>,
    /// Waveform path, relative to the manifest's directory.
    pub path: String,
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| DataError::MalformedManifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads one waveform file (raw binary64 little-endian, channel-major) and
/// cross-checks its length against the manifest entry.
pub fn read_record(manifest_dir: &Path, entry: &ManifestEntry) -> Result<SignalRecord, DataError> {
    let path = manifest_dir.join(&entry.path);
    let file = File::open(&path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            DataError::MissingFile(path.clone())
        } else {
            DataError::Io { path: path.clone(), source: e }
        }
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|source| DataError::Io { path: path.clone(), source })?;
    let found = bytes.len() / 8;
    let expected_total = entry.n_channels * entry.n_samples;
    if !bytes.len().is_multiple_of(8) || found != expected_total {
        return Err(DataError::LengthMismatch {
            id: entry.id.clone(),
            expected: entry.n_samples,
            channels: entry.n_channels,
            found,
        });
    }
    let mut channels = Vec::with_capacity(entry.n_channels);
    for c in 0..entry.n_channels {
        let mut channel = Vec::with_capacity(entry.n_samples);
        for t in 0..entry.n_samples {
            let off = (c * entry.n_samples + t) * 8;
            channel.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        }
        channels.push(channel);
    }
    let record = SignalRecord {
        id: entry.id.clone(),
        subject_id: entry.subject_id.clone(),
        fs_hz: entry.fs_hz,
        channels,
        labels: entry.labels.clone(),
    };
    record.validate()?;
    Ok(record)
}

/// Loads every record referenced by a manifest.
pub fn load_records(manifest_path: &Path) -> Result<Vec<SignalRecord>, DataError> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.records.iter().map(|e| read_record(dir, e)).collect()
}

/// Persists records into `dir` as one waveform file per record plus a
/// `manifest.json`, returning the manifest path. Output is deterministic:
/// the same records produce byte-identical files.
pub fn write_records(records: &[SignalRecord], dir: &Path) -> Result<PathBuf, DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut entries = Vec::with_capacity(records.len());
    for record in records {
        record.validate()?;
        let rel = format!("{}.f64", record.id);
        let wave_path = dir.join(&rel);
        let file = File::create(&wave_path)
            .map_err(|source| DataError::Io { path: wave_path.clone(), source })?;
        let mut w = BufWriter::new(file);
        for channel in &record.channels {
            for &v in channel {
                w.write_all(&v.to_le_bytes())
                    .map_err(|source| DataError::Io { path: wave_path.clone(), source })?;
            }
        }
        w.flush().map_err(|source| DataError::Io { path: wave_path.clone(), source })?;
        entries.push(ManifestEntry {
            id: record.id.clone(),
            subject_id: record.subject_id.clone(),
            fs_hz: record.fs_hz,
            n_channels: record.n_channels(),
            n_samples: record.n_samples(),
            labels: record.labels.clone(),
            path: rel,
        });
    }
    let manifest = Manifest { records: entries };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json.as_bytes())
        .map_err(|source| DataError::Io { path: manifest_path.clone(), source })?;
    Ok(manifest_path)
}

/// Imports a CSV table: a header row of channel names, then one sample per
/// row. The sampling rate is supplied by the caller (it is not part of the
/// format).
pub fn import_csv(
    path: &Path,
    fs_hz: f64,
    id: &str,
    subject_id: &str,
) -> Result<SignalRecord, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::MalformedCsv {
            path: path.to_path_buf(),
            reason: "empty file".into(),
        })?
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let n_channels = header.trim_end_matches('\r').split(',').count();
    if n_channels == 0 || header.trim().is_empty() {
        return Err(DataError::MalformedCsv {
            path: path.to_path_buf(),
            reason: "header row has no channel names".into(),
        });
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); n_channels];
    for (line_no, line) in lines.enumerate() {
        let line = line.map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_channels {
            return Err(DataError::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("row {} has {} fields, header has {n_channels}", line_no + 2, fields.len()),
            });
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| DataError::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("row {}, column {}: not a number: {field:?}", line_no + 2, c + 1),
            })?;
            channels[c].push(v);
        }
    }
    let record = SignalRecord {
        id: id.to_string(),
        subject_id: subject_id.to_string(),
        fs_hz,
        channels,
        labels: BTreeMap::new(),
    };
    record.validate()?;
    Ok(record)
}
