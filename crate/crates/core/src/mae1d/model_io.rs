//! Binary checkpoint container.
//!
//! Layout: magic `MR1D` (4 bytes), format version (u32 LE), a length-prefixed
//! (u32 LE) UTF-8 JSON metadata blob, then repeated entries:
//! name (u16 LE length + UTF-8 bytes), rank (u8), dims (u64 LE each), values
//! (binary64 LE, row-major). Round trips are bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numcore::Tensor;

use super::config::ModelConfig;
use super::model::Mae1dModel;

pub const CONTAINER_MAGIC: [u8; 4] = *b"MR1D";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected MR1D")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("malformed metadata JSON: {0}")]
    MalformedMeta(#[from] serde_json::Error),
    #[error("parameter count mismatch: config expects {expected} values, file holds {found}")]
    ParamCountMismatch { expected: usize, found: usize },
    #[error("missing parameter entry {0}")]
    MissingParam(String),
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite value in entry {0}")]
    NonFinite(String),
    #[error("entry name is not UTF-8")]
    NameNotUtf8,
}

/// Writes a container with arbitrary metadata and named tensors.
pub fn write_container(
    path: &Path,
    meta_json: &str,
    entries: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CONTAINER_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let meta = meta_json.as_bytes();
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta)?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a container back: metadata JSON plus named tensors in file order.
pub fn read_container(path: &Path) -> Result<(String, Vec<(String, Tensor)>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r, "version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = read_u32(&mut r, "metadata length")? as usize;
    let mut meta = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta, "metadata")?;
    let meta = String::from_utf8(meta).map_err(|_| CheckpointError::NameNotUtf8)?;

    let mut entries = Vec::new();
    loop {
        let mut len_buf = [0u8; 2];
        match r.read(&mut len_buf[..1])? {
            0 => break, // clean end of file
            _ => read_exact(&mut r, &mut len_buf[1..], "entry name length")?,
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, "entry name")?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::NameNotUtf8)?;

        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, "entry rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u64(&mut r, "entry dims")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, "entry values")?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::new(shape, data).map_err(|_| CheckpointError::NonFinite(name.clone()))?;
        entries.push((name, tensor));
    }
    Ok((meta, entries))
}

/// Serializes a model: the configuration as the metadata blob, parameters as
/// entries in canonical order.
pub fn write_model(path: &Path, model: &Mae1dModel) -> Result<(), CheckpointError> {
    let meta = serde_json::to_string(&model.config)?;
    write_container(path, &meta, &model.named_params())
}

/// Loads a model, validating magic, version, and total parameter count
/// against the closed-form count for the stored configuration.
pub fn read_model(path: &Path) -> Result<Mae1dModel, CheckpointError> {
    let (meta, entries) = read_container(path)?;
    let config: ModelConfig = serde_json::from_str(&meta)?;
    let found: usize = entries.iter().map(|(_, t)| t.numel()).sum();
    let expected = Mae1dModel::count_params(&config);
    if found != expected {
        return Err(CheckpointError::ParamCountMismatch { expected, found });
    }
    let mut by_name: BTreeMap<String, Tensor> = entries.into_iter().collect();
    let mut model = Mae1dModel::init(&config, 0)
        .map_err(|_| CheckpointError::MalformedMeta(serde::de::Error::custom("invalid config")))?;
    let mut missing: Option<String> = None;
    let mut bad_shape: Option<(String, Vec<usize>, Vec<usize>)> = None;
    model.params.for_each_named_mut(&mut |name, slot| {
        match by_name.remove(name) {
            Some(stored) => {
                if stored.shape() != slot.shape() {
                    bad_shape.get_or_insert((
                        name.to_string(),
                        slot.shape().to_vec(),
                        stored.shape().to_vec(),
                    ));
                } else {
                    *slot = stored.with_grad();
                }
            }
            None => {
                missing.get_or_insert(name.to_string());
            }
        }
    });
    if let Some((name, expected, found)) = bad_shape {
        return Err(CheckpointError::ShapeMismatch { name, expected, found });
    }
    if let Some(name) = missing {
        return Err(CheckpointError::MissingParam(name));
    }
    Ok(model)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated(what)
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}
