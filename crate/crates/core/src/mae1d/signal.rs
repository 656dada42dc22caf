use crate::numcore::{NumError, Result, Tensor};

/// Reshapes a signal into `[L, patch_len]` non-overlapping patches; patch `k`
/// holds samples `[k * patch_len, (k + 1) * patch_len)`. Row-major storage
/// makes this a pure reinterpretation of the buffer.
pub fn patchify(signal: &[f64], patch_len: usize) -> Result<Tensor> {
    if patch_len == 0 || !signal.len().is_multiple_of(patch_len) {
        return Err(NumError::InvalidArgument {
            op: "patchify",
            detail: format!("signal length {} not divisible by patch length {patch_len}", signal.len()),
        });
    }
    Tensor::new(vec![signal.len() / patch_len, patch_len], signal.to_vec())
}

/// Inverse of [`patchify`]: flattens `[L, patch_len]` back to a signal.
pub fn unpatchify(patches: &Tensor) -> Result<Vec<f64>> {
    match patches.shape() {
        [_, _] => Ok(patches.data().to_vec()),
        s => Err(NumError::ShapeMismatch {
            op: "unpatchify",
            detail: format!("expected [L, patch_len], got {:?}", s),
        }),
    }
}

/// Fixed sine-cosine position table `[length, dim]`: row `p`, column pair `j`
/// holds `sin(p / 10000^(2j/dim))` and `cos(p / 10000^(2j/dim))`.
/// Deterministic in its arguments.
pub fn sincos_positions(length: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(NumError::InvalidArgument {
            op: "sincos_positions",
            detail: format!("dim must be positive and even, got {dim}"),
        });
    }
    let mut data = vec![0.0; length * dim];
    for p in 0..length {
        for j in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * j as f64 / dim as f64);
            let angle = p as f64 * freq;
            data[p * dim + 2 * j] = angle.sin();
            data[p * dim + 2 * j + 1] = angle.cos();
        }
    }
    Tensor::new(vec![length, dim], data)
}
