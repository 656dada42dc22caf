use std::sync::Arc;

use super::{NumError, Result};

/// Dense row-major tensor of binary64 values.
///
/// Data is reference-counted so that inserting a parameter into a computation
/// graph shares storage instead of copying it. A tensor that `requires_grad`
/// carries a same-shape gradient accumulator.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from raw values. Fails if the element count does not
    /// match the shape or any value is non-finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumError::ShapeMismatch {
                op: "tensor_new",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumError::NonFinite { op: "tensor_new" });
        }
        Ok(Tensor { shape, data: Arc::new(data), requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; numel]), requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).expect("finite scalar")
    }

    /// Marks the tensor as a trainable parameter, allocating its gradient
    /// accumulator.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.numel()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Shared handle to the underlying storage.
    pub(crate) fn storage(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Mutable access to the values; clones the storage only if it is shared
    /// (it is not once the step's graph has been dropped).
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Overwrites the gradient accumulator. The tensor must require grad and
    /// the slice must match its element count.
    pub fn set_grad(&mut self, grad: &[f64]) -> Result<()> {
        if !self.requires_grad {
            return Err(NumError::InvalidArgument {
                op: "set_grad",
                detail: "tensor does not require grad".into(),
            });
        }
        if grad.len() != self.numel() {
            return Err(NumError::ShapeMismatch {
                op: "set_grad",
                detail: format!("expected {} values, got {}", self.numel(), grad.len()),
            });
        }
        self.grad = Some(grad.to_vec());
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn grad_present_iff_requires_grad() {
        let plain = Tensor::zeros(vec![3]);
        assert!(!plain.requires_grad());
        assert!(plain.grad().is_none());
        let param = Tensor::zeros(vec![3]).with_grad();
        assert!(param.requires_grad());
        assert_eq!(param.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }
}
