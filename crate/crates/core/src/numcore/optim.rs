use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{NumError, Result};

/// AdamW optimizer state: decoupled weight decay plus bias-corrected
/// first/second moments, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamWState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

    /// Fresh state with zero moments shaped like `params`, using the
    /// optimizer's published default constants.
    pub fn new(params: &[&Tensor]) -> Self {
        Self::with_constants(
            params,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
            Self::DEFAULT_EPSILON,
            Self::DEFAULT_WEIGHT_DECAY,
        )
    }

    pub fn with_constants(params: &[&Tensor], beta1: f64, beta2: f64, epsilon: f64, weight_decay: f64) -> Self {
        let first_moment = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let second_moment = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamWState { step_count: 0, beta1, beta2, epsilon, weight_decay, first_moment, second_moment }
    }
}

/// Bias-correction factors for one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct BiasCorrection {
    pub first: f64,
    pub second: f64,
}

impl AdamWState {
    /// Advances the shared step counter and returns the step's bias
    /// corrections. Every parameter updated afterwards belongs to this step.
    pub fn begin_step(&mut self) -> BiasCorrection {
        self.step_count += 1;
        let t = self.step_count as i32;
        BiasCorrection {
            first: 1.0 - self.beta1.powi(t),
            second: 1.0 - self.beta2.powi(t),
        }
    }
}

/// AdamW update of a single parameter tensor: decoupled weight decay
/// (`p <- p - lr * wd * p`) followed by the bias-corrected Adam step. The
/// gradient is read from the parameter's accumulator.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update_param(
    param: &mut Tensor,
    first_moment: &mut Tensor,
    second_moment: &mut Tensor,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    correction: BiasCorrection,
    lr: f64,
) -> Result<()> {
    let grad = param
        .grad()
        .ok_or_else(|| NumError::InvalidArgument {
            op: "adamw_step",
            detail: "parameter has no gradient".into(),
        })?
        .to_vec();
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(NumError::NonFinite { op: "adamw_step" });
    }
    let m = first_moment.data_mut();
    let v = second_moment.data_mut();
    let p = param.data_mut();
    for j in 0..p.len() {
        p[j] -= lr * weight_decay * p[j];
        m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
        v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
        let m_hat = m[j] / correction.first;
        let v_hat = v[j] / correction.second;
        p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    if !p.iter().all(|x| x.is_finite()) {
        return Err(NumError::NonFinite { op: "adamw_step" });
    }
    Ok(())
}

/// One AdamW update over all parameters. Gradients are read from each
/// parameter's accumulator. Decoupled weight decay is applied first
/// (`p <- p - lr * wd * p`), then the bias-corrected Adam step.
pub fn adamw_step(params: &mut [Tensor], state: &mut AdamWState, lr: f64) -> Result<()> {
    if lr < 0.0 {
        return Err(NumError::InvalidArgument {
            op: "adamw_step",
            detail: format!("negative learning rate {lr}"),
        });
    }
    if params.len() != state.first_moment.len() {
        return Err(NumError::InvalidArgument {
            op: "adamw_step",
            detail: format!("{} params vs {} moment slots", params.len(), state.first_moment.len()),
        });
    }
    let correction = state.begin_step();
    for (i, param) in params.iter_mut().enumerate() {
        adamw_update_param(
            param,
            &mut state.first_moment[i],
            &mut state.second_moment[i],
            state.beta1,
            state.beta2,
            state.epsilon,
            state.weight_decay,
            correction,
            lr,
        )?;
    }
    Ok(())
}

/// Learning-rate schedule: optional linear warmup followed by cosine decay
/// from `base_lr` to zero at `total_epochs`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_epochs: u32,
    #[serde(default)]
    pub warmup_epochs: u32,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_epochs: u32) -> Self {
        LrSchedule { base_lr, total_epochs, warmup_epochs: 0 }
    }
}

/// Learning rate at an epoch index: `base_lr * 0.5 * (1 + cos(pi * e / N))`
/// after warmup, where `e`/`N` are measured past the warmup span.
pub fn cosine_lr(epoch: u32, sched: &LrSchedule) -> Result<f64> {
    if epoch > sched.total_epochs {
        return Err(NumError::InvalidArgument {
            op: "cosine_lr",
            detail: format!("epoch {epoch} out of range 0..={}", sched.total_epochs),
        });
    }
    if epoch < sched.warmup_epochs {
        return Ok(sched.base_lr * (epoch + 1) as f64 / sched.warmup_epochs as f64);
    }
    let span = (sched.total_epochs - sched.warmup_epochs) as f64;
    if span == 0.0 {
        return Ok(0.0);
    }
    let progress = (epoch - sched.warmup_epochs) as f64 / span;
    Ok(sched.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>) -> Tensor {
        Tensor::new(vec![values.len()], values).unwrap().with_grad()
    }

    #[test]
    fn zero_gradient_applies_pure_decay() {
        let mut p = param(vec![1.0]);
        p.set_grad(&[0.0]).unwrap();
        let mut state = AdamWState::new(&[&p]);
        let mut params = [p];
        adamw_step(&mut params, &mut state, 0.1).unwrap();
        // p <- p - 0.1 * 0.01 * p = 0.999; the Adam term is exactly zero.
        assert!((params[0].data()[0] - 0.999).abs() < 1e-15);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = param(vec![2.0, -1.0]);
        p.set_grad(&[0.5, -0.25]).unwrap();
        let mut state = AdamWState::with_constants(&[&p], 0.9, 0.999, 1e-8, 0.0);
        let lr = 0.01;
        let before = p.data().to_vec();
        let mut params = vec![p];
        adamw_step(&mut params, &mut state, lr).unwrap();
        for (j, &prev) in before.iter().enumerate() {
            let step = params[0].data()[j] - prev;
            let sign = if j == 0 { 1.0 } else { -1.0 };
            // Bias correction makes m_hat/sqrt(v_hat) = sign(g) up to epsilon.
            assert!((step + lr * sign).abs() < 1e-6, "step {step}");
        }
    }

    #[test]
    fn matches_hand_run_recurrence_over_two_steps() {
        let (b1, b2, eps, wd, lr, g) = (0.9, 0.999, 1e-8, 0.01, 0.05, 0.3);
        let mut p_hand = 1.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2u32 {
            p_hand -= lr * wd * p_hand;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1_pow(b1, t));
            let v_hat = v / (1.0 - b1_pow(b2, t));
            p_hand -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = param(vec![1.5]);
        p.set_grad(&[g]).unwrap();
        let mut state = AdamWState::with_constants(&[&p], b1, b2, eps, wd);
        let mut params = vec![p];
        adamw_step(&mut params, &mut state, lr).unwrap();
        params[0].set_grad(&[g]).unwrap();
        adamw_step(&mut params, &mut state, lr).unwrap();
        assert!((params[0].data()[0] - p_hand).abs() < 1e-12);
    }

    fn b1_pow(b: f64, t: u32) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = param(vec![1.0]);
        p.set_grad(&[f64::NAN]).unwrap();
        let mut state = AdamWState::new(&[&p]);
        let mut params = vec![p];
        assert!(adamw_step(&mut params, &mut state, 0.1).is_err());
    }

    #[test]
    fn cosine_lr_endpoints_and_midpoint() {
        let sched = LrSchedule::new(1e-3, 200);
        assert_eq!(cosine_lr(0, &sched).unwrap(), 1e-3);
        assert!(cosine_lr(200, &sched).unwrap().abs() < 1e-19);
        assert!((cosine_lr(100, &sched).unwrap() - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(201, &sched).is_err());
    }

    #[test]
    fn cosine_lr_monotone_non_increasing() {
        let sched = LrSchedule::new(1e-3, 200);
        let mut prev = f64::INFINITY;
        for e in 0..=200 {
            let lr = cosine_lr(e, &sched).unwrap();
            assert!(lr <= prev + 1e-18, "epoch {e}: {lr} > {prev}");
            prev = lr;
        }
    }

    #[test]
    fn warmup_ramps_then_decays() {
        let sched = LrSchedule { base_lr: 1e-3, total_epochs: 10, warmup_epochs: 2 };
        assert!((cosine_lr(0, &sched).unwrap() - 5e-4).abs() < 1e-18);
        assert!((cosine_lr(1, &sched).unwrap() - 1e-3).abs() < 1e-18);
        assert!((cosine_lr(2, &sched).unwrap() - 1e-3).abs() < 1e-18);
        assert!(cosine_lr(10, &sched).unwrap().abs() < 1e-19);
    }
}
