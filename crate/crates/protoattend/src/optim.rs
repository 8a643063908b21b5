//! Adam, gradient clipping, and the staircase learning-rate schedule.

use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
#[error("non-finite gradient in parameter '{name}'")]
pub struct NonFiniteGradient {
    pub name: String,
}

/// First and second moment estimates, one pair of buffers per parameter
/// tensor, plus a single step counter shared by all of them.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update. Each tensor's `grad` must be populated.
/// Validates every gradient before touching any state, so a returned error
/// leaves parameters and moments exactly as they were.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [(String, &mut Tensor)],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), NonFiniteGradient> {
    assert_eq!(state.m.len(), params.len(), "optimizer state tracks {} tensors, got {}", state.m.len(), params.len());
    for (name, p) in params.iter() {
        let g = p.grad.as_ref().unwrap_or_else(|| panic!("parameter '{name}' has no gradient"));
        assert_eq!(g.len(), p.data.len(), "parameter '{name}' gradient length mismatch");
        if !g.iter().all(|v| v.is_finite()) {
            return Err(NonFiniteGradient { name: name.clone() });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (idx, (_, p)) in params.iter_mut().enumerate() {
        let g = p.grad.as_ref().unwrap();
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for i in 0..g.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`; a norm
/// exactly at the threshold is left untouched. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut Vec<f64>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip threshold must be positive, got {max_norm}");
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Exponential decay applied in steps: rate(i) = initial * decay^floor(i / every).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial_rate: f64,
    pub decay_rate: f64,
    pub decay_every: u64,
}

impl LrSchedule {
    pub fn new(initial_rate: f64, decay_rate: f64, decay_every: u64) -> LrSchedule {
        assert!(initial_rate > 0.0, "initial rate must be positive, got {initial_rate}");
        assert!(
            decay_rate > 0.0 && decay_rate <= 1.0,
            "decay rate must lie in (0, 1], got {decay_rate}"
        );
        assert!(decay_every >= 1, "decay interval must be at least 1");
        LrSchedule { initial_rate, decay_rate, decay_every }
    }

    pub fn rate_at(&self, iteration: u64) -> f64 {
        self.initial_rate * self.decay_rate.powi((iteration / self.decay_every) as i32)
    }
}
