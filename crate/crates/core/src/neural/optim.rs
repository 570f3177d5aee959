//! Adam with bias correction and a linear-warmup cosine-decay schedule.

use crate::error::{Error, Result};
use crate::mat::Scalar;
use crate::neural::params::ParamBlockMut;

/// Learning-rate multiplier in [0, 1].
///
/// Rises linearly from 0 over the first `round(warmup_ratio * total_steps)`
/// steps, then follows 0.5 * (1 + cos(pi * progress)) down to 0 at
/// `total_steps`. The two pieces meet at exactly 1.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_ratio: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    if step >= total_steps {
        return 0.0;
    }
    let warmup = (warmup_ratio.clamp(0.0, 1.0) * total_steps as f64).round() as usize;
    if step < warmup {
        return step as f64 / warmup as f64;
    }
    if total_steps == warmup {
        return 1.0;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl AdamConfig {
    pub fn new(base_lr: f64, warmup_ratio: f64, total_steps: usize) -> Self {
        AdamConfig {
            base_lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_ratio,
            total_steps,
        }
    }
}

/// First and second moment state for one parameter block.
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

pub struct Adam<T> {
    pub config: AdamConfig,
    step: usize,
    moments: Vec<Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update to every block and returns the schedule multiplier
    /// that was in effect. Blocks must arrive in the same order every call.
    pub fn step(&mut self, blocks: &mut [ParamBlockMut<'_, T>]) -> Result<f64> {
        if self.moments.is_empty() {
            self.moments = blocks
                .iter()
                .map(|b| Moments {
                    m: vec![T::zero(); b.value.len()],
                    v: vec![T::zero(); b.value.len()],
                })
                .collect();
        }
        if self.moments.len() != blocks.len() {
            return Err(Error::ShapeMismatch {
                op: "adam step",
                detail: format!(
                    "optimizer tracks {} blocks but {} were supplied",
                    self.moments.len(),
                    blocks.len()
                ),
            });
        }

        let multiplier = lr_schedule(self.step, self.config.total_steps, self.config.warmup_ratio);
        let t = (self.step + 1) as i32;
        let lr = T::from_f64_lossy(self.config.base_lr * multiplier);
        let beta1 = T::from_f64_lossy(self.config.beta1);
        let beta2 = T::from_f64_lossy(self.config.beta2);
        let eps = T::from_f64_lossy(self.config.epsilon);
        let bias1 = T::from_f64_lossy(1.0 - self.config.beta1.powi(t));
        let bias2 = T::from_f64_lossy(1.0 - self.config.beta2.powi(t));
        let one = T::one();

        for (block, state) in blocks.iter_mut().zip(&mut self.moments) {
            if block.value.len() != state.m.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam step",
                    detail: format!(
                        "block '{}' changed size: {} vs {}",
                        block.name,
                        block.value.len(),
                        state.m.len()
                    ),
                });
            }
            for &g in block.grad.iter() {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(block.name.clone()));
                }
            }
            for i in 0..block.value.len() {
                let g = block.grad[i];
                state.m[i] = beta1 * state.m[i] + (one - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (one - beta2) * g * g;
                let m_hat = state.m[i] / bias1;
                let v_hat = state.v[i] / bias2;
                block.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }

        self.step += 1;
        Ok(multiplier)
    }
}
