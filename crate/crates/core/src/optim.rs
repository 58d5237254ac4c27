//! AdamW with decoupled weight decay and a linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Fraction of total steps spent ramping the learning rate up from zero.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 3e-5,
            warmup_fraction: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 5,
            batch_size: 128,
            grad_clip_norm: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::argument("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::argument("warmup_fraction must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::argument("beta1 and beta2 must be in [0, 1)"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::argument("grad_clip_norm must be positive"));
            }
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        (self.warmup_fraction * total_steps as f64).ceil() as u64
    }
}

/// Learning rate for 0-based `step`: linear ramp from 0 to the peak over the
/// warmup steps, then linear decay to 0 at `total_steps`.
pub fn lr_at(opt: &OptimizerConfig, step: u64, total_steps: u64) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    let warm = opt.warmup_steps(total).min(total);
    if step < warm {
        opt.learning_rate * step as f64 / warm as f64
    } else if warm == total {
        opt.learning_rate
    } else {
        opt.learning_rate * (total - step) as f64 / (total - warm) as f64
    }
}

/// First and second moment estimates for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn for_shapes<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One AdamW update. `decay[i]` selects which tensors receive weight decay.
    pub fn update(
        &mut self,
        opt: &OptimizerConfig,
        lr: f64,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        decay: &[bool],
    ) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - opt.beta1.powi(self.t as i32);
        let bc2 = 1.0 - opt.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let wd = if decay[i] { opt.weight_decay } else { 0.0 };
            let (m, v, g) = (&mut self.m[i].data, &mut self.v[i].data, &grads[i].data);
            for j in 0..p.data.len() {
                let gj = g[j];
                m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
                v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let x = &mut p.data[j];
                *x -= lr * wd * *x;
                *x -= lr * mhat / (vhat.sqrt() + opt.epsilon);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|t| t.sum_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let c = max_norm / norm;
        for t in grads.iter_mut() {
            t.data.iter_mut().for_each(|x| *x *= c);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt() -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: 0.1,
            warmup_fraction: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let o = opt();
        assert_eq!(lr_at(&o, 0, 100), 0.0);
        assert_eq!(lr_at(&o, 10, 100), 0.1);
        assert_eq!(lr_at(&o, 100, 100), 0.0);
        assert!((lr_at(&o, 5, 100) - 0.05).abs() < 1e-15);
        assert!((lr_at(&o, 55, 100) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn schedule_without_warmup() {
        let o = OptimizerConfig {
            warmup_fraction: 0.0,
            ..opt()
        };
        assert_eq!(lr_at(&o, 0, 10), 0.1);
        assert_eq!(lr_at(&o, 10, 10), 0.0);
    }

    #[test]
    fn zero_lr_leaves_params_untouched() {
        let mut p = Tensor {
            shape: vec![3],
            data: vec![1.0, -2.0, 3.0],
        };
        let g = Tensor {
            shape: vec![3],
            data: vec![0.5, 0.5, -0.5],
        };
        let before = p.clone();
        let mut st = AdamState::for_shapes([p.shape.as_slice()]);
        st.update(&opt(), 0.0, &mut [&mut p], &[&g], &[true]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor {
            shape: vec![2],
            data: vec![0.0, 0.0],
        };
        let g = Tensor {
            shape: vec![2],
            data: vec![3.0, -0.2],
        };
        let mut st = AdamState::for_shapes([p.shape.as_slice()]);
        st.update(&opt(), 0.01, &mut [&mut p], &[&g], &[false]);
        assert!((p.data[0] + 0.01).abs() < 1e-8);
        assert!((p.data[1] - 0.01).abs() < 1e-7);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut a = Tensor {
            shape: vec![2],
            data: vec![3.0, 4.0],
        };
        let pre = clip_global_norm(&mut [&mut a], 1.0);
        assert_eq!(pre, 5.0);
        assert!((a.sum_sq().sqrt() - 1.0).abs() < 1e-15);
        let pre = clip_global_norm(&mut [&mut a], 2.0);
        assert!((pre - 1.0).abs() < 1e-15);
        assert!((a.sum_sq().sqrt() - 1.0).abs() < 1e-15);
    }
}
