//! Adam optimizer and a cosine learning-rate schedule with linear warmup.

use crate::model::{ModelParams, Tensor};

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            v: params.blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            t: 0,
        }
    }

    /// Moment buffers and step counter, for train-state persistence.
    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(params: &ModelParams, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) -> Self {
        debug_assert_eq!(m.len(), params.blocks.len());
        debug_assert_eq!(v.len(), params.blocks.len());
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (b, grad) in grads.iter().enumerate() {
            let m = &mut self.m[b];
            let v = &mut self.v[b];
            let p = &mut params.blocks[b].data;
            for i in 0..grad.data.len() {
                let g = grad.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Linear warmup into a cosine decay toward `final_frac` of the peak rate.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub final_frac: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_frac: f64, final_frac: f64, total_steps: usize) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_frac).ceil() as usize;
        LrSchedule {
            peak_lr,
            final_frac,
            warmup_steps,
            total_steps: total_steps.max(1),
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps.saturating_sub(self.warmup_steps)).max(1) as f64;
        let progress = ((step - self.warmup_steps.min(step)) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        let floor = self.peak_lr * self.final_frac;
        floor + (self.peak_lr - floor) * cos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule::new(1e-3, 0.03, 0.1, 1000);
        assert!(s.lr_at(0) < s.lr_at(s.warmup_steps));
        assert!((s.lr_at(s.warmup_steps) - 1e-3).abs() < 1e-5);
        assert!(s.lr_at(999) < s.lr_at(500));
        assert!(s.lr_at(999) >= 1e-4 - 1e-9);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize sum(p^2) by feeding grads = 2p; every coordinate should
        // shrink toward zero.
        let cfg = ModelConfig {
            layers: 1,
            model_dim: 4,
            heads: 1,
            ffn_dim: 4,
            context_len: 4,
            vocab_size: 5,
        };
        let mut p = ModelParams::init(cfg, 1).unwrap();
        let before: f64 = p
            .blocks
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|x| x * x)
            .sum();
        let mut opt = Adam::new(&p);
        for _ in 0..50 {
            let grads: Vec<_> = p
                .blocks
                .iter()
                .map(|b| {
                    let mut g = crate::model::Tensor::zeros(b.name.clone(), b.rows, b.cols);
                    for (gi, xi) in g.data.iter_mut().zip(b.data.iter()) {
                        *gi = 2.0 * xi;
                    }
                    g
                })
                .collect();
            opt.step(&mut p, &grads, 1e-2);
        }
        let after: f64 = p
            .blocks
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|x| x * x)
            .sum();
        assert!(after < before * 0.5, "{after} vs {before}");
    }
}
