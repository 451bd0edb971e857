//! First-order update rules over any [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::lm::ParamSet;

/// Linear warmup from `lr / warmup` to `lr`, constant afterwards. Steps are 1-based.
pub fn warmup_lr(base_lr: f64, warmup_steps: usize, step: usize) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base_lr
    } else {
        base_lr * step as f64 / warmup_steps as f64
    }
}

/// Plain gradient descent: `θ ← θ − lr · g`.
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, lr: f64) {
    params.axpy(-lr, grads);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
pub struct Adam<P> {
    cfg: AdamConfig,
    m: P,
    v: P,
    t: i32,
}

impl<P: ParamSet + Clone> Adam<P> {
    pub fn new(shape_of: &P, cfg: AdamConfig) -> Self {
        let mut m = shape_of.clone();
        m.zero();
        Adam {
            cfg,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let g_arrays = grads.arrays();
        let m_arrays = self.m.arrays_mut();
        let v_arrays = self.v.arrays_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params
            .arrays_mut()
            .into_iter()
            .zip(g_arrays)
            .zip(m_arrays)
            .zip(v_arrays)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * p.data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(1.0, 4, 1), 0.25);
        assert_eq!(warmup_lr(1.0, 4, 4), 1.0);
        assert_eq!(warmup_lr(1.0, 4, 100), 1.0);
        assert_eq!(warmup_lr(0.5, 0, 1), 0.5);
    }
}
