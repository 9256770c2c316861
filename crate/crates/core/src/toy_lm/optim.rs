//! AdamW with global gradient-norm clipping and a warmup/cosine schedule.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::{OptimConfig, ToyModel};
use crate::Real;

/// Learning rate at `step` (0-based) of `total`: linear warmup, then cosine
/// decay to a tenth of the peak.
pub fn lr_at(cfg: &OptimConfig, step: usize, total: usize) -> f64 {
    if cfg.warmup > 0 && step < cfg.warmup {
        return cfg.lr * (step + 1) as f64 / cfg.warmup as f64;
    }
    let span = total.saturating_sub(cfg.warmup).max(1) as f64;
    let progress = ((step - cfg.warmup.min(step)) as f64 / span).min(1.0);
    let floor = 0.1 * cfg.lr;
    floor + (cfg.lr - floor) * 0.5 * (1.0 + (core::f64::consts::PI * progress).cos())
}

/// Global L2 norm over every gradient entry, accumulated in `f64`.
pub fn grad_norm<T: Real>(grads: &ToyModel<T>) -> f64 {
    grads
        .params()
        .iter()
        .flat_map(|p| p.data.iter())
        .map(|g| {
            let g = Real::to_f64(*g);
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    cfg: OptimConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> AdamW<T> {
    pub fn new(cfg: OptimConfig, model: &ToyModel<T>) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.data.len()).collect();
        Self {
            cfg,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    /// Clips `grads` to the configured global norm, applies one update at
    /// learning rate `lr`, and returns the pre-clip gradient norm.
    pub fn step(&mut self, model: &mut ToyModel<T>, grads: &ToyModel<T>, lr: f64) -> f64 {
        let norm = grad_norm(grads);
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let (b1t, b2t, clip_t) = (T::of(b1), T::of(b2), T::of(clip));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.cfg.eps);
        let decay = T::of(1.0 - lr * self.cfg.weight_decay);
        let grads = grads.params();
        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * clip_t;
                *m = b1t * *m + (T::one() - b1t) * g;
                *v = b2t * *v + (T::one() - b2t) * g * g;
                if p.decay {
                    *w *= decay;
                }
                *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_lm::{gradcheck_config, PositionMode};

    #[test]
    fn schedule_shape() {
        let cfg = OptimConfig {
            warmup: 10,
            ..OptimConfig::default()
        };
        assert!((lr_at(&cfg, 0, 100) - cfg.lr / 10.0).abs() < 1e-15);
        assert!((lr_at(&cfg, 9, 100) - cfg.lr).abs() < 1e-15);
        assert!((lr_at(&cfg, 10, 100) - cfg.lr).abs() < 1e-15);
        assert!((lr_at(&cfg, 100, 100) - 0.1 * cfg.lr).abs() < 1e-15);
        assert!(lr_at(&cfg, 50, 100) < cfg.lr && lr_at(&cfg, 50, 100) > 0.1 * cfg.lr);
    }

    #[test]
    fn first_step_moves_each_entry_by_lr() {
        // With bias correction the first Adam step is lr * sign(g).
        let cfg = gradcheck_config(PositionMode::Goat, 3);
        let model = ToyModel::<f64>::init(&cfg).unwrap();
        let mut grads = model.zeros_like();
        for p in grads.params_mut() {
            p.data.iter_mut().for_each(|g| *g = -1e-3);
        }
        let opt_cfg = OptimConfig {
            weight_decay: 0.0,
            eps: 1e-12,
            clip_norm: 0.0,
            ..OptimConfig::default()
        };
        let mut opt = AdamW::new(opt_cfg, &model);
        let mut next = model.clone();
        opt.step(&mut next, &grads, 0.01);
        for (a, b) in model.params().iter().zip(next.params()) {
            for (x, y) in a.data.iter().zip(b.data) {
                assert!((y - x - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let cfg = gradcheck_config(PositionMode::KeyLinear, 0);
        let model = ToyModel::<f64>::init(&cfg).unwrap();
        let mut grads = model.zeros_like();
        for p in grads.params_mut() {
            p.data.iter_mut().for_each(|g| *g = 1.0);
        }
        let n = grad_norm(&grads);
        assert!((n - (model.param_count() as f64).sqrt()).abs() < 1e-9);
        let mut opt = AdamW::new(OptimConfig::default(), &model);
        let mut next = model.clone();
        assert_eq!(opt.step(&mut next, &grads, 1e-3), n);
    }
}
