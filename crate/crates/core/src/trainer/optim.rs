//! Adam with decoupled weight decay, linear warmup and cosine decay.

use std::f64::consts::PI;

use crate::model::{ModelParams, TubeVit};
use crate::scalar::Scalar;
use crate::trainer::TrainConfig;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate for zero-based `step`: linear warmup to `lr`, then cosine
/// decay to zero at `steps` (or constant when decay is off).
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    if !cfg.cosine_decay || cfg.steps <= cfg.warmup_steps {
        return cfg.lr;
    }
    let span = (cfg.steps - cfg.warmup_steps) as f64;
    let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
    0.5 * cfg.lr * (1.0 + (PI * progress).cos())
}

/// First and second moments, one buffer per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let m: Vec<Vec<T>> = params
            .arrays()
            .iter()
            .map(|(_, a)| vec![T::zero(); a.len()])
            .collect();
        Self { v: m.clone(), m }
    }

    /// Applies update number `t` (one-based) to every trainable parameter.
    /// Frozen parameters and their moments are left untouched.
    pub fn update(
        &mut self,
        model: &mut TubeVit<T>,
        grads: &ModelParams<T>,
        t: usize,
        lr: f64,
        weight_decay: f64,
    ) {
        if lr == 0.0 {
            return;
        }
        let (b1, b2) = (T::c(BETA1), T::c(BETA2));
        let c1 = T::c(1.0 - BETA1.powi(t as i32));
        let c2 = T::c(1.0 - BETA2.powi(t as i32));
        let (eps, lr_t, wd) = (T::c(ADAM_EPS), T::c(lr), T::c(lr * weight_decay));
        let frozen: Vec<bool> = model
            .params
            .arrays()
            .iter()
            .map(|(id, _)| model.is_frozen(id))
            .collect();
        let params = model.params.arrays_mut();
        for (k, ((id, p), (_, g))) in params.into_iter().zip(grads.arrays()).enumerate() {
            if frozen[k] {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let step = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                if id.decay {
                    p[i] = p[i] - wd * p[i];
                }
                p[i] = p[i] - lr_t * step;
            }
        }
    }
}
