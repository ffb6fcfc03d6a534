use serde::{Deserialize, Serialize};

use super::{cast, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>, lr: f64) {
    assert_eq!(params.len(), grads.len());
    state.step += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let step_size: T = cast(lr / (1.0 - beta1.powi(t)));
    let v_corr: T = cast(1.0 / (1.0 - beta2.powi(t)));
    let (b1, b2, eps): (T, T, T) = (cast(beta1), cast(beta2), cast(epsilon));
    let (one_b1, one_b2): (T, T) = (cast(1.0 - beta1), cast(1.0 - beta2));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            *w = *w - step_size * *mv / ((*vv * v_corr).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-6,
            min_delta: 1e-4,
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored accuracy has
/// not improved by more than `min_delta` for `patience` epochs. After a
/// reduction the next epoch sets a fresh baseline.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    lr: f64,
    best: Option<f64>,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        assert!(config.factor > 0.0 && config.factor < 1.0, "factor must lie in (0, 1)");
        assert!(config.patience >= 1, "patience must be at least 1");
        Self {
            config,
            lr,
            best: None,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's monitored value and returns the learning rate for
    /// the next epoch.
    pub fn step(&mut self, value: f64) -> f64 {
        match self.best {
            Some(b) if value <= b + self.config.min_delta => {
                self.wait += 1;
                if self.wait >= self.config.patience {
                    self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                    self.wait = 0;
                    self.best = None;
                }
            }
            _ => {
                self.best = Some(value);
                self.wait = 0;
            }
        }
        self.lr
    }
}
