use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DenseLayer, Gradients};

/// Adaptive moment estimation hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// When set the step moves parameters *up* the gradient (used for
    /// log-likelihood ascent); otherwise it descends.
    pub ascent: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            ascent: true,
        }
    }
}

/// Optimizer state: step count and per-parameter moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    skipped: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(layers: &[DenseLayer], config: AdamConfig) -> Self {
        let zeros = |layers: &[DenseLayer]| {
            layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            skipped: 0,
            m: zeros(layers),
            v: zeros(layers),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Number of updates skipped because of non-finite gradients.
    pub fn skipped_count(&self) -> u64 {
        self.skipped
    }

    /// Apply one update. A non-finite gradient anywhere skips the whole
    /// update (no parameter changes at all) and bumps the skip counter.
    /// Returns whether the update was applied.
    pub fn step(&mut self, layers: &mut [DenseLayer], grads: &Gradients) -> bool {
        assert_eq!(layers.len(), grads.layers.len(), "gradient layout mismatch");
        if !grads.is_finite() {
            self.skipped += 1;
            return false;
        }
        self.step += 1;
        let t = self.step as i32;
        let cfg = self.config;
        let sign = if cfg.ascent { 1.0 } else { -1.0 };
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);

        for (idx, (layer, grad)) in layers.iter_mut().zip(&grads.layers).enumerate() {
            let (mw, mb) = &mut self.m[idx];
            let (vw, vb) = &mut self.v[idx];

            ndarray::Zip::from(&mut layer.weights)
                .and(mw)
                .and(vw)
                .and(&grad.weights)
                .for_each(|w, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w += sign * cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(mb)
                .and(vb)
                .and(&grad.bias)
                .for_each(|w, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w += sign * cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                });
        }
        true
    }
}
