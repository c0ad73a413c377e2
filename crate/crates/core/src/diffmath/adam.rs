use serde::{Deserialize, Serialize};

use super::tensor::{ParamId, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per tensor of one [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        Adam {
            config,
            first: params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
            second: params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
            steps: vec![0; params.len()],
        }
    }

    /// Applies one update to every tensor that holds a gradient, then clears
    /// all gradients. Tensors without a gradient are left untouched.
    pub fn step(&mut self, params: &mut Params) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for k in 0..params.len() {
            let Some(g) = params.grad(ParamId(k)).map(<[f64]>::to_vec) else {
                continue;
            };
            self.steps[k] += 1;
            let t = self.steps[k] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let data = &mut params.get_mut(ParamId(k)).data;
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.zero_grads();
    }

    pub fn step_count(&self) -> u64 {
        self.steps.iter().copied().max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Tensor;

    fn scalar_params(v: f64) -> (Params, ParamId) {
        let mut p = Params::new();
        let id = p.add("x", Tensor::scalar(v));
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut p, id) = scalar_params(0.7);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &p,
        );
        p.accumulate_grad(id, &[0.0]);
        adam.step(&mut p);
        assert_eq!(p.get(id).data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t=1: m̂ = g, v̂ = g², so Δ = lr · g / (|g| + eps).
        let (mut p, id) = scalar_params(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, &p);
        p.accumulate_grad(id, &[1.0]);
        adam.step(&mut p);
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get(id).data[0] - expected).abs() < 1e-15);
        assert!(!p.has_grads());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let (mut p, id) = scalar_params(0.3);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            for k in 0..5 {
                p.accumulate_grad(id, &[k as f64 - 2.0]);
                adam.step(&mut p);
            }
            p.get(id).data[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
