//! Adam optimizer with bias-corrected first and second moments.

use super::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update. `grads[i]` must match `params[i]` in shape; a missing
    /// gradient (parameter unused by the loss) leaves that parameter alone.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [&mut Tensor],
        grads: &[Option<Tensor>],
    ) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter count");
        assert_eq!(params.len(), grads.len(), "gradient/parameter count");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(g) = g else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
                let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::row(&[1.0, -2.0, 3.0]);
        let orig = p.clone();
        let mut state = AdamState::new(&[&p]);
        let cfg = AdamConfig::default();
        for _ in 0..50 {
            let g = Some(Tensor::zeros(1, 3));
            state.step(&cfg, &mut [&mut p], &[g]).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new(&[&p]);
        let cfg = AdamConfig::default();
        let g = Some(Tensor::scalar(3.7));
        state.step(&cfg, &mut [&mut p], &[g]).unwrap();
        // bias-corrected m/sqrt(v) is sign(g) at t=1
        assert!((p.data()[0].abs() - cfg.lr).abs() < 1e-6, "step {}", p.data()[0]);
        assert!(p.data()[0] < 0.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(theta) = ||theta||^2, grad = 2 theta
        let mut p = Tensor::row(&[1.0, -0.5, 0.25, 0.8]);
        let mut state = AdamState::new(&[&p]);
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let g = Tensor::row(&p.data().iter().map(|v| 2.0 * v).collect::<Vec<_>>());
            state.step(&cfg, &mut [&mut p], &[Some(g)]).unwrap();
        }
        let norm = p.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm after descent: {norm}");
    }
}
