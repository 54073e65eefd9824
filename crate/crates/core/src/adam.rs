//! Adam with bias correction.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    /// Zeroed moment accumulators mirroring `params`.
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if !(self.config.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(alloc::format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(alloc::format!(
                    "parameter {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            g.ensure_finite("gradient")?;
        }

        self.step += 1;
        let t = self.step as f64;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let one = T::one();
        let correction1 = T::of(1.0 - self.config.beta1.powf(t));
        let correction2 = T::of(1.0 - self.config.beta2.powf(t));
        let lr = T::of(self.config.learning_rate);
        let eps = T::of(self.config.epsilon);

        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / correction1;
                let v_hat = *vv / correction2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
