//! Adam with bias-corrected moment estimates.
//!
//! One update, for every scalar `w` with gradient `g`:
//!
//! ```text
//! t  <- t + 1
//! m  <- b1 * m + (1 - b1) * g
//! v  <- b2 * v + (1 - b2) * g^2
//! w  <- w - alpha * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```
//!
//! `eps` is added outside the square root. No clipping, no schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { alpha: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let m: Vec<_> = params.iter().map(Tensor::zeros_like).collect();
        Self { config, t: 0, v: m.clone(), m }
    }

    /// Apply one update in place. Nothing is modified if validation fails.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], names: &[String]) -> Result<()> {
        self.config.validate()?;
        let n = params.len();
        if grads.len() != n || self.m.len() != n || self.v.len() != n {
            return Err(Error::Shape(format!(
                "Adam got {n} parameters, {} gradients, {} moment tensors",
                grads.len(),
                self.m.len()
            )));
        }
        let label = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("parameter #{i}"));
        for (i, ((p, g), (m, v))) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)).enumerate() {
            g.expect_shape(p.shape(), &format!("gradient of {}", label(i)))?;
            m.expect_shape(p.shape(), &format!("first moment of {}", label(i)))?;
            v.expect_shape(p.shape(), &format!("second moment of {}", label(i)))?;
            if !g.all_finite() {
                return Err(Error::NonFinite { what: format!("gradient of {}", label(i)) });
            }
        }

        self.t += 1;
        let c = &self.config;
        let t = self.t as f64;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one_m_b1 = T::one() - b1;
        let one_m_b2 = T::one() - b2;
        let bc1 = T::lit(1.0 - c.beta1.powf(t));
        let bc2 = T::lit(1.0 - c.beta2.powf(t));
        let alpha = T::lit(c.alpha);
        let eps = T::lit(c.epsilon);

        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &g), (m, v)) in iter {
                *m = b1 * *m + one_m_b1 * g;
                *v = b2 * *v + one_m_b2 * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w = *w - alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
