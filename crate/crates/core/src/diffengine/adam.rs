use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid ADAM settings {self:?}")))
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor<F>> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Ok(Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update from the store's gradient buffers,
    /// then clamps nonnegative parameters at zero.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        if !store.grads_ready() {
            return Err(Error::UninitializedGradients);
        }
        if store.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = F::lit(1.0 - c.beta2.powf(self.step as f64));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.epsilon);
        for i in 0..store.len() {
            let p = store.by_index_mut(i);
            if p.value.shape() != self.first[i].shape() {
                return Err(Error::Shape(format!(
                    "moment shape {:?} differs from parameter {:?}",
                    self.first[i].shape(),
                    p.value.shape()
                )));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let grad = p.grad.data();
            let nonneg = p.nonneg;
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                if nonneg && *w < F::zero() {
                    *w = F::zero();
                }
            }
        }
        for (name, p) in store.iter() {
            if !p.value.is_finite() {
                return Err(Error::NumericFailure {
                    tensor: name.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// One optimizer step; see [`AdamState::step`].
pub fn adam_step<F: Real>(store: &mut ParamStore<F>, state: &mut AdamState<F>) -> Result<()> {
    state.step(store)
}
