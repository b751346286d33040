//! Adam and AdamW with bias correction. AdamW applies decoupled weight
//! decay: the decay term multiplies the parameter directly and never enters
//! the moment estimates.

use super::params::Params;
use super::Element;
use crate::error::{Error, Result};

/// Recipe defaults: Adam at 1e-4 for the tokenizer, AdamW at 6e-4 with
/// decay 0.1 and betas (0.9, 0.95) for every transformer.
pub const ADAM_LR_DEFAULT: f64 = 1e-4;
pub const ADAMW_LR_DEFAULT: f64 = 6e-4;
pub const ADAMW_WEIGHT_DECAY_DEFAULT: f64 = 0.1;
pub const ADAMW_BETAS_DEFAULT: (f64, f64) = (0.9, 0.95);
pub const EPSILON_DEFAULT: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerMode {
    Adam,
    AdamW,
}

pub struct OptimizerState<T: Element> {
    pub mode: OptimizerMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(
        mode: OptimizerMode,
        learning_rate: f64,
        weight_decay: f64,
        betas: (f64, f64),
        epsilon: f64,
        params: &Params<T>,
    ) -> Self {
        let first_moment = params.iter().map(|e| vec![T::ZERO; e.tensor.numel()]).collect();
        let second_moment = params.iter().map(|e| vec![T::ZERO; e.tensor.numel()]).collect();
        OptimizerState {
            mode,
            learning_rate,
            weight_decay,
            beta1: betas.0,
            beta2: betas.1,
            epsilon,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn adam(learning_rate: f64, params: &Params<T>) -> Self {
        Self::new(OptimizerMode::Adam, learning_rate, 0.0, (0.9, 0.999), EPSILON_DEFAULT, params)
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64, betas: (f64, f64), params: &Params<T>) -> Self {
        Self::new(OptimizerMode::AdamW, learning_rate, weight_decay, betas, EPSILON_DEFAULT, params)
    }

    /// One update over the whole parameter store. `grads` is aligned with the
    /// store's entry order; `None` entries (frozen or off-path parameters
    /// whose grads were never materialized) are skipped, except that AdamW
    /// decay still applies to trainable entries.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(format!(
                "optimizer_step: {} grads for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_minus_b1 = T::from_f64(1.0 - self.beta1);
        let one_minus_b2 = T::from_f64(1.0 - self.beta2);
        let c1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);
        let decay = T::from_f64(self.learning_rate * self.weight_decay);

        for (idx, grad) in grads.iter().enumerate() {
            let id = super::params::ParamId(idx);
            if !params.entry(id).trainable {
                continue;
            }
            let p = params.get_mut(id);
            if self.first_moment[idx].len() != p.numel() {
                return Err(Error::dim(format!(
                    "optimizer_step: moment buffer has {} elements, parameter {}",
                    self.first_moment[idx].len(),
                    p.numel()
                )));
            }
            if let Some(g) = grad {
                if g.len() != p.numel() {
                    return Err(Error::dim(format!(
                        "optimizer_step: grad length {} vs parameter {} elements",
                        g.len(),
                        p.numel()
                    )));
                }
                let m = &mut self.first_moment[idx];
                let v = &mut self.second_moment[idx];
                let data = p.data_mut();
                for i in 0..data.len() {
                    m[i] = b1 * m[i] + one_minus_b1 * g[i];
                    v[i] = b2 * v[i] + one_minus_b2 * g[i] * g[i];
                    let m_hat = m[i] * c1;
                    let v_hat = v[i] * c2;
                    let mut update = lr * m_hat / (v_hat.sqrt() + eps);
                    if self.mode == OptimizerMode::AdamW {
                        update += decay * data[i];
                    }
                    data[i] -= update;
                }
            } else if self.mode == OptimizerMode::AdamW {
                let data = p.data_mut();
                for x in data.iter_mut() {
                    *x -= decay * *x;
                }
            }
        }
        Ok(())
    }
}
