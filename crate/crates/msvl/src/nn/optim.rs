//! Bias-corrected adaptive-moment optimizer.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Per-parameter first/second moment accumulators and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Defaults: lr 1e-3, beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn with_defaults(params: &[Tensor]) -> Self {
        Self::new(params, 1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update step. Parameters, gradients, and moments are walked in
    /// index order, so the trajectory is deterministic given the state.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::InvalidInput(format!(
                "optimizer holds {} parameter slots, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::InvalidInput(format!(
                    "optimizer slot {i}: parameter shape {:?} vs gradient shape {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = md[i] / bias1;
                let v_hat = vd[i] / bias2;
                pd[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
