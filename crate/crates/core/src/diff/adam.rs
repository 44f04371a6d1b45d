use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction; moment buffers follow the store's layout.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    /// One update using the gradients currently held by `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if let Some(&missing) = ids.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(Error::MissingGrad(store.name(missing).to_string()));
        }
        if self.m.len() != ids.len() {
            self.m = ids.iter().map(|&id| vec![0.0; store.value(id).numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (slot, &id) in ids.iter().enumerate() {
            let grad = store.grad(id).expect("checked above").to_vec();
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            let value = &mut store.value_mut(id).values;
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
