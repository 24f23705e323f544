use super::params::{ParamId, ParamStore};
use super::tape::{Gradients, Tape};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update using the gradients of every parameter loaded on `tape`.
    /// Parameters that were not used in the forward pass are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, tape: &Tape, grads: &Gradients) {
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let mut used: Vec<_> = tape.param_vars().collect();
        used.sort_by_key(|&(id, _)| id);
        for (id, var) in used {
            if !store.trainable(id) {
                continue;
            }
            let Some(g) = grads.get(var) else { continue };
            self.update(store, id, g, bc1, bc2);
        }
    }

    fn update(&mut self, store: &mut ParamStore, id: ParamId, g: &[f64], bc1: f64, bc2: f64) {
        let i = id.index();
        let w = store.value_mut(id).values_mut();
        if self.m[i].is_empty() {
            self.m[i] = vec![0.0; w.len()];
            self.v[i] = vec![0.0; w.len()];
        }
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for j in 0..w.len() {
            m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
            v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            w[j] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
