use super::{DiffError, Gradients, ParamStore, Tensor};

pub const DEFAULT_LR: f64 = 0.001;

/// Adam with bias correction. One moment pair per parameter of the store it
/// was created for.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Steps `store` with its gradients taken from a backward pass.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), DiffError> {
        let g = grads.for_store(store);
        self.step(store, &g)
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<(), DiffError> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(DiffError::ShapeMismatch {
                op: "adam_step",
                left: vec![self.m.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in store.values().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(DiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in store
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gd[k];
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gd[k] * gd[k];
                let m_hat = md[k] / c1;
                let v_hat = vd[k] / c2;
                pd[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
