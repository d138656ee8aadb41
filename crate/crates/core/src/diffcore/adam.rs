use super::array::Array;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Bias-corrected Adam over every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
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

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients stored in `params`, then
    /// clears them. A parameter without a gradient is treated as having a
    /// zero gradient (its moments still decay).
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.m.len() != params.len() {
            self.m = params.ids().map(|id| Array::zeros(params.value(id).shape())).collect();
            self.v = self.m.clone();
        }
        for id in params.ids() {
            if let Some(i) = params.grad(id).and_then(Array::first_non_finite) {
                return Err(Error::NonFinite {
                    module: "diffcore",
                    what: format!("gradient of `{}`", params.name(id)),
                    index: i,
                });
            }
        }
        self.step = self
            .step
            .checked_add(1)
            .ok_or_else(|| Error::invalid("diffcore", "Adam step counter overflow"))?;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let grad = params.take_grad(id);
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = params.value_mut(id).data_mut();
            match grad {
                Some(g) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
                        *m *= b1;
                        *v *= b2;
                        if *m != 0.0 {
                            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                        }
                    }
                }
            }
        }
        params.zero_grads();
        Ok(())
    }
}
