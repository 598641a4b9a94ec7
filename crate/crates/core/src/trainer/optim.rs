use candle_core::{backprop::GradStore, Tensor};
use std::collections::BTreeMap;

use crate::denoiser::ParamStore;
use crate::error::Result;
use crate::tensor::scalar_f64;

/// Adam with decoupled weight decay and linear warm-up.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Completed updates.
    pub t: usize,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, warmup: usize, weight_decay: f64, grad_clip: f64) -> Self {
        AdamW {
            lr,
            warmup,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            grad_clip,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Learning rate for the next update.
    pub fn current_lr(&self) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * ((self.t + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }

    /// Applies one update; returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut gs: Vec<(&str, Tensor)> = Vec::with_capacity(params.len());
        let mut sq = 0.0;
        for (name, var) in params.iter() {
            let g = match grads.get(var.as_tensor()) {
                Some(g) => g.detach(),
                None => var.as_tensor().zeros_like()?,
            };
            sq += scalar_f64(&g.sqr()?.sum_all()?)?;
            gs.push((name, g));
        }
        let norm = sq.sqrt();
        let scale = if self.grad_clip > 0.0 && norm > self.grad_clip { self.grad_clip / norm } else { 1.0 };
        let lr = self.current_lr();
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in gs {
            let g = (g * scale)?;
            let var = params.var(name).expect("parameter listed by the store");
            let p = var.as_tensor();
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => p.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => p.zeros_like()?,
            };
            let m = ((m_prev * self.beta1)? + (&g * (1.0 - self.beta1))?)?.detach();
            let v = ((v_prev * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?.detach();
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.eps)?)?;
            let p = &p.detach();
            let mut next = (p - (update * lr)?)?;
            if self.weight_decay > 0.0 {
                next = (next - (p * (lr * self.weight_decay))?)?;
            }
            var.set(&next)?;
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(norm)
    }
}
