use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Parameters};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Adam with bias correction; moment buffers are created lazily to match
/// the parameters' trainable layout.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut Parameters<T>, grads: &Gradients<T>) -> Result<()> {
        let gs = grads.trainable();
        let mut ps = params.trainable_mut();
        if gs.len() != ps.len() || gs.iter().zip(&ps).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::ShapeMismatch("gradients not congruent to parameters".into()));
        }
        if self.first.is_empty() {
            self.first = ps.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let eps = T::lit(self.cfg.epsilon);
        let one = T::one();
        let c1 = one - b1.powi(self.step);
        let c2 = one - b2.powi(self.step);
        let lr = T::lit(self.cfg.learning_rate) * c2.sqrt() / c1;
        for (((p, g), m), v) in ps
            .iter_mut()
            .zip(gs)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                p[i] -= lr * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}
