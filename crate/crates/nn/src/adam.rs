use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{NnError, Result};
use crate::graph::Gradients;
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Validation(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction. Moments are kept in f64 regardless of the
/// parameter element type.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in `store`. Parameters without
    /// a gradient are treated as having a zero gradient.
    pub fn step<T: Element>(&mut self, store: &mut ParamStore<T>, bound: &Bound, grads: &Gradients<T>) -> Result<()> {
        if bound.vars().len() != store.len() {
            return Err(NnError::Validation("bound handles do not match the parameter store".into()));
        }
        if self.m.is_empty() {
            let sizes: Vec<usize> = store.iter().map(|(_, _, t)| t.numel()).collect();
            self.m = sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let var = bound.var(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let grad = grads.get(var);
            let param = store.get_mut(id);
            if m.len() != param.numel() {
                return Err(NnError::Validation("parameter store changed between Adam steps".into()));
            }
            for (i, p) in param.data_mut().iter_mut().enumerate() {
                let g = grad.map_or(0.0, |g| g.data()[i].as_f64());
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *p = T::from_f64_lossy(p.as_f64() - update);
            }
        }
        Ok(())
    }
}
