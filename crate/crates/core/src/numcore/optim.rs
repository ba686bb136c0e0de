use serde::{Deserialize, Serialize};

use super::{GradStore, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Moment buffers; empty for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = || -> Vec<Vec<f64>> {
            match config {
                OptimizerConfig::Sgd { .. } => Vec::new(),
                OptimizerConfig::Adam { .. } => {
                    store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect()
                }
            }
        };
        Self {
            config,
            state: OptimizerState {
                step: 0,
                first_moment: zeros(),
                second_moment: zeros(),
            },
        }
    }

    pub fn with_state(config: OptimizerConfig, state: OptimizerState, store: &ParamStore) -> Result<Self> {
        let fresh = Self::new(config, store);
        let aligned = state.first_moment.len() == fresh.state.first_moment.len()
            && state
                .first_moment
                .iter()
                .zip(&fresh.state.first_moment)
                .all(|(a, b)| a.len() == b.len())
            && state.second_moment.len() == state.first_moment.len();
        if !aligned {
            return Err(Error::Contract("optimizer state does not match the parameter store".into()));
        }
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Applies one update. Fails before touching any parameter if a gradient
    /// is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract("gradient store does not match parameter store".into()));
        }
        for id in store.ids() {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: store.get(id).name.clone(),
                });
            }
        }
        self.state.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for id in store.ids().collect::<Vec<_>>() {
                    let g = grads.get(id);
                    for (p, gi) in store.value_mut(id).data_mut().iter_mut().zip(g) {
                        *p -= lr * gi;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let t = self.state.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for id in store.ids().collect::<Vec<_>>() {
                    let g = grads.get(id);
                    let m = &mut self.state.first_moment[id.index()];
                    let v = &mut self.state.second_moment[id.index()];
                    let data = store.value_mut(id).data_mut();
                    for i in 0..data.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
