use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub lr_init: f64,
    pub lr_gamma: f64,
    pub milestones: Vec<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            nesterov: true,
            weight_decay: 4e-5,
            lr_init: 0.01,
            lr_gamma: 0.1,
            milestones: vec![200, 300],
            max_epochs: 400,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// `lr_init·γ^k` where `k` counts the milestones at or before `epoch`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.milestones.iter().filter(|&&m| epoch >= m).fold(cfg.lr_init, |lr, _| lr * cfg.lr_gamma)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(store: &ParamStore) -> Self {
        Self { velocity: store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect() }
    }
}

/// One SGD step. With `d = g + wd·θ` (decay on conv/FC weights only):
/// `v ← μv + d`, then `θ ← θ − lr·(d + μv)` (Nesterov) or `θ ← θ − lr·v`.
pub fn sgd_step(store: &mut ParamStore, grads: &[Tensor], state: &mut SgdState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != store.len() || state.velocity.len() != store.len() {
        return dim_err(format!("{} gradients and {} velocities for {} parameters", grads.len(), state.velocity.len(), store.len()));
    }
    for (k, (g, v)) in grads.iter().zip(state.velocity.iter_mut()).enumerate() {
        let id = crate::params::ParamId(k);
        let decay = if store.entry(id).kind.decays() { cfg.weight_decay } else { 0.0 };
        let theta = store.get_mut(id);
        if g.shape() != theta.shape() || v.shape() != theta.shape() {
            return dim_err(format!("gradient {:?} for parameter {:?}", g.shape(), theta.shape()));
        }
        for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let d = gi + decay * *t;
            *vi = cfg.momentum * *vi + d;
            let step = if cfg.nesterov { d + cfg.momentum * *vi } else { *vi };
            *t -= lr * step;
        }
    }
    Ok(())
}
