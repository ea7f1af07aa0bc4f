//! Explicit mutable parameter store shared by every model in the toolkit.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, Var};
use crate::ops::RunningStats;
use crate::tensor::Tensor;

/// Index of a parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Index of a normalization layer's running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatsId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    FcWeight,
    Bias,
    BnGamma,
    BnBeta,
    /// Ensemble logits λ.
    Logits,
}

impl ParamKind {
    /// Weight decay applies to convolution and fully connected weights only.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::FcWeight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Parameters in declaration order plus normalization running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    stats: Vec<RunningStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn push_stats(&mut self, channels: usize) -> StatsId {
        self.stats.push(RunningStats::new(channels));
        StatsId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Records every parameter as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound { vars: self.entries.iter().map(|e| graph.param(e.value.clone())).collect() }
    }

    /// Replaces parameter values and statistics with those of `other`,
    /// which must have identical names and shapes.
    pub fn load_from(&mut self, other: ParamStore) -> crate::Result<()> {
        let same_layout = self.entries.len() == other.entries.len()
            && self.stats.len() == other.stats.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
            && self.stats.iter().zip(&other.stats).all(|(a, b)| a.mean.len() == b.mean.len());
        if !same_layout {
            return Err(crate::Error::Config("parameter layout differs from the model".into()));
        }
        *self = other;
        Ok(())
    }
}

/// Graph variables for each parameter of a [`ParamStore`], same order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Kaiming normal with fan-out `Cout·K·K`.
pub fn kaiming_fan_out<R: Rng + ?Sized>(shape: &[usize; 4], rng: &mut R) -> Tensor {
    let fan_out = (shape[0] * shape[2] * shape[3]) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

/// `N(0, 1/fan_in)` for fully connected weights `[Cout, Cin]`.
pub fn fc_normal<R: Rng + ?Sized>(cout: usize, cin: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).expect("finite std");
    Tensor::from_fn(&[cout, cin], |_| normal.sample(rng))
}
