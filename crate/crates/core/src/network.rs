//! Executable networks built from a resolved [`Plan`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{NetworkSpec, Plan, PlanLayer};
use crate::blocks::{AntBlock, ConvUnit, Ctx, EAntBlock, InvertedResidual};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::Mode;
use crate::params::{fc_normal, ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvUnit),
    Ant(AntBlock),
    EAnt(EAntBlock),
    InvRes(InvertedResidual),
    Pool { name: String },
    Fc { name: String, weight: ParamId, bias: ParamId },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(u) => &u.name,
            Layer::Ant(b) => &b.name,
            Layer::EAnt(b) => &b.name,
            Layer::InvRes(b) => &b.name,
            Layer::Pool { name } | Layer::Fc { name, .. } => name,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        match self {
            Layer::Conv(u) => u.forward(ctx, x),
            Layer::Ant(b) => b.forward(ctx, x),
            Layer::EAnt(b) => b.forward(ctx, x),
            Layer::InvRes(b) => b.forward(ctx, x),
            Layer::Pool { name } => {
                ctx.graph.set_scope(name);
                let p = ctx.graph.global_avg_pool(x)?;
                ctx.graph.flatten(p)
            }
            Layer::Fc { name, weight, bias } => {
                ctx.graph.set_scope(name);
                let (w, b) = (ctx.p(*weight), ctx.p(*bias));
                ctx.graph.linear(x, w, Some(b))
            }
        }
    }
}

/// A network with its parameters. Parameter order is the declaration order
/// of the layers, which is also the checkpoint order.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub plan: Plan,
    pub layers: Vec<Layer>,
    pub store: ParamStore,
}

fn in_stage(name: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("stage '{name}': {m}")),
        Error::Dimension(m) => Error::Dimension(format!("stage '{name}': {m}")),
        other => other,
    }
}

/// Instantiates `spec` with weights drawn from a ChaCha8 stream seeded by
/// `seed`. The same seed always yields identical parameters.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let plan = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    let bn = spec.options.batch_norm;
    for stage in &plan.stages {
        for layer in &stage.layers {
            let built = match layer {
                PlanLayer::Conv { name, spec, .. } => ConvUnit::new(name, *spec, bn, true, &mut store, &mut rng).map(Layer::Conv),
                PlanLayer::Ant { name, cfg, .. } => AntBlock::new(name, *cfg, &mut store, &mut rng).map(Layer::Ant),
                PlanLayer::EAnt { name, configs, share_trunk, .. } => {
                    EAntBlock::new(name, configs, *share_trunk, &mut store, &mut rng).map(Layer::EAnt)
                }
                PlanLayer::InvRes { name, cfg, .. } => InvertedResidual::new(name, *cfg, &mut store, &mut rng).map(Layer::InvRes),
                PlanLayer::Pool { name, .. } => Ok(Layer::Pool { name: name.clone() }),
                PlanLayer::Fc { name, in_features, out_features } => {
                    let weight =
                        store.push(format!("{name}.weight"), ParamKind::FcWeight, fc_normal(*out_features, *in_features, &mut rng));
                    let bias = store.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[*out_features]));
                    Ok(Layer::Fc { name: name.clone(), weight, bias })
                }
            };
            layers.push(built.map_err(|e| in_stage(&stage.stage.name, e))?);
        }
    }
    Ok(Network { spec: spec.clone(), plan, layers, store })
}

impl Network {
    /// Records the forward pass of `x` (`[N, C, H, W]`) into `graph` and
    /// returns the logits `[N, classes]` together with the bound parameters.
    pub fn forward(&mut self, graph: &mut Graph, x: &Tensor, mode: Mode) -> Result<(Var, crate::params::Bound)> {
        let [c, h, w] = self.spec.input_shape;
        let (_, xc, xh, xw) = x.dims4()?;
        if (xc, xh, xw) != (c, h, w) {
            return Err(Error::Dimension(format!("network '{}' expects [N, {c}, {h}, {w}] input, got {:?}", self.spec.name, x.shape())));
        }
        let bound = self.store.bind(graph);
        let (entries, stats) = (&self.layers, self.store.stats_mut());
        let mut ctx = Ctx { graph, bound: &bound, stats, mode };
        ctx.graph.set_scope("input");
        let mut v = ctx.graph.input(x.clone());
        for layer in entries {
            v = layer.forward(&mut ctx, v)?;
        }
        Ok((v, bound))
    }

    /// Eval-mode logits without keeping the graph around.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut graph = Graph::new();
        let (y, _) = self.forward(&mut graph, x, Mode::Eval)?;
        Ok(graph.value(y).clone())
    }

    /// Total multiply-accumulates of one forward pass over a batch of one,
    /// counted as the graph executes.
    pub fn counted_macs(&mut self) -> Result<u64> {
        let [c, h, w] = self.spec.input_shape;
        let mut graph = Graph::new().with_mac_counting();
        let x = Tensor::zeros(&[1, c, h, w]);
        self.forward(&mut graph, &x, Mode::Eval)?;
        Ok(graph.macs())
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }
}
