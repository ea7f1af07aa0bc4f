//! ANTBlock, its attention-placement variants, the inverted-residual
//! baseline and the e-ANTBlock ensemble.
//!
//! An ANTBlock computes `x̃ = x + H(M(G(x)) ⊙ G(x))` where `G` is the
//! expansion + depthwise stage, `M` the channel-attention mask and `H` the
//! linear group-wise 1×1 projection. The residual is only present when the
//! stride is 1 and the channel count is preserved.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::graph::{Graph, Var};
use crate::ops::{Mode, RunningStats};
use crate::params::{fc_normal, kaiming_fan_out, Bound, ParamId, ParamKind, ParamStore, StatsId};
use crate::tensor::{ConvSpec, Tensor};

pub const DEPTHWISE_KERNEL: usize = 3;

/// Where the channel-attention unit sits inside the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Between the depthwise and projection layers (ANTBlock).
    #[default]
    Between,
    /// On the block input, before expansion (c-ANTNet).
    BeforeExpansion,
    /// On the projection output, before the residual add (ANTNet-c).
    AfterProjection,
    /// No attention: plain inverted residual.
    None,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Between => "between",
            Placement::BeforeExpansion => "before_expansion",
            Placement::AfterProjection => "after_projection",
            Placement::None => "none",
        }
    }
}

/// Nonlinearity between the two attention FC layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterFc {
    #[default]
    Relu,
    None,
}

/// Switches shared by every block of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockOptions {
    pub attention_activation: InterFc,
    pub attention_bias: bool,
    pub batch_norm: bool,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self { attention_activation: InterFc::Relu, attention_bias: true, batch_norm: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
    pub groups: usize,
    pub reduction: usize,
    pub placement: Placement,
    /// Keep the 1×1 expansion layer when `expansion == 1`.
    pub expand_unit: bool,
    pub options: BlockOptions,
}

impl BlockConfig {
    pub fn new(in_channels: usize, out_channels: usize, expansion: usize, stride: usize, groups: usize, reduction: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            expansion,
            stride,
            groups,
            reduction,
            placement: Placement::Between,
            expand_unit: true,
            options: BlockOptions::default(),
        }
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_expand_unit(mut self, expand_unit: bool) -> Self {
        self.expand_unit = expand_unit;
        self
    }

    pub fn with_options(mut self, options: BlockOptions) -> Self {
        self.options = options;
        self
    }

    /// `C' = C1·t`.
    pub fn expanded(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn has_expansion(&self) -> bool {
        self.expansion > 1 || self.expand_unit
    }

    /// Residual iff stride 1 and `C1 == C2`.
    pub fn residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    /// Channel count the attention unit operates on, if any.
    pub fn attended_channels(&self) -> Option<usize> {
        match self.placement {
            Placement::Between => Some(self.expanded()),
            Placement::BeforeExpansion => Some(self.in_channels),
            Placement::AfterProjection => Some(self.out_channels),
            Placement::None => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { in_channels, out_channels, expansion, stride, groups, reduction, .. } = *self;
        if in_channels == 0 || out_channels == 0 || expansion == 0 || groups == 0 || reduction == 0 {
            return config_err(format!("block extents must be positive: {self:?}"));
        }
        if !(stride == 1 || stride == 2) {
            return config_err(format!("block stride must be 1 or 2, got {stride}"));
        }
        let expanded = self.expanded();
        if !expanded.is_multiple_of(groups) || out_channels % groups != 0 {
            return config_err(format!("group {groups} must divide expanded channels {expanded} and output channels {out_channels}"));
        }
        if let Some(c) = self.attended_channels() {
            if c % reduction != 0 {
                return config_err(format!("attention over {c} channels not divisible by reduction ratio {reduction}"));
            }
        }
        Ok(())
    }
}

/// Forward-pass context: graph, bound parameters and normalization state.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    pub bound: &'a Bound,
    pub stats: &'a mut [RunningStats],
    pub mode: Mode,
}

impl Ctx<'_> {
    pub fn p(&self, id: ParamId) -> Var {
        self.bound.var(id)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NormUnit {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

/// Convolution, optional batch normalization, optional ReLU6.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub name: String,
    pub spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
    norm: Option<NormUnit>,
    pub relu6: bool,
}

impl ConvUnit {
    /// Convolutions followed by normalization carry no bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        spec: ConvSpec,
        batch_norm: bool,
        relu6: bool,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = spec.with_bias(false);
        spec.validate()?;
        let weight = store.push(format!("{name}.weight"), ParamKind::ConvWeight, kaiming_fan_out(&spec.weight_shape(), rng));
        let c = spec.out_channels;
        let norm = batch_norm.then(|| NormUnit {
            gamma: store.push(format!("{name}.bn.gamma"), ParamKind::BnGamma, Tensor::ones(&[c])),
            beta: store.push(format!("{name}.bn.beta"), ParamKind::BnBeta, Tensor::zeros(&[c])),
            stats: store.push_stats(c),
        });
        Ok(Self { name: name.to_string(), spec, weight, bias: None, norm, relu6 })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn has_norm(&self) -> bool {
        self.norm.is_some()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        ctx.graph.set_scope(&self.name);
        let w = ctx.p(self.weight);
        let b = self.bias.map(|b| ctx.p(b));
        let mut y = ctx.graph.conv2d(x, w, b, self.spec)?;
        if let Some(n) = &self.norm {
            let (g, be) = (ctx.p(n.gamma), ctx.p(n.beta));
            y = ctx.graph.batch_norm(y, g, be, &mut ctx.stats[n.stats.0], ctx.mode)?;
        }
        if self.relu6 {
            y = ctx.graph.relu6(y)?;
        }
        Ok(y)
    }
}

/// Global pooling → FC(C→C/r) → δ → FC(C/r→C) → sigmoid.
#[derive(Debug, Clone)]
pub struct AttentionUnit {
    pub name: String,
    pub channels: usize,
    pub hidden: usize,
    pub inter: InterFc,
    pub fc1_weight: ParamId,
    pub fc1_bias: Option<ParamId>,
    pub fc2_weight: ParamId,
    pub fc2_bias: Option<ParamId>,
}

impl AttentionUnit {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        reduction: usize,
        options: BlockOptions,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return config_err(format!("attention over {channels} channels not divisible by reduction ratio {reduction}"));
        }
        let hidden = channels / reduction;
        let bias = options.attention_bias;
        let fc1_weight = store.push(format!("{name}.fc1.weight"), ParamKind::FcWeight, fc_normal(hidden, channels, rng));
        let fc1_bias = bias.then(|| store.push(format!("{name}.fc1.bias"), ParamKind::Bias, Tensor::zeros(&[hidden])));
        let fc2_weight = store.push(format!("{name}.fc2.weight"), ParamKind::FcWeight, fc_normal(channels, hidden, rng));
        let fc2_bias = bias.then(|| store.push(format!("{name}.fc2.bias"), ParamKind::Bias, Tensor::zeros(&[channels])));
        Ok(Self {
            name: name.to_string(),
            channels,
            hidden,
            inter: options.attention_activation,
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
        })
    }

    /// Mask `M(u)` of shape `[N, C, 1, 1]`, every entry in (0,1).
    pub fn mask(&self, ctx: &mut Ctx<'_>, u: Var) -> Result<Var> {
        ctx.graph.set_scope(&self.name);
        let (n, c, _, _) = ctx.graph.value(u).dims4()?;
        let pooled = ctx.graph.global_avg_pool(u)?;
        let flat = ctx.graph.flatten(pooled)?;
        let (w1, b1) = (ctx.p(self.fc1_weight), self.fc1_bias.map(|b| ctx.p(b)));
        let mut h = ctx.graph.linear(flat, w1, b1)?;
        if self.inter == InterFc::Relu {
            h = ctx.graph.relu(h)?;
        }
        let (w2, b2) = (ctx.p(self.fc2_weight), self.fc2_bias.map(|b| ctx.p(b)));
        let z = ctx.graph.linear(h, w2, b2)?;
        let s = ctx.graph.sigmoid(z)?;
        ctx.graph.reshape(s, &[n, c, 1, 1])
    }

    /// `M(u) ⊙ u`.
    pub fn apply(&self, ctx: &mut Ctx<'_>, u: Var) -> Result<Var> {
        let m = self.mask(ctx, u)?;
        ctx.graph.channel_mul(u, m)
    }
}

/// ANTBlock with configurable attention placement.
#[derive(Debug, Clone)]
pub struct AntBlock {
    pub name: String,
    pub cfg: BlockConfig,
    pub expand: Option<ConvUnit>,
    pub depthwise: ConvUnit,
    pub attention: Option<AttentionUnit>,
    pub project: ConvUnit,
}

impl AntBlock {
    pub fn new<R: Rng + ?Sized>(name: &str, cfg: BlockConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let bn = cfg.options.batch_norm;
        let expanded = cfg.expanded();
        let expand = if cfg.has_expansion() {
            let spec = ConvSpec::pointwise(cfg.in_channels, expanded, 1);
            Some(ConvUnit::new(&format!("{name}.expand"), spec, bn, true, store, rng)?)
        } else {
            None
        };
        let dw = ConvSpec::depthwise(expanded, DEPTHWISE_KERNEL, cfg.stride);
        let depthwise = ConvUnit::new(&format!("{name}.dw"), dw, bn, true, store, rng)?;
        let attention = match cfg.attended_channels() {
            Some(c) => Some(AttentionUnit::new(&format!("{name}.att"), c, cfg.reduction, cfg.options, store, rng)?),
            None => None,
        };
        let proj = ConvSpec::pointwise(expanded, cfg.out_channels, cfg.groups);
        let project = ConvUnit::new(&format!("{name}.project"), proj, bn, false, store, rng)?;
        Ok(Self { name: name.to_string(), cfg, expand, depthwise, attention, project })
    }

    /// `G(x)`, with attention already applied when it precedes expansion.
    fn g(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        if self.cfg.placement == Placement::BeforeExpansion {
            h = self.att().apply(ctx, h)?;
        }
        if let Some(e) = &self.expand {
            h = e.forward(ctx, h)?;
        }
        self.depthwise.forward(ctx, h)
    }

    fn att(&self) -> &AttentionUnit {
        self.attention.as_ref().expect("placement with attention has a unit")
    }

    /// Projection input: `M(G(x)) ⊙ G(x)` for the proposed placement, `G(x)` otherwise.
    pub fn trunk(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let u = self.g(ctx, x)?;
        match self.cfg.placement {
            Placement::Between => self.att().apply(ctx, u),
            _ => Ok(u),
        }
    }

    /// Non-residual part `F(x)`.
    pub fn residual_fn(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let u = self.trunk(ctx, x)?;
        let y = self.project.forward(ctx, u)?;
        match self.cfg.placement {
            Placement::AfterProjection => self.att().apply(ctx, y),
            _ => Ok(y),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let f = self.residual_fn(ctx, x)?;
        if self.cfg.residual() {
            ctx.graph.set_scope(&format!("{}.residual", self.name));
            ctx.graph.add(x, f)
        } else {
            Ok(f)
        }
    }

    /// Attention mask `M(·)` for the block input, whatever the placement.
    pub fn attention_mask(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Option<Var>> {
        let Some(att) = &self.attention else { return Ok(None) };
        let target = match self.cfg.placement {
            Placement::BeforeExpansion => x,
            Placement::Between => self.g(ctx, x)?,
            Placement::AfterProjection => {
                let u = self.g(ctx, x)?;
                self.project.forward(ctx, u)?
            }
            Placement::None => unreachable!(),
        };
        att.mask(ctx, target).map(Some)
    }
}

/// MobileNetV2 inverted residual: expand (1×1, ReLU6) → depthwise (3×3,
/// ReLU6) → linear projection (1×1), residual when shapes match.
#[derive(Debug, Clone)]
pub struct InvertedResidual {
    pub name: String,
    pub cfg: BlockConfig,
    expand: Option<ConvUnit>,
    depthwise: ConvUnit,
    project: ConvUnit,
}

impl InvertedResidual {
    /// `cfg.placement` and `cfg.groups` are ignored: the baseline has no
    /// attention and a dense projection.
    pub fn new<R: Rng + ?Sized>(name: &str, cfg: BlockConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let cfg = BlockConfig { groups: 1, placement: Placement::None, ..cfg };
        cfg.validate()?;
        let bn = cfg.options.batch_norm;
        let hidden = cfg.expanded();
        let expand = cfg
            .has_expansion()
            .then(|| ConvUnit::new(&format!("{name}.expand"), ConvSpec::pointwise(cfg.in_channels, hidden, 1), bn, true, store, rng))
            .transpose()?;
        let depthwise =
            ConvUnit::new(&format!("{name}.dw"), ConvSpec::depthwise(hidden, DEPTHWISE_KERNEL, cfg.stride), bn, true, store, rng)?;
        let project = ConvUnit::new(&format!("{name}.project"), ConvSpec::pointwise(hidden, cfg.out_channels, 1), bn, false, store, rng)?;
        Ok(Self { name: name.to_string(), cfg, expand, depthwise, project })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(e) = &self.expand {
            h = e.forward(ctx, h)?;
        }
        h = self.depthwise.forward(ctx, h)?;
        h = self.project.forward(ctx, h)?;
        if self.cfg.residual() {
            ctx.graph.set_scope(&format!("{}.residual", self.name));
            h = ctx.graph.add(x, h)?;
        }
        Ok(h)
    }

    pub fn units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.expand.iter().chain([&self.depthwise, &self.project])
    }
}

/// e-ANTBlock: `x̃ = x + Σ_j softmax(λ)_j · F_j(x)`.
#[derive(Debug, Clone)]
pub struct EAntBlock {
    pub name: String,
    /// One branch per group setting; with a shared trunk only the first
    /// branch owns expansion, depthwise and attention parameters.
    pub branches: Vec<AntBlock>,
    /// Projections of branches `1..m` when the trunk is shared.
    pub shared_projections: Vec<ConvUnit>,
    pub lambdas: ParamId,
    pub share_trunk: bool,
}

impl EAntBlock {
    /// Builds one branch per config. All configs must agree on
    /// `(C1, C2, t, s)`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        configs: &[BlockConfig],
        share_trunk: bool,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let Some(first) = configs.first() else {
            return config_err("e-ANTBlock needs at least one branch");
        };
        for c in configs {
            let key = |c: &BlockConfig| (c.in_channels, c.out_channels, c.expansion, c.stride);
            if key(c) != key(first) {
                return config_err(format!("e-ANTBlock branches disagree on (C1, C2, t, s): {:?} vs {:?}", key(first), key(c)));
            }
        }
        if share_trunk && matches!(first.placement, Placement::AfterProjection | Placement::BeforeExpansion) {
            return config_err("a shared trunk needs attention between depthwise and projection (or none)");
        }
        let mut branches = Vec::new();
        let mut shared_projections = Vec::new();
        for (j, cfg) in configs.iter().enumerate() {
            if share_trunk && j > 0 {
                cfg.validate()?;
                let spec = ConvSpec::pointwise(cfg.expanded(), cfg.out_channels, cfg.groups);
                let bn = cfg.options.batch_norm;
                shared_projections.push(ConvUnit::new(&format!("{name}.b{j}.project"), spec, bn, false, store, rng)?);
            } else {
                branches.push(AntBlock::new(&format!("{name}.b{j}"), *cfg, store, rng)?);
            }
        }
        let lambdas = store.push(format!("{name}.lambda"), ParamKind::Logits, Tensor::zeros(&[configs.len()]));
        Ok(Self { name: name.to_string(), branches, shared_projections, lambdas, share_trunk })
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len() + self.shared_projections.len()
    }

    pub fn residual(&self) -> bool {
        self.branches[0].cfg.residual()
    }

    pub fn in_channels(&self) -> usize {
        self.branches[0].cfg.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.branches[0].cfg.out_channels
    }

    /// Branch functions `F_j(x)`.
    pub fn branch_outputs(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Vec<Var>> {
        if self.share_trunk {
            let lead = &self.branches[0];
            let u = lead.trunk(ctx, x)?;
            let mut outs = vec![lead.project.forward(ctx, u)?];
            for p in &self.shared_projections {
                outs.push(p.forward(ctx, u)?);
            }
            Ok(outs)
        } else {
            self.branches.iter().map(|b| b.residual_fn(ctx, x)).collect()
        }
    }

    pub fn weights(&self, ctx: &mut Ctx<'_>) -> Result<Var> {
        ctx.graph.set_scope(&format!("{}.weights", self.name));
        let l = ctx.p(self.lambdas);
        ctx.graph.softmax(l)
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let outs = self.branch_outputs(ctx, x)?;
        let w = self.weights(ctx)?;
        ctx.graph.set_scope(&format!("{}.ensemble", self.name));
        let mut acc = ctx.graph.scale_by_element(outs[0], w, 0)?;
        for (j, &o) in outs.iter().enumerate().skip(1) {
            let s = ctx.graph.scale_by_element(o, w, j)?;
            acc = ctx.graph.add(acc, s)?;
        }
        if self.residual() {
            acc = ctx.graph.add(x, acc)?;
        }
        Ok(acc)
    }
}
