//! Declarative network descriptions: the architecture table as data.
//!
//! A [`NetworkSpec`] is an ordered list of [`StageSpec`] rows. Resolving it
//! yields a [`Plan`]: the concrete layer sequence with channel counts,
//! strides and spatial extents that the cost model, the channel dependency
//! analysis and the network builder all consume.

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockConfig, BlockOptions, Placement};
use crate::error::{Error, Result};
use crate::tensor::ConvSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOp {
    Conv2d,
    Antblock,
    EAntblock,
    InvertedResidual,
    Conv1x1,
    Avgpool,
    Fc,
}

impl StageOp {
    pub fn as_str(self) -> &'static str {
        match self {
            StageOp::Conv2d => "conv2d",
            StageOp::Antblock => "antblock",
            StageOp::EAntblock => "e_antblock",
            StageOp::InvertedResidual => "inverted_residual",
            StageOp::Conv1x1 => "conv1x1",
            StageOp::Avgpool => "avgpool",
            StageOp::Fc => "fc",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [StageOp::Conv2d, StageOp::Antblock, StageOp::EAntblock, StageOp::InvertedResidual, StageOp::Conv1x1, StageOp::Avgpool, StageOp::Fc]
            .into_iter()
            .find(|op| op.as_str() == s)
    }

    pub fn is_block(self) -> bool {
        matches!(self, StageOp::Antblock | StageOp::EAntblock | StageOp::InvertedResidual)
    }
}

/// One row of the architecture table. Stride applies to the first of the
/// `n` repeated blocks only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub op: StageOp,
    pub out_channels: usize,
    pub n: usize,
    pub s: usize,
    pub t: usize,
    pub r: usize,
    pub g: usize,
    pub placement: Placement,
    /// Keep the 1×1 expansion layer when `t == 1`.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub expand: bool,
    /// Group count of each e-ANTBlock branch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branch_groups: Vec<usize>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub share_trunk: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl StageSpec {
    fn layer(name: &str, op: StageOp, out_channels: usize, s: usize) -> Self {
        Self {
            name: name.to_string(),
            op,
            out_channels,
            n: 1,
            s,
            t: 1,
            r: 1,
            g: 1,
            placement: Placement::None,
            expand: true,
            branch_groups: Vec::new(),
            share_trunk: false,
        }
    }

    pub fn conv2d(name: &str, out_channels: usize, s: usize) -> Self {
        Self::layer(name, StageOp::Conv2d, out_channels, s)
    }

    pub fn conv1x1(name: &str, out_channels: usize) -> Self {
        Self::layer(name, StageOp::Conv1x1, out_channels, 1)
    }

    pub fn avgpool(name: &str, channels: usize) -> Self {
        Self::layer(name, StageOp::Avgpool, channels, 1)
    }

    pub fn fc(name: &str, classes: usize) -> Self {
        Self::layer(name, StageOp::Fc, classes, 1)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn antblock(name: &str, t: usize, r: usize, c: usize, n: usize, s: usize, g: usize) -> Self {
        Self { t, r, n, g, placement: Placement::Between, ..Self::layer(name, StageOp::Antblock, c, s) }
    }

    pub fn inverted_residual(name: &str, t: usize, c: usize, n: usize, s: usize) -> Self {
        Self { t, n, ..Self::layer(name, StageOp::InvertedResidual, c, s) }
    }

    /// Groups used by the stage's blocks (one entry per e-ANTBlock branch).
    pub fn groups(&self) -> Vec<usize> {
        if self.op == StageOp::EAntblock {
            self.branch_groups.clone()
        } else {
            vec![self.g]
        }
    }
}

/// A whole network as an ordered stage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// `(C, H, W)`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub alpha: f64,
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "is_default_options")]
    pub options: BlockOptions,
}

fn is_default_options(o: &BlockOptions) -> bool {
    *o == BlockOptions::default()
}

/// A concrete layer of a resolved network.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanLayer {
    /// Convolution + normalization + ReLU6 (stem and head).
    Conv {
        name: String,
        spec: ConvSpec,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
    Ant {
        name: String,
        cfg: BlockConfig,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
    EAnt {
        name: String,
        configs: Vec<BlockConfig>,
        share_trunk: bool,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
    InvRes {
        name: String,
        cfg: BlockConfig,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
    },
    Pool {
        name: String,
        channels: usize,
        in_hw: (usize, usize),
    },
    Fc {
        name: String,
        in_features: usize,
        out_features: usize,
    },
}

impl PlanLayer {
    pub fn name(&self) -> &str {
        match self {
            PlanLayer::Conv { name, .. }
            | PlanLayer::Ant { name, .. }
            | PlanLayer::EAnt { name, .. }
            | PlanLayer::InvRes { name, .. }
            | PlanLayer::Pool { name, .. }
            | PlanLayer::Fc { name, .. } => name,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            PlanLayer::Conv { spec, .. } => spec.in_channels,
            PlanLayer::Ant { cfg, .. } | PlanLayer::InvRes { cfg, .. } => cfg.in_channels,
            PlanLayer::EAnt { configs, .. } => configs[0].in_channels,
            PlanLayer::Pool { channels, .. } => *channels,
            PlanLayer::Fc { in_features, .. } => *in_features,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            PlanLayer::Conv { spec, .. } => spec.out_channels,
            PlanLayer::Ant { cfg, .. } | PlanLayer::InvRes { cfg, .. } => cfg.out_channels,
            PlanLayer::EAnt { configs, .. } => configs[0].out_channels,
            PlanLayer::Pool { channels, .. } => *channels,
            PlanLayer::Fc { out_features, .. } => *out_features,
        }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        match self {
            PlanLayer::Conv { out_hw, .. }
            | PlanLayer::Ant { out_hw, .. }
            | PlanLayer::EAnt { out_hw, .. }
            | PlanLayer::InvRes { out_hw, .. } => *out_hw,
            PlanLayer::Pool { .. } | PlanLayer::Fc { .. } => (1, 1),
        }
    }

    pub fn in_hw(&self) -> (usize, usize) {
        match self {
            PlanLayer::Conv { in_hw, .. }
            | PlanLayer::Ant { in_hw, .. }
            | PlanLayer::EAnt { in_hw, .. }
            | PlanLayer::InvRes { in_hw, .. }
            | PlanLayer::Pool { in_hw, .. } => *in_hw,
            PlanLayer::Fc { .. } => (1, 1),
        }
    }
}

/// One resolved stage: the table row plus its concrete layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStage {
    pub stage: StageSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub layers: Vec<PlanLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub name: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub stages: Vec<PlanStage>,
}

impl Plan {
    pub fn layers(&self) -> impl Iterator<Item = &PlanLayer> {
        self.stages.iter().flat_map(|s| s.layers.iter())
    }

    pub fn block_count(&self) -> usize {
        self.layers().filter(|l| matches!(l, PlanLayer::Ant { .. } | PlanLayer::EAnt { .. } | PlanLayer::InvRes { .. })).count()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Nearest multiple of `divisor`, never below `divisor`, never more than
/// 10% below `value`.
pub fn make_divisible(value: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((value + d / 2.0) / d).floor() as usize * divisor).max(divisor);
    if (n as f64) < 0.9 * value {
        n += divisor;
    }
    n
}

fn nearest_multiple(value: usize, divisor: usize) -> usize {
    let down = value / divisor * divisor;
    let up = down + divisor;
    if down == 0 || up - value <= value - down {
        up
    } else {
        down
    }
}

/// Channel divisor that stage `i`'s output count must satisfy so its own
/// repeated blocks and the next block stage stay valid.
fn channel_divisor(stages: &[StageSpec], i: usize) -> usize {
    let mut d = 1;
    let need = |c_mult: usize, div: usize| div / gcd(div, c_mult);
    let own = &stages[i];
    if own.op.is_block() {
        for g in own.groups() {
            d = lcm(d, g.max(1));
            d = lcm(d, need(own.t, g.max(1)));
        }
        match own.placement {
            Placement::Between if own.n > 1 => d = lcm(d, need(own.t, own.r.max(1))),
            Placement::AfterProjection => d = lcm(d, own.r.max(1)),
            _ => {}
        }
    }
    if let Some(next) = stages[i + 1..].iter().find(|s| s.op != StageOp::Avgpool) {
        if next.op.is_block() {
            for g in next.groups() {
                d = lcm(d, need(next.t, g.max(1)));
            }
            match next.placement {
                Placement::Between => d = lcm(d, need(next.t, next.r.max(1))),
                Placement::BeforeExpansion => d = lcm(d, next.r.max(1)),
                _ => {}
            }
        }
    }
    d
}

/// Output channels of every stage after applying width factor `alpha`.
///
/// Channels round to the nearest multiple of 8 (floor 8), then to the
/// nearest multiple of the divisor each stage needs (ties round up). The
/// head 1×1 convolution scales only when `scale_head`.
pub fn scale_channels(stages: &[StageSpec], alpha: f64, scale_head: bool) -> Vec<usize> {
    let head = stages.iter().rposition(|s| s.op == StageOp::Conv1x1);
    let mut out: Vec<usize> = stages
        .iter()
        .enumerate()
        .map(|(i, s)| match s.op {
            StageOp::Avgpool | StageOp::Fc => s.out_channels,
            _ if Some(i) == head && !scale_head => s.out_channels,
            _ => make_divisible(s.out_channels as f64 * alpha, 8),
        })
        .collect();
    for i in 0..stages.len() {
        match stages[i].op {
            StageOp::Fc => {}
            StageOp::Avgpool if i > 0 => out[i] = out[i - 1],
            _ if Some(i) == head && !scale_head => {}
            _ => out[i] = nearest_multiple(out[i], channel_divisor(stages, i)),
        }
    }
    out
}

impl NetworkSpec {
    /// Concrete layers. Fails with a configuration error naming the
    /// offending stage.
    pub fn resolve(&self) -> Result<Plan> {
        let stage_err = |s: &StageSpec, msg: String| Error::Config(format!("stage '{}': {msg}", s.name));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("width multiplier must be positive, got {}", self.alpha)));
        }
        let [c0, h0, w0] = self.input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 || self.num_classes == 0 {
            return Err(Error::Config("input shape and class count must be positive".into()));
        }
        let channels = if self.alpha == 1.0 {
            self.stages.iter().map(|s| s.out_channels).collect()
        } else {
            scale_channels(&self.stages, self.alpha, self.alpha > 1.0)
        };
        let mut c = c0;
        let mut hw = (h0, w0);
        let mut pooled = false;
        let mut stages = Vec::with_capacity(self.stages.len());
        for (stage, &out_c) in self.stages.iter().zip(&channels) {
            if stage.n == 0 || stage.s == 0 || stage.t == 0 || stage.r == 0 || stage.g == 0 || out_c == 0 {
                return Err(stage_err(stage, "n, s, t, r, g and out_channels must be positive".into()));
            }
            if !stage.op.is_block() && stage.n != 1 {
                return Err(stage_err(stage, format!("{} stages cannot repeat (n = {})", stage.op.as_str(), stage.n)));
            }
            if pooled && stage.op != StageOp::Fc {
                return Err(stage_err(stage, "only a fully connected layer may follow pooling".into()));
            }
            let (in_c, in_hw) = (c, hw);
            let mut layers = Vec::new();
            match stage.op {
                StageOp::Conv2d | StageOp::Conv1x1 => {
                    let k = if stage.op == StageOp::Conv2d { 3 } else { 1 };
                    let spec = ConvSpec::new(c, out_c, k, stage.s, 1);
                    let out_hw = spec.out_hw(hw.0, hw.1).map_err(|e| stage_err(stage, e.detail()))?;
                    layers.push(PlanLayer::Conv { name: stage.name.clone(), spec, in_hw: hw, out_hw });
                    c = out_c;
                    hw = out_hw;
                }
                StageOp::Antblock | StageOp::InvertedResidual | StageOp::EAntblock => {
                    if stage.op == StageOp::EAntblock && stage.branch_groups.is_empty() {
                        return Err(stage_err(stage, "e_antblock needs branch_groups".into()));
                    }
                    if stage.s > 2 {
                        return Err(stage_err(stage, format!("block stride must be 1 or 2, got {}", stage.s)));
                    }
                    for j in 0..stage.n {
                        let s = if j == 0 { stage.s } else { 1 };
                        let name = format!("{}.{j}", stage.name);
                        let base = BlockConfig::new(c, out_c, stage.t, s, stage.g, stage.r)
                            .with_placement(stage.placement)
                            .with_expand_unit(stage.expand)
                            .with_options(self.options);
                        let dw = ConvSpec::depthwise(c * stage.t, 3, s);
                        let out_hw = dw.out_hw(hw.0, hw.1).map_err(|e| stage_err(stage, e.detail()))?;
                        let layer = match stage.op {
                            StageOp::Antblock => {
                                base.validate().map_err(|e| stage_err(stage, e.detail()))?;
                                PlanLayer::Ant { name, cfg: base, in_hw: hw, out_hw }
                            }
                            StageOp::InvertedResidual => {
                                let cfg = BlockConfig { groups: 1, placement: Placement::None, ..base };
                                cfg.validate().map_err(|e| stage_err(stage, e.detail()))?;
                                PlanLayer::InvRes { name, cfg, in_hw: hw, out_hw }
                            }
                            _ => {
                                let configs: Vec<BlockConfig> =
                                    stage.branch_groups.iter().map(|&g| BlockConfig { groups: g, ..base }).collect();
                                for cfg in &configs {
                                    cfg.validate().map_err(|e| stage_err(stage, e.detail()))?;
                                }
                                PlanLayer::EAnt { name, configs, share_trunk: stage.share_trunk, in_hw: hw, out_hw }
                            }
                        };
                        layers.push(layer);
                        c = out_c;
                        hw = out_hw;
                    }
                }
                StageOp::Avgpool => {
                    if out_c != c {
                        return Err(stage_err(stage, format!("pooling keeps {c} channels, table says {out_c}")));
                    }
                    layers.push(PlanLayer::Pool { name: stage.name.clone(), channels: c, in_hw: hw });
                    hw = (1, 1);
                    pooled = true;
                }
                StageOp::Fc => {
                    if !pooled {
                        return Err(stage_err(stage, "fully connected layer needs pooled input".into()));
                    }
                    if stage.out_channels != self.num_classes {
                        return Err(stage_err(
                            stage,
                            format!("classifier has {} outputs but num_classes is {}", stage.out_channels, self.num_classes),
                        ));
                    }
                    layers.push(PlanLayer::Fc { name: stage.name.clone(), in_features: c, out_features: self.num_classes });
                    c = self.num_classes;
                }
            }
            stages.push(PlanStage { stage: stage.clone(), in_channels: in_c, out_channels: c, in_hw, out_hw: hw, layers });
        }
        match self.stages.last().map(|s| s.op) {
            Some(StageOp::Fc) => {}
            _ => return Err(Error::Config("network must end with a fully connected classifier".into())),
        }
        Ok(Plan { name: self.name.clone(), input_shape: self.input_shape, num_classes: self.num_classes, stages })
    }

    /// Same network with every attention unit moved to `placement`.
    pub fn with_placement(&self, placement: Placement) -> Self {
        let mut spec = self.clone();
        for s in &mut spec.stages {
            if matches!(s.op, StageOp::Antblock | StageOp::EAntblock) {
                s.placement = placement;
            }
        }
        spec
    }

    /// Same network with every reduction ratio set to `r`.
    pub fn with_fixed_ratio(&self, r: usize) -> Self {
        let mut spec = self.clone();
        for s in &mut spec.stages {
            if matches!(s.op, StageOp::Antblock | StageOp::EAntblock) {
                s.r = r;
            }
        }
        spec
    }
}

/// Stage rows `(t, r, C, n, s)` of ant1..ant7.
pub const ANT_STAGES: [(usize, usize, usize, usize, usize); 7] =
    [(1, 8, 16, 1, 1), (6, 8, 24, 2, 2), (6, 12, 32, 3, 2), (6, 16, 64, 4, 2), (6, 24, 96, 3, 1), (6, 32, 160, 3, 2), (6, 64, 320, 1, 1)];

pub const HEAD_CHANNELS: usize = 1280;

fn check_group(g: usize) -> Result<()> {
    if g == 0 {
        return Err(Error::Config("group count must be positive".into()));
    }
    Ok(())
}

fn assemble(name: String, input_shape: [usize; 3], classes: usize, alpha: f64, stem_stride: usize, body: Vec<StageSpec>) -> NetworkSpec {
    let mut stages = vec![StageSpec::conv2d("conv0", 32, stem_stride)];
    stages.extend(body);
    stages.push(StageSpec::conv1x1("conv8", HEAD_CHANNELS));
    stages.push(StageSpec::avgpool("pool9", HEAD_CHANNELS));
    stages.push(StageSpec::fc("fc10", classes));
    NetworkSpec { name, input_shape, num_classes: classes, alpha, stages, options: BlockOptions::default() }
}

fn ant_body(g: usize, strides: [usize; 7]) -> Vec<StageSpec> {
    ANT_STAGES
        .iter()
        .zip(strides)
        .enumerate()
        .map(|(i, (&(t, r, c, n, _), s))| StageSpec::antblock(&format!("ant{}", i + 1), t, r, c, n, s, if i == 0 { 1 } else { g }))
        .collect()
}

const IMAGENET_STRIDES: [usize; 7] = [1, 2, 2, 2, 1, 2, 1];
/// The second stage keeps stride 1 on 32×32 inputs; final map is 4×4.
const CIFAR_STRIDES: [usize; 7] = [1, 1, 2, 2, 1, 2, 1];

/// ANTNet for 224×224 ImageNet inputs. `ant1` always uses `g = 1`.
pub fn antnet_imagenet(g: usize, alpha: f64) -> Result<NetworkSpec> {
    check_group(g)?;
    let name = if alpha == 1.0 { format!("antnet_imagenet_g{g}") } else { format!("antnet_imagenet_g{g}_a{alpha}") };
    let spec = assemble(name, [3, 224, 224], 1000, alpha, 2, ant_body(g, IMAGENET_STRIDES));
    spec.resolve()?;
    Ok(spec)
}

/// ANTNet for 32×32 CIFAR-100 inputs: stem and second stage at stride 1.
pub fn antnet_cifar(g: usize) -> Result<NetworkSpec> {
    check_group(g)?;
    let spec = assemble(format!("antnet_cifar_g{g}"), [3, 32, 32], 100, 1.0, 1, ant_body(g, CIFAR_STRIDES));
    spec.resolve()?;
    Ok(spec)
}

/// CIFAR ANTNet with one reduction ratio for every block.
pub fn antnet_cifar_fixed_ratio(g: usize, r: usize) -> Result<NetworkSpec> {
    let mut spec = antnet_cifar(g)?.with_fixed_ratio(r);
    spec.name = format!("antnet_cifar_g{g}_r{r}");
    spec.resolve()?;
    Ok(spec)
}

fn mobilenet_body(strides: [usize; 7], unit_expansion: bool) -> Vec<StageSpec> {
    ANT_STAGES
        .iter()
        .zip(strides)
        .enumerate()
        .map(|(i, (&(t, _, c, n, _), s))| {
            let mut st = StageSpec::inverted_residual(&format!("ir{}", i + 1), t, c, n, s);
            st.expand = unit_expansion;
            st
        })
        .collect()
}

/// MobileNetV2 (ImageNet). The `t = 1` stage has no expansion layer.
pub fn mobilenet_v2_baseline() -> NetworkSpec {
    assemble("mobilenetv2_imagenet".into(), [3, 224, 224], 1000, 1.0, 2, mobilenet_body(IMAGENET_STRIDES, false))
}

/// MobileNetV2 on CIFAR-100, with the `t = 1` expansion layer kept.
pub fn mobilenet_v2_cifar() -> NetworkSpec {
    assemble("mobilenetv2_cifar".into(), [3, 32, 32], 100, 1.0, 1, mobilenet_body(CIFAR_STRIDES, true))
}

fn ensemble_body(strides: [usize; 7], groups: &[usize]) -> Vec<StageSpec> {
    ant_body(1, strides)
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.op = StageOp::EAntblock;
            s.branch_groups = if i == 0 { vec![1; groups.len()] } else { groups.to_vec() };
            s
        })
        .collect()
}

/// e-ANTNet on CIFAR-100 with `g = 1` and `g = 2` branches.
pub fn e_antnet_cifar() -> NetworkSpec {
    assemble("e_antnet_cifar".into(), [3, 32, 32], 100, 1.0, 1, ensemble_body(CIFAR_STRIDES, &[1, 2]))
}

pub fn e_antnet_imagenet() -> NetworkSpec {
    assemble("e_antnet_imagenet".into(), [3, 224, 224], 1000, 1.0, 2, ensemble_body(IMAGENET_STRIDES, &[1, 2]))
}

/// Quarter-width CIFAR-style network with one block per stage, for
/// desk-scale training.
pub fn reduced(spec: &NetworkSpec, input_hw: usize, classes: usize) -> Result<NetworkSpec> {
    let mut stages = spec.stages.clone();
    for s in &mut stages {
        if s.op.is_block() {
            s.n = 1;
        }
    }
    let channels = scale_channels(&stages, 0.25, true);
    let pool_c = channels[stages.iter().rposition(|s| s.op == StageOp::Conv1x1).unwrap_or(0)];
    for (s, c) in stages.iter_mut().zip(channels) {
        s.out_channels = match s.op {
            StageOp::Avgpool => pool_c,
            StageOp::Fc => classes,
            _ => c,
        };
    }
    let reduced = NetworkSpec {
        name: format!("{}_reduced", spec.name),
        input_shape: [spec.input_shape[0], input_hw, input_hw],
        num_classes: classes,
        alpha: 1.0,
        stages,
        options: spec.options,
    };
    reduced.resolve()?;
    Ok(reduced)
}

/// Reduced ANTNet: CIFAR table, one block per stage, quarter width.
pub fn reduced_antnet(g: usize, input_hw: usize, classes: usize) -> Result<NetworkSpec> {
    reduced(&antnet_cifar(g)?, input_hw, classes)
}

pub fn reduced_e_antnet(input_hw: usize, classes: usize) -> Result<NetworkSpec> {
    reduced(&e_antnet_cifar(), input_hw, classes)
}

/// Three ANTBlocks on 8×8 inputs, small enough for exhaustive gradient
/// checks.
pub fn tiny_antnet(classes: usize) -> NetworkSpec {
    let stages = vec![
        StageSpec::conv2d("conv0", 8, 1),
        StageSpec::antblock("ant1", 1, 4, 8, 1, 1, 1),
        StageSpec::antblock("ant2", 2, 4, 8, 1, 1, 2),
        StageSpec::antblock("ant3", 2, 4, 16, 1, 2, 2),
        StageSpec::conv1x1("conv4", 16),
        StageSpec::avgpool("pool5", 16),
        StageSpec::fc("fc6", classes),
    ];
    NetworkSpec {
        name: "tiny_antnet".into(),
        input_shape: [3, 8, 8],
        num_classes: classes,
        alpha: 1.0,
        stages,
        options: BlockOptions::default(),
    }
}

// ---------------------------------------------------------------------------
// JSON format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: Option<String>,
    input_shape: Option<Vec<i64>>,
    num_classes: Option<i64>,
    alpha: Option<f64>,
    stages: Option<Vec<RawStage>>,
    #[serde(default)]
    options: BlockOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    name: Option<String>,
    op: Option<String>,
    out_channels: Option<i64>,
    n: Option<i64>,
    s: Option<i64>,
    t: Option<i64>,
    r: Option<i64>,
    g: Option<i64>,
    placement: Option<String>,
    expand: Option<bool>,
    branch_groups: Option<Vec<i64>>,
    share_trunk: Option<bool>,
}

fn parse_err(context: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { context: context.into(), message: message.into() }
}

fn positive(ctx: &str, field: &str, v: Option<i64>) -> Result<usize> {
    match v {
        None => Err(parse_err(ctx, format!("missing field `{field}`"))),
        Some(v) if v < 1 => Err(parse_err(ctx, format!("field `{field}` must be ≥ 1, got {v}"))),
        Some(v) => usize::try_from(v).map_err(|_| parse_err(ctx, format!("field `{field}` out of range"))),
    }
}

fn parse_placement(ctx: &str, s: &str) -> Result<Placement> {
    [Placement::Between, Placement::BeforeExpansion, Placement::AfterProjection, Placement::None]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| parse_err(ctx, format!("unknown placement '{s}'")))
}

/// Parses the JSON network format and checks that it resolves.
pub fn parse_spec(text: &str) -> Result<NetworkSpec> {
    let raw: RawSpec =
        serde_json::from_str(text).map_err(|e| parse_err(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let name = raw.name.ok_or_else(|| parse_err("document", "missing field `name`"))?;
    let shape = raw.input_shape.ok_or_else(|| parse_err("document", "missing field `input_shape`"))?;
    let input_shape: [usize; 3] = match shape.as_slice() {
        &[c, h, w] => {
            [positive("input_shape", "C", Some(c))?, positive("input_shape", "H", Some(h))?, positive("input_shape", "W", Some(w))?]
        }
        _ => return Err(parse_err("input_shape", "expected [C, H, W]")),
    };
    let num_classes = positive("document", "num_classes", raw.num_classes)?;
    let alpha = raw.alpha.ok_or_else(|| parse_err("document", "missing field `alpha`"))?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(parse_err("document", format!("field `alpha` must be positive, got {alpha}")));
    }
    let raw_stages = raw.stages.ok_or_else(|| parse_err("document", "missing field `stages`"))?;
    let mut stages = Vec::with_capacity(raw_stages.len());
    for (i, rs) in raw_stages.into_iter().enumerate() {
        let sname = rs.name.unwrap_or_else(|| format!("stage{i}"));
        let ctx = format!("stages[{i}] '{sname}'");
        let op_str = rs.op.ok_or_else(|| parse_err(&ctx, "missing field `op`"))?;
        let op = StageOp::parse(&op_str).ok_or_else(|| parse_err(&ctx, format!("unknown operator '{op_str}'")))?;
        let placement_str = rs.placement.ok_or_else(|| parse_err(&ctx, "missing field `placement`"))?;
        let branch_groups = rs
            .branch_groups
            .unwrap_or_default()
            .into_iter()
            .map(|g| positive(&ctx, "branch_groups", Some(g)))
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageSpec {
            op,
            out_channels: positive(&ctx, "out_channels", rs.out_channels)?,
            n: positive(&ctx, "n", rs.n)?,
            s: positive(&ctx, "s", rs.s)?,
            t: positive(&ctx, "t", rs.t)?,
            r: positive(&ctx, "r", rs.r)?,
            g: positive(&ctx, "g", rs.g)?,
            placement: parse_placement(&ctx, &placement_str)?,
            expand: rs.expand.unwrap_or(true),
            branch_groups,
            share_trunk: rs.share_trunk.unwrap_or(false),
            name: sname,
        });
    }
    let spec = NetworkSpec { name, input_shape, num_classes, alpha, stages, options: raw.options };
    spec.resolve().map_err(|e| match e {
        Error::Config(m) => parse_err("stages", m),
        other => other,
    })?;
    Ok(spec)
}

/// Pretty-printed JSON; `parse_spec(&emit_spec(s)) == s`.
pub fn emit_spec(spec: &NetworkSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serializes")
}
