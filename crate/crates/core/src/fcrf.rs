//! Channel dependency analysis and the full channel receptive field check.
//!
//! Dependencies are structural: entry `(o, i)` is true when output channel
//! `o` can depend on input channel `i` for some choice of weights. Zero
//! weights never shrink a matrix.

use std::fmt::Write as _;

use serde::Serialize;

use crate::arch::{NetworkSpec, PlanLayer};
use crate::blocks::{BlockConfig, Placement, DEPTHWISE_KERNEL};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl DependencyMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, bits }
    }

    pub fn all_true(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![true; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |o, i| o == i)
    }

    /// Contiguous grouping: output `o` sees the inputs of group
    /// `o / (rows / g)`.
    pub fn grouped(rows: usize, cols: usize, groups: usize) -> Self {
        let (ro, ci) = (rows / groups, cols / groups);
        Self::from_fn(rows, cols, |o, i| o / ro == i / ci)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, o: usize, i: usize) -> bool {
        self.bits[o * self.cols + i]
    }

    pub fn row(&self, o: usize) -> &[bool] {
        &self.bits[o * self.cols..(o + 1) * self.cols]
    }

    /// `self ∘ before`: `(o, i)` holds iff some intermediate `k` has
    /// `self(o, k)` and `before(k, i)`.
    pub fn compose(&self, before: &DependencyMatrix) -> Result<DependencyMatrix> {
        if self.cols != before.rows {
            return Err(Error::Analysis(format!("cannot chain {}x{} after {}x{}", self.rows, self.cols, before.rows, before.cols)));
        }
        let mut out = vec![false; self.rows * before.cols];
        for o in 0..self.rows {
            for k in (0..self.cols).filter(|&k| self.get(o, k)) {
                for (dst, &b) in out[o * before.cols..(o + 1) * before.cols].iter_mut().zip(before.row(k)) {
                    *dst |= b;
                }
            }
        }
        Ok(DependencyMatrix { rows: self.rows, cols: before.cols, bits: out })
    }

    pub fn union(&self, other: &DependencyMatrix) -> Result<DependencyMatrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Analysis(format!("cannot merge {}x{} with {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Ok(DependencyMatrix { rows: self.rows, cols: self.cols, bits })
    }

    pub fn is_all_true(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// First uncovered `(output, input)` pair in row-major order.
    pub fn first_gap(&self) -> Option<(usize, usize)> {
        self.bits.iter().position(|&b| !b).map(|k| (k / self.cols, k % self.cols))
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 1.0;
        }
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }

    /// One line per output channel, `1` for a dependency, `0` otherwise.
    pub fn to_grid(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for o in 0..self.rows {
            out.extend(self.row(o).iter().map(|&b| if b { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }
}

/// The projection pattern written with the interleaved indexing of the
/// group-wise formulation: 1-based output channel `c` reads expanded
/// channels `t+1 ..= t+C'/g` with `t = (c mod g)·C'/g`.
pub fn interleaved_projection(c_prime: usize, c_out: usize, groups: usize) -> DependencyMatrix {
    let width = c_prime / groups;
    DependencyMatrix::from_fn(c_out, c_prime, |o, i| {
        let t = ((o + 1) % groups) * width;
        i >= t && i < t + width
    })
}

/// Layer kinds known to the analysis.
#[derive(Debug, Clone, PartialEq)]
pub enum DepLayer {
    Conv(ConvSpec),
    /// Per-channel normalization or activation.
    PerChannel(usize),
    /// Channel attention `M(u) ⊙ u`: pooling mixes every channel into every
    /// mask entry.
    Attention(usize),
    GlobalPool(usize),
    Fc {
        in_features: usize,
        out_features: usize,
    },
    /// `x + f(x)`.
    Residual(Vec<DepLayer>),
    /// `Σ_j f_j(x)`.
    Parallel(Vec<Vec<DepLayer>>),
}

impl DepLayer {
    fn in_channels(&self) -> Option<usize> {
        match self {
            DepLayer::Conv(s) => Some(s.in_channels),
            DepLayer::PerChannel(c) | DepLayer::Attention(c) | DepLayer::GlobalPool(c) => Some(*c),
            DepLayer::Fc { in_features, .. } => Some(*in_features),
            DepLayer::Residual(inner) => inner.first().and_then(DepLayer::in_channels),
            DepLayer::Parallel(branches) => branches.first().and_then(|b| b.first()).and_then(DepLayer::in_channels),
        }
    }
}

pub fn layer_dependency(layer: &DepLayer) -> Result<DependencyMatrix> {
    match layer {
        DepLayer::Conv(spec) => {
            spec.validate().map_err(|e| Error::Analysis(e.to_string()))?;
            Ok(DependencyMatrix::grouped(spec.out_channels, spec.in_channels, spec.groups))
        }
        DepLayer::PerChannel(c) | DepLayer::GlobalPool(c) => Ok(DependencyMatrix::identity(*c)),
        DepLayer::Attention(c) => Ok(DependencyMatrix::all_true(*c, *c)),
        DepLayer::Fc { in_features, out_features } => Ok(DependencyMatrix::all_true(*out_features, *in_features)),
        DepLayer::Residual(inner) => {
            let f = propagate(inner)?;
            f.union(&DependencyMatrix::identity(f.cols()))
        }
        DepLayer::Parallel(branches) => {
            let mut acc: Option<DependencyMatrix> = None;
            for b in branches {
                let m = propagate(b)?;
                acc = Some(match acc {
                    Some(a) => a.union(&m)?,
                    None => m,
                });
            }
            acc.ok_or_else(|| Error::Analysis("parallel layer without branches".into()))
        }
    }
}

/// Boolean product of the layers' matrices, first layer applied first.
pub fn propagate(layers: &[DepLayer]) -> Result<DependencyMatrix> {
    let first = layers.first().ok_or_else(|| Error::Analysis("empty layer list".into()))?;
    let c = first.in_channels().ok_or_else(|| Error::Analysis("empty nested layer list".into()))?;
    let mut acc = DependencyMatrix::identity(c);
    for (k, layer) in layers.iter().enumerate() {
        let m = layer_dependency(layer)?;
        acc = m.compose(&acc).map_err(|e| Error::Analysis(format!("layer {k}: {e}")))?;
    }
    Ok(acc)
}

fn conv_layers(spec: ConvSpec, norm: bool, act: bool) -> Vec<DepLayer> {
    let c = spec.out_channels;
    let mut v = vec![DepLayer::Conv(spec)];
    if norm {
        v.push(DepLayer::PerChannel(c));
    }
    if act {
        v.push(DepLayer::PerChannel(c));
    }
    v
}

/// Layers from the depthwise input to the block output, residual excluded.
pub fn channel_local_layers(cfg: &BlockConfig) -> Vec<DepLayer> {
    let bn = cfg.options.batch_norm;
    let e = cfg.expanded();
    let mut v = conv_layers(ConvSpec::depthwise(e, DEPTHWISE_KERNEL, cfg.stride), bn, true);
    if cfg.placement == Placement::Between {
        v.push(DepLayer::Attention(e));
    }
    v.extend(conv_layers(ConvSpec::pointwise(e, cfg.out_channels, cfg.groups), bn, false));
    if cfg.placement == Placement::AfterProjection {
        v.push(DepLayer::Attention(cfg.out_channels));
    }
    v
}

/// Every layer of `F(x)`, from the block input.
pub fn residual_fn_layers(cfg: &BlockConfig) -> Vec<DepLayer> {
    let mut v = Vec::new();
    if cfg.placement == Placement::BeforeExpansion {
        v.push(DepLayer::Attention(cfg.in_channels));
    }
    if cfg.has_expansion() {
        v.extend(conv_layers(ConvSpec::pointwise(cfg.in_channels, cfg.expanded(), 1), cfg.options.batch_norm, true));
    }
    v.extend(channel_local_layers(cfg));
    v
}

/// The whole block as one layer.
pub fn block_layer(cfg: &BlockConfig) -> DepLayer {
    wrap_residual(cfg, residual_fn_layers(cfg))
}

fn wrap_residual(cfg: &BlockConfig, f: Vec<DepLayer>) -> DepLayer {
    if cfg.residual() {
        DepLayer::Residual(f)
    } else if let [single] = f.as_slice() {
        single.clone()
    } else {
        DepLayer::Parallel(vec![f])
    }
}

/// Ensemble of branches. Sharing the trunk does not change the pattern
/// since each branch's projection reads the same attended features.
pub fn ensemble_layer(configs: &[BlockConfig]) -> DepLayer {
    let branches = configs.iter().map(residual_fn_layers).collect();
    let f = vec![DepLayer::Parallel(branches)];
    wrap_residual(&configs[0], f)
}

fn plan_layer(layer: &PlanLayer, batch_norm: bool) -> Vec<DepLayer> {
    match layer {
        PlanLayer::Conv { spec, .. } => conv_layers(*spec, batch_norm, true),
        PlanLayer::Ant { cfg, .. } | PlanLayer::InvRes { cfg, .. } => vec![block_layer(cfg)],
        PlanLayer::EAnt { configs, .. } => vec![ensemble_layer(configs)],
        PlanLayer::Pool { channels, .. } => vec![DepLayer::GlobalPool(*channels)],
        PlanLayer::Fc { in_features, out_features, .. } => {
            vec![DepLayer::Fc { in_features: *in_features, out_features: *out_features }]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub fcrf: bool,
    pub witness: Option<(usize, usize)>,
    pub matrix_density: f64,
}

impl Verdict {
    pub fn of(m: &DependencyMatrix) -> Self {
        Self { fcrf: m.is_all_true(), witness: m.first_gap(), matrix_density: m.density() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Which part of a block is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Block input to block output, residual included.
    Block,
    /// Depthwise input to block output: the channel-local part whose
    /// coverage the attention unit is meant to guarantee.
    ChannelLocal,
}

pub fn block_matrix(cfg: &BlockConfig, scope: Scope) -> Result<DependencyMatrix> {
    match scope {
        Scope::Block => layer_dependency(&block_layer(cfg)),
        Scope::ChannelLocal => propagate(&channel_local_layers(cfg)),
    }
}

pub fn ensemble_matrix(configs: &[BlockConfig], scope: Scope) -> Result<DependencyMatrix> {
    match scope {
        Scope::Block => layer_dependency(&ensemble_layer(configs)),
        Scope::ChannelLocal => layer_dependency(&DepLayer::Parallel(configs.iter().map(channel_local_layers).collect())),
    }
}

pub fn check_block(cfg: &BlockConfig, scope: Scope) -> Result<Verdict> {
    block_matrix(cfg, scope).map(|m| Verdict::of(&m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockVerdict {
    pub block: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkVerdict {
    /// End-to-end coverage and channel-local coverage of every block.
    pub fcrf: bool,
    /// First failing block and pair, or the end-to-end gap.
    pub witness: Option<(usize, usize)>,
    pub witness_block: Option<String>,
    pub matrix_density: f64,
    pub end_to_end: Verdict,
    pub blocks: Vec<BlockVerdict>,
}

impl NetworkVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

/// End-to-end dependency matrix of a network, input channels to logits.
pub fn network_matrix(spec: &NetworkSpec) -> Result<DependencyMatrix> {
    let plan = spec.resolve()?;
    let layers: Vec<DepLayer> = plan.layers().flat_map(|l| plan_layer(l, spec.options.batch_norm)).collect();
    propagate(&layers)
}

/// Analyses a network end to end and every block's channel-local part.
pub fn check_network(spec: &NetworkSpec) -> Result<NetworkVerdict> {
    let plan = spec.resolve()?;
    let end_to_end = Verdict::of(&network_matrix(spec)?);
    let mut blocks = Vec::new();
    for layer in plan.layers() {
        let m = match layer {
            PlanLayer::Ant { cfg, .. } | PlanLayer::InvRes { cfg, .. } => block_matrix(cfg, Scope::ChannelLocal)?,
            PlanLayer::EAnt { configs, .. } => ensemble_matrix(configs, Scope::ChannelLocal)?,
            _ => continue,
        };
        blocks.push(BlockVerdict { block: layer.name().to_string(), verdict: Verdict::of(&m) });
    }
    let failing = blocks.iter().find(|b| !b.verdict.fcrf);
    let (witness, witness_block, density) = match failing {
        Some(b) => (b.verdict.witness, Some(b.block.clone()), b.verdict.matrix_density),
        None => (end_to_end.witness, None, end_to_end.matrix_density),
    };
    Ok(NetworkVerdict { fcrf: end_to_end.fcrf && failing.is_none(), witness, witness_block, matrix_density: density, end_to_end, blocks })
}

/// Numeric dependency estimate: `(o, i)` is marked when perturbing input
/// channel `i` of `base` changes output channel `o` by more than `tol`.
pub fn perturbation_matrix(base: &Tensor, mut f: impl FnMut(&Tensor) -> Result<Tensor>, delta: f64, tol: f64) -> Result<DependencyMatrix> {
    let (n, c, h, w) = base.dims4()?;
    let y0 = f(base)?;
    let (_, co, ho, wo) = y0.dims4()?;
    let mut bits = vec![false; co * c];
    for i in 0..c {
        let mut x = base.clone();
        for b in 0..n {
            let start = (b * c + i) * h * w;
            for (k, v) in x.data_mut()[start..start + h * w].iter_mut().enumerate() {
                *v += delta * (1.0 + (k % 7) as f64 * 0.1);
            }
        }
        let y = f(&x)?;
        for b in 0..n {
            for o in 0..co {
                let start = (b * co + o) * ho * wo;
                let changed =
                    y0.data()[start..start + ho * wo].iter().zip(&y.data()[start..start + ho * wo]).any(|(a, b)| (a - b).abs() > tol);
                bits[o * c + i] |= changed;
            }
        }
    }
    Ok(DependencyMatrix { rows: co, cols: c, bits })
}

/// Writes a summary line per block, for humans.
pub fn describe(verdict: &NetworkVerdict) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "end-to-end: fcrf={} density={:.3}", verdict.end_to_end.fcrf, verdict.end_to_end.matrix_density);
    for b in &verdict.blocks {
        let w = b.verdict.witness.map(|(o, i)| format!(" witness=(out {o}, in {i})")).unwrap_or_default();
        let _ = writeln!(out, "{}: fcrf={} density={:.3}{w}", b.block, b.verdict.fcrf, b.verdict.matrix_density);
    }
    out
}
