//! Analytic parameter and multiply-add accounting.
//!
//! One multiply-accumulate is one MAdd. Normalization parameters (scale and
//! shift per channel) count as parameters but never as MAdds; pooling,
//! activations, sigmoid and elementwise products are excluded from MAdds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::{NetworkSpec, PlanLayer, StageOp};
use crate::blocks::{BlockConfig, Placement, DEPTHWISE_KERNEL};
use crate::error::{config_err, Error, Result};
use crate::network::Network;
use crate::tensor::{ConvSpec, Tensor};

/// `(params, madds)` of one convolution producing an `out_hw` map.
/// Parameters include the bias when the spec has one; MAdds never do.
pub fn conv_cost(spec: &ConvSpec, out_hw: (usize, usize)) -> (u64, u64) {
    let weights = spec.weight_count();
    let bias = if spec.bias { spec.out_channels as u64 } else { 0 };
    (weights + bias, weights * (out_hw.0 * out_hw.1) as u64)
}

/// Cost of the two attention FC layers over `channels` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttentionCost {
    /// `2·C'²/r`.
    pub weights: u64,
    /// `C'/r + C'`, counted only when biases are enabled.
    pub biases: u64,
    /// `2·C'²/r`: the FCs act on the pooled `1×1` vector.
    pub madds: u64,
}

pub fn attention_cost(channels: usize, reduction: usize) -> Result<AttentionCost> {
    if reduction == 0 || !channels.is_multiple_of(reduction) {
        return config_err(format!("attention over {channels} channels not divisible by reduction ratio {reduction}"));
    }
    let (c, h) = (channels as u64, (channels / reduction) as u64);
    Ok(AttentionCost { weights: 2 * c * h, biases: c + h, madds: 2 * c * h })
}

/// Counting switches. The defaults are the toolkit's declared convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Conventions {
    pub count_bn_params: bool,
    pub count_attention: bool,
    pub attention_bias: bool,
    /// Count e-ANTBlock branches as sharing expansion, depthwise and
    /// attention layers (projections stay per branch).
    pub branch_sharing: bool,
}

impl Default for Conventions {
    fn default() -> Self {
        Self { count_bn_params: true, count_attention: true, attention_bias: true, branch_sharing: false }
    }
}

impl Conventions {
    /// Conventions matching what `spec` actually instantiates.
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        Self {
            count_bn_params: spec.options.batch_norm,
            attention_bias: spec.options.attention_bias,
            branch_sharing: spec.stages.iter().any(|s| s.share_trunk),
            ..Self::default()
        }
    }

    /// Applies a comma-separated list of switches such as
    /// `no-bn,no-attention-bias,shared-branches`.
    pub fn parse_switches(mut self, list: &str) -> Result<Self> {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "bn" => self.count_bn_params = true,
                "no-bn" => self.count_bn_params = false,
                "attention" => self.count_attention = true,
                "no-attention" => self.count_attention = false,
                "attention-bias" => self.attention_bias = true,
                "no-attention-bias" => self.attention_bias = false,
                "shared-branches" => self.branch_sharing = true,
                "separate-branches" => self.branch_sharing = false,
                other => return Err(Error::Parse { context: "conventions".into(), message: format!("unknown switch '{other}'") }),
            }
        }
        Ok(self)
    }

    pub fn label(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "bn_params={} attention={} attention_bias={} branch_sharing={}",
            on(self.count_bn_params),
            on(self.count_attention),
            on(self.attention_bias),
            on(self.branch_sharing)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostRow {
    pub layer: String,
    pub op: String,
    /// `(C, H, W)`.
    pub out_shape: [usize; 3],
    pub params: u64,
    pub madds: u64,
}

impl CostRow {
    pub fn out_shape_str(&self) -> String {
        let [c, h, w] = self.out_shape;
        format!("{c}x{h}x{w}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Totals {
    pub params: u64,
    pub madds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub name: String,
    pub rows: Vec<CostRow>,
    pub totals: Totals,
    pub conventions: Conventions,
}

struct Rows<'a> {
    rows: Vec<CostRow>,
    conv: &'a Conventions,
}

impl Rows<'_> {
    fn conv(&mut self, name: String, op: &str, spec: &ConvSpec, out_hw: (usize, usize), batch_norm: bool) {
        let (mut params, madds) = conv_cost(spec, out_hw);
        if batch_norm && self.conv.count_bn_params {
            params += 2 * spec.out_channels as u64;
        }
        self.rows.push(CostRow { layer: name, op: op.into(), out_shape: [spec.out_channels, out_hw.0, out_hw.1], params, madds });
    }

    fn attention(&mut self, name: String, channels: usize, reduction: usize, hw: (usize, usize)) -> Result<()> {
        if !self.conv.count_attention {
            return Ok(());
        }
        let a = attention_cost(channels, reduction)?;
        let params = a.weights + if self.conv.attention_bias { a.biases } else { 0 };
        self.rows.push(CostRow { layer: name, op: "attention".into(), out_shape: [channels, hw.0, hw.1], params, madds: a.madds });
        Ok(())
    }

    fn trunk(&mut self, name: &str, cfg: &BlockConfig, in_hw: (usize, usize), out_hw: (usize, usize)) -> Result<()> {
        let bn = cfg.options.batch_norm;
        if cfg.placement == Placement::BeforeExpansion {
            self.attention(format!("{name}.att"), cfg.in_channels, cfg.reduction, in_hw)?;
        }
        if cfg.has_expansion() {
            self.conv(format!("{name}.expand"), "conv1x1", &ConvSpec::pointwise(cfg.in_channels, cfg.expanded(), 1), in_hw, bn);
        }
        let dw = ConvSpec::depthwise(cfg.expanded(), DEPTHWISE_KERNEL, cfg.stride);
        self.conv(format!("{name}.dw"), "dwconv3x3", &dw, out_hw, bn);
        if cfg.placement == Placement::Between {
            self.attention(format!("{name}.att"), cfg.expanded(), cfg.reduction, out_hw)?;
        }
        Ok(())
    }

    fn projection(&mut self, name: &str, cfg: &BlockConfig, out_hw: (usize, usize)) -> Result<()> {
        let op = if cfg.groups > 1 { "gconv1x1" } else { "conv1x1" };
        let spec = ConvSpec::pointwise(cfg.expanded(), cfg.out_channels, cfg.groups);
        self.conv(format!("{name}.project"), op, &spec, out_hw, cfg.options.batch_norm);
        if cfg.placement == Placement::AfterProjection {
            self.attention(format!("{name}.att"), cfg.out_channels, cfg.reduction, out_hw)?;
        }
        Ok(())
    }

    fn block(&mut self, name: &str, cfg: &BlockConfig, in_hw: (usize, usize), out_hw: (usize, usize)) -> Result<()> {
        self.trunk(name, cfg, in_hw, out_hw)?;
        self.projection(name, cfg, out_hw)
    }

    fn layer(&mut self, layer: &PlanLayer, batch_norm: bool) -> Result<()> {
        match layer {
            PlanLayer::Conv { name, spec, out_hw, .. } => {
                let op = if spec.kernel == 1 { "conv1x1" } else { "conv3x3" };
                self.conv(name.clone(), op, spec, *out_hw, batch_norm);
            }
            PlanLayer::Ant { name, cfg, in_hw, out_hw } | PlanLayer::InvRes { name, cfg, in_hw, out_hw } => {
                self.block(name, cfg, *in_hw, *out_hw)?;
            }
            PlanLayer::EAnt { name, configs, share_trunk, in_hw, out_hw } => {
                let shared = *share_trunk || self.conv.branch_sharing;
                for (j, cfg) in configs.iter().enumerate() {
                    let bname = format!("{name}.b{j}");
                    if shared && j > 0 {
                        self.projection(&bname, cfg, *out_hw)?;
                    } else {
                        self.block(&bname, cfg, *in_hw, *out_hw)?;
                    }
                }
                let c = configs[0].out_channels;
                self.rows.push(CostRow {
                    layer: format!("{name}.lambda"),
                    op: "ensemble".into(),
                    out_shape: [c, out_hw.0, out_hw.1],
                    params: configs.len() as u64,
                    madds: 0,
                });
            }
            PlanLayer::Pool { name, channels, .. } => {
                self.rows.push(CostRow { layer: name.clone(), op: "avgpool".into(), out_shape: [*channels, 1, 1], params: 0, madds: 0 });
            }
            PlanLayer::Fc { name, in_features, out_features } => {
                let w = (*in_features * *out_features) as u64;
                self.rows.push(CostRow {
                    layer: name.clone(),
                    op: "fc".into(),
                    out_shape: [*out_features, 1, 1],
                    params: w + *out_features as u64,
                    madds: w,
                });
            }
        }
        Ok(())
    }
}

fn finish(name: String, rows: Vec<CostRow>, conventions: Conventions) -> CostReport {
    let totals = rows.iter().fold(Totals::default(), |t, r| Totals { params: t.params + r.params, madds: t.madds + r.madds });
    CostReport { name, rows, totals, conventions }
}

/// Per-layer costs of `spec` in execution order.
pub fn network_cost(spec: &NetworkSpec, conventions: Conventions) -> Result<CostReport> {
    let plan = spec.resolve()?;
    let mut rows = Rows { rows: Vec::new(), conv: &conventions };
    for layer in plan.layers() {
        rows.layer(layer, spec.options.batch_norm)?;
    }
    Ok(finish(spec.name.clone(), rows.rows, conventions))
}

/// Costs of a single block (ANTBlock or inverted residual) on an `in_hw`
/// input.
pub fn block_cost(name: &str, cfg: &BlockConfig, in_hw: (usize, usize), conventions: Conventions) -> Result<CostReport> {
    cfg.validate()?;
    let out_hw = ConvSpec::depthwise(cfg.expanded(), DEPTHWISE_KERNEL, cfg.stride).out_hw(in_hw.0, in_hw.1)?;
    let mut rows = Rows { rows: Vec::new(), conv: &conventions };
    rows.block(name, cfg, in_hw, out_hw)?;
    Ok(finish(name.to_string(), rows.rows, conventions))
}

/// Sum of the attention rows of a report.
pub fn attention_increment(report: &CostReport) -> Totals {
    report
        .rows
        .iter()
        .filter(|r| r.op == "attention")
        .fold(Totals::default(), |t, r| Totals { params: t.params + r.params, madds: t.madds + r.madds })
}

/// Closed-form attention MAdds over a stage table: `2·Σ_i n_i·C'_i²/r_i`,
/// where the first block of a stage attends over its own input width.
pub fn attention_closed_form(spec: &NetworkSpec) -> Result<u64> {
    let plan = spec.resolve()?;
    let mut total = 0u64;
    for stage in &plan.stages {
        let st = &stage.stage;
        if !matches!(st.op, StageOp::Antblock | StageOp::EAntblock) || st.placement == Placement::None {
            continue;
        }
        let attended = |c_in: usize| match st.placement {
            Placement::BeforeExpansion => c_in,
            Placement::AfterProjection => stage.out_channels,
            _ => c_in * st.t,
        } as u64;
        let (first, rep) = (attended(stage.in_channels), attended(stage.out_channels));
        let per_branch = 2 * (first * first + (st.n as u64 - 1) * rep * rep) / st.r as u64;
        let branches = if st.op == StageOp::EAntblock && !st.share_trunk { st.branch_groups.len() as u64 } else { 1 };
        total += per_branch * branches;
    }
    Ok(total)
}

/// Multiply-accumulates actually executed by a forward pass of `input`
/// (batch of one), counted as the graph runs.
pub fn empirical_cost_check(network: &mut Network, input: &Tensor) -> Result<u64> {
    let mut graph = crate::graph::Graph::new().with_mac_counting();
    let n = input.dims4()?.0;
    if n != 1 {
        return Err(Error::Dimension(format!("cost check expects a batch of one, got {n}")));
    }
    network.forward(&mut graph, input, crate::ops::Mode::Eval)?;
    Ok(graph.macs())
}

impl CostReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,op,out_shape,params,madds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.layer, r.op, r.out_shape_str(), r.params, r.madds);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let shapes: Vec<String> = self.rows.iter().map(CostRow::out_shape_str).collect();
        let lw = self.rows.iter().map(|r| r.layer.len()).chain([5]).max().unwrap_or(5);
        let ow = self.rows.iter().map(|r| r.op.len()).chain([2]).max().unwrap_or(2);
        let sw = shapes.iter().map(String::len).chain([9]).max().unwrap_or(9);
        let mut out = String::new();
        let _ = writeln!(out, "{}  ({})", self.name, self.conventions.label());
        let _ = writeln!(out, "{:<lw$}  {:<ow$}  {:<sw$}  {:>12}  {:>14}", "layer", "op", "out_shape", "params", "madds");
        for (r, s) in self.rows.iter().zip(&shapes) {
            let _ = writeln!(out, "{:<lw$}  {:<ow$}  {:<sw$}  {:>12}  {:>14}", r.layer, r.op, s, r.params, r.madds);
        }
        let _ = writeln!(out, "{:<lw$}  {:<ow$}  {:<sw$}  {:>12}  {:>14}", "total", "", "", self.totals.params, self.totals.madds);
        let _ = writeln!(out, "total: {:.3}M params, {:.1}M MAdds", self.totals.params as f64 / 1e6, self.totals.madds as f64 / 1e6);
        out
    }
}

/// A published `(params, MAdds)` pair, in millions, with its source row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Published {
    pub model: &'static str,
    pub params_m: f64,
    pub madds_m: f64,
    pub source: &'static str,
}

const IMAGENET_TABLE: &str = "ImageNet results table";
const CIFAR_TABLE: &str = "CIFAR-100 results table";
const RATIO_TABLE: &str = "CIFAR-100 reduction-ratio table";

/// Literature baselines on ImageNet. These are data, never computed.
pub const IMAGENET_LITERATURE: &[Published] = &[
    Published { model: "MobileNetV1", params_m: 4.2, madds_m: 575.0, source: IMAGENET_TABLE },
    Published { model: "SqueezeNext", params_m: 3.2, madds_m: 708.0, source: IMAGENET_TABLE },
    Published { model: "ShuffleNet (1.5)", params_m: 3.4, madds_m: 292.0, source: IMAGENET_TABLE },
    Published { model: "ShuffleNet (x2)", params_m: 5.4, madds_m: 524.0, source: IMAGENET_TABLE },
    Published { model: "CondenseNet (G=C=4)", params_m: 2.9, madds_m: 274.0, source: IMAGENET_TABLE },
    Published { model: "CondenseNet (G=C=8)", params_m: 4.8, madds_m: 529.0, source: IMAGENET_TABLE },
    Published { model: "MobileNetV2 (1.4)", params_m: 6.9, madds_m: 585.0, source: IMAGENET_TABLE },
    Published { model: "NASNet-A", params_m: 5.3, madds_m: 564.0, source: IMAGENET_TABLE },
    Published { model: "AmoebaNet-A", params_m: 5.1, madds_m: 555.0, source: IMAGENET_TABLE },
    Published { model: "PNASNet", params_m: 5.1, madds_m: 588.0, source: IMAGENET_TABLE },
    Published { model: "DARTS", params_m: 4.9, madds_m: 595.0, source: IMAGENET_TABLE },
];

pub const CIFAR_LITERATURE: &[Published] = &[Published { model: "ShuffleNet (1.5)", params_m: 2.3, madds_m: 91.0, source: CIFAR_TABLE }];

/// Published budgets of the models this toolkit builds, keyed by spec name.
pub const PUBLISHED_BUDGETS: &[(&str, Published)] = &[
    ("antnet_imagenet_g2", Published { model: "ANTNet (g = 2)", params_m: 3.2, madds_m: 267.0, source: IMAGENET_TABLE }),
    ("antnet_imagenet_g1", Published { model: "ANTNet (g = 1)", params_m: 3.7, madds_m: 322.0, source: IMAGENET_TABLE }),
    ("antnet_imagenet_g1_a1.4", Published { model: "ANTNet (α=1.4)", params_m: 6.8, madds_m: 598.0, source: IMAGENET_TABLE }),
    ("mobilenetv2_imagenet", Published { model: "MobileNetV2", params_m: 3.4, madds_m: 300.0, source: IMAGENET_TABLE }),
    ("e_antnet_imagenet", Published { model: "e-ANTNet", params_m: 5.5, madds_m: 545.0, source: IMAGENET_TABLE }),
    ("antnet_cifar_g2", Published { model: "ANTNet (g = 2)", params_m: 2.2, madds_m: 73.2, source: CIFAR_TABLE }),
    ("antnet_cifar_g1", Published { model: "ANTNet (g = 1)", params_m: 2.7, madds_m: 91.4, source: CIFAR_TABLE }),
    ("mobilenetv2_cifar", Published { model: "MobileNetV2", params_m: 2.4, madds_m: 91.1, source: CIFAR_TABLE }),
    ("e_antnet_cifar", Published { model: "e-ANTNet", params_m: 4.4, madds_m: 154.9, source: CIFAR_TABLE }),
    ("antnet_cifar_g1_r8", Published { model: "ANTNet r=8", params_m: 3.5, madds_m: 92.3, source: RATIO_TABLE }),
    ("antnet_cifar_g1_r16", Published { model: "ANTNet r=16", params_m: 3.0, madds_m: 91.7, source: RATIO_TABLE }),
    ("antnet_cifar_g1_r32", Published { model: "ANTNet r=32", params_m: 2.8, madds_m: 91.5, source: RATIO_TABLE }),
];

pub fn published_budget(spec_name: &str) -> Option<Published> {
    PUBLISHED_BUDGETS.iter().find(|(n, _)| *n == spec_name).map(|(_, p)| *p)
}

/// `(value − reference) / reference` in percent.
pub fn percent_change(value: f64, reference: f64) -> f64 {
    (value - reference) / reference * 100.0
}

/// Rounds a count to the 0.1M precision the result tables use.
pub fn round_to_tenth_million(count: u64) -> f64 {
    (count as f64 / 1e5).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub computed: bool,
    pub params_m: f64,
    pub madds_m: f64,
    /// Published figures for computed models, when known.
    pub published: Option<(f64, f64)>,
    /// Computed vs published, percent.
    pub delta_vs_published: Option<(f64, f64)>,
    /// Relative to the baseline row, percent.
    pub delta_vs_baseline: Option<(f64, f64)>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: Option<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table of computed reports and literature fixtures. Deltas
/// against `baseline` (a report name) are given for every row.
pub fn compare(reports: &[CostReport], fixtures: &[Published], baseline: Option<&str>) -> Comparison {
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| {
            let (p, m) = (r.totals.params as f64 / 1e6, r.totals.madds as f64 / 1e6);
            let published = published_budget(&r.name).map(|b| (b.params_m, b.madds_m));
            ComparisonRow {
                model: r.name.clone(),
                computed: true,
                params_m: p,
                madds_m: m,
                published,
                delta_vs_published: published.map(|(pp, pm)| (percent_change(p, pp), percent_change(m, pm))),
                delta_vs_baseline: None,
                source: "computed".into(),
            }
        })
        .collect();
    rows.extend(fixtures.iter().map(|f| ComparisonRow {
        model: f.model.into(),
        computed: false,
        params_m: f.params_m,
        madds_m: f.madds_m,
        published: None,
        delta_vs_published: None,
        delta_vs_baseline: None,
        source: f.source.into(),
    }));
    let base = baseline.and_then(|b| rows.iter().find(|r| r.model == b)).map(|r| (r.params_m, r.madds_m));
    if let Some((bp, bm)) = base {
        for r in &mut rows {
            r.delta_vs_baseline = Some((percent_change(r.params_m, bp), percent_change(r.madds_m, bm)));
        }
    }
    Comparison { baseline: base.and(baseline.map(String::from)), rows }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let fmt_pair = |p: Option<(f64, f64)>, pct: bool| match p {
            Some((a, b)) if pct => format!("{a:+.1}% / {b:+.1}%"),
            Some((a, b)) => format!("{a:.1}M / {b:.1}M"),
            None => "-".into(),
        };
        let mw = self.rows.iter().map(|r| r.model.len()).chain([5]).max().unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<mw$}  {:>9}  {:>10}  {:>16}  {:>18}  {:>18}  source",
            "model", "params(M)", "madds(M)", "published", "vs published", "vs baseline"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<mw$}  {:>9.3}  {:>10.1}  {:>16}  {:>18}  {:>18}  {}",
                r.model,
                r.params_m,
                r.madds_m,
                fmt_pair(r.published, false),
                fmt_pair(r.delta_vs_published, true),
                fmt_pair(r.delta_vs_baseline, true),
                r.source
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}
