mod common;

use antkit::arch::*;
use antkit::blocks::{AntBlock, BlockConfig, EAntBlock, InvertedResidual, Placement};
use antkit::costmodel::*;
use antkit::graph::Graph;
use antkit::network::build_network;
use antkit::ops::conv2d_counted;
use antkit::params::ParamStore;
use antkit::{ConvSpec, Tensor};
use common::{random_tensor, run};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand formula: `K²·(C1/g)·C2·H'·W'`.
fn hand_conv_macs(spec: &ConvSpec, h: usize, w: usize) -> u64 {
    let (ho, wo) = ((h + 2 * spec.padding - spec.kernel) / spec.stride + 1, (w + 2 * spec.padding - spec.kernel) / spec.stride + 1);
    (spec.kernel * spec.kernel * (spec.in_channels / spec.groups) * spec.out_channels * ho * wo) as u64
}

fn random_conv(rng: &mut ChaCha8Rng) -> (ConvSpec, usize, usize) {
    let g = [1, 2, 3, 4][rng.random_range(0..4)];
    let kernel = [1, 3][rng.random_range(0..2)];
    let stride = rng.random_range(1..=2);
    let spec = if rng.random_bool(0.25) {
        ConvSpec::depthwise(g * rng.random_range(1..=4), kernel, stride)
    } else {
        ConvSpec::new(g * rng.random_range(1..=4), g * rng.random_range(1..=4), kernel, stride, g)
    };
    (spec, rng.random_range(3..=9), rng.random_range(3..=9))
}

#[test]
fn randomized_convolutions_count_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let (spec, h, w) = random_conv(&mut rng);
        let x = random_tensor(&[1, spec.in_channels, h, w], case);
        let wt = random_tensor(&spec.weight_shape(), case + 100);
        let mut counted = 0;
        let y = conv2d_counted::<true>(&x, &wt, None, &spec, &mut counted).unwrap();
        let (_, _, ho, wo) = y.dims4().unwrap();
        let (params, analytic) = conv_cost(&spec, (ho, wo));
        assert_eq!(analytic, counted, "case {case}: {spec:?} on {h}×{w}");
        assert_eq!(analytic, hand_conv_macs(&spec, h, w), "case {case}");
        assert_eq!(params, wt.numel() as u64);
    }
}

fn random_block(rng: &mut ChaCha8Rng) -> BlockConfig {
    loop {
        let g = [1, 2, 4][rng.random_range(0..3)];
        let t = rng.random_range(1..=4);
        let c1 = g * rng.random_range(1..=3);
        let c2 = if rng.random_bool(0.4) { c1 } else { g * rng.random_range(1..=4) };
        let placement =
            [Placement::Between, Placement::None, Placement::BeforeExpansion, Placement::AfterProjection][rng.random_range(0..4)];
        let r = [1, 2, 4][rng.random_range(0..3)];
        let cfg = BlockConfig::new(c1, c2, t, rng.random_range(1..=2), g, r)
            .with_placement(placement)
            .with_expand_unit(t > 1 || rng.random_bool(0.5));
        if cfg.validate().is_ok() {
            return cfg;
        }
    }
}

#[test]
fn randomized_blocks_count_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..30 {
        let cfg = random_block(&mut rng);
        let hw = (rng.random_range(3..=8), rng.random_range(3..=8));
        let mut store = ParamStore::new();
        let block = AntBlock::new("b", cfg, &mut store, &mut rng).unwrap();
        let x = random_tensor(&[1, cfg.in_channels, hw.0, hw.1], case);
        let (_, counted) = run(&store, &x, |ctx, v| block.forward(ctx, v));
        let report = block_cost("b", &cfg, hw, Conventions::default()).unwrap();
        assert_eq!(report.totals.madds, counted, "case {case}: {cfg:?} on {hw:?}");
        assert_eq!(report.totals.params, store.scalar_count() as u64, "case {case}: {cfg:?}");
    }
}

#[test]
fn inverted_residual_and_ensemble_count_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = BlockConfig::new(8, 8, 3, 1, 1, 4).with_placement(Placement::None);
    let mut store = ParamStore::new();
    let ir = InvertedResidual::new("ir", cfg, &mut store, &mut rng).unwrap();
    let x = random_tensor(&[1, 8, 6, 6], 1);
    assert_eq!(run(&store, &x, |c, v| ir.forward(c, v)).1, block_cost("ir", &cfg, (6, 6), Conventions::default()).unwrap().totals.madds);

    let cfgs = [BlockConfig::new(8, 8, 2, 1, 1, 4), BlockConfig::new(8, 8, 2, 1, 2, 4)];
    let mut store = ParamStore::new();
    let e = EAntBlock::new("e", &cfgs, false, &mut store, &mut rng).unwrap();
    let branch_madds: u64 = cfgs.iter().map(|c| block_cost("b", c, (6, 6), Conventions::default()).unwrap().totals.madds).sum();
    assert_eq!(run(&store, &x, |c, v| e.forward(c, v)).1, branch_madds);
}

#[test]
fn networks_count_exactly() {
    for spec in [
        tiny_antnet(3),
        reduced_antnet(2, 16, 2).unwrap(),
        reduced_e_antnet(16, 2).unwrap(),
        reduced(&mobilenet_v2_cifar(), 16, 2).unwrap(),
    ] {
        let mut net = build_network(&spec, 0).unwrap();
        let [c, h, w] = spec.input_shape;
        let x = random_tensor(&[1, c, h, w], 3);
        let counted = empirical_cost_check(&mut net, &x).unwrap();
        let report = network_cost(&spec, Conventions::for_spec(&spec)).unwrap();
        assert_eq!(report.totals.madds, counted, "{}", spec.name);
        assert_eq!(report.totals.params, net.param_count() as u64, "{}", spec.name);
    }
}

#[test]
fn spot_values() {
    // Depthwise 3×3 then pointwise 32→64 at 112×112: 9·32·112² + 32·64·112².
    let dw = conv_cost(&ConvSpec::depthwise(32, 3, 1), (112, 112)).1;
    let pw = conv_cost(&ConvSpec::pointwise(32, 64, 1), (112, 112)).1;
    assert_eq!(dw + pw, 29_302_784);

    let (params, madds) = conv_cost(&ConvSpec::depthwise(4, 3, 1), (8, 8));
    assert_eq!((params, madds), (36, 2304));

    let x = Tensor::ones(&[1, 1, 1, 1]);
    let mut counted = 0;
    conv2d_counted::<true>(&x, &Tensor::ones(&[1, 1, 1, 1]), None, &ConvSpec::pointwise(1, 1, 1), &mut counted).unwrap();
    assert_eq!(counted, 1);

    // C1=8, t=2, g=2, r=4 on 8×8: expand 8·16·64, dw 9·16·64, attention 2·16·4, project 8·8·64.
    let cfg = BlockConfig::new(8, 8, 2, 1, 2, 4);
    let r = block_cost("b", &cfg, (8, 8), Conventions::default()).unwrap();
    assert_eq!(r.totals.madds, 8192 + 9216 + 128 + 4096);
    assert_eq!(attention_increment(&r).madds, 128);
}

#[test]
fn closed_form_attention_matches_rows() {
    for spec in [antnet_imagenet(2, 1.0).unwrap(), antnet_imagenet(1, 1.0).unwrap(), antnet_cifar(2).unwrap(), e_antnet_cifar()] {
        let report = network_cost(&spec, Conventions::for_spec(&spec)).unwrap();
        assert_eq!(attention_increment(&report).madds, attention_closed_form(&spec).unwrap(), "{}", spec.name);
    }
    // Independent recomputation from the stage table (t, r, c, n) for the ImageNet trace.
    let table = [
        (1usize, 8usize, 16usize, 1usize),
        (6, 8, 24, 2),
        (6, 12, 32, 3),
        (6, 16, 64, 4),
        (6, 24, 96, 3),
        (6, 32, 160, 3),
        (6, 64, 320, 1),
    ];
    let mut c_in = 32;
    let mut total = 0;
    for (t, r, c, n) in table {
        total += 2 * (t * c_in) * (t * c_in) / r;
        total += (n - 1) * 2 * (t * c) * (t * c) / r;
        c_in = c;
    }
    assert_eq!(attention_closed_form(&antnet_imagenet(2, 1.0).unwrap()).unwrap(), total as u64);
}

#[test]
fn grouping_halves_projection_cost() {
    let g1 = conv_cost(&ConvSpec::pointwise(96, 24, 1), (14, 14));
    let g2 = conv_cost(&ConvSpec::pointwise(96, 24, 2), (14, 14));
    assert_eq!((g1.0 / 2, g1.1 / 2), g2);
}

#[test]
fn counting_is_off_by_default() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 2, 3, 3]));
    let w = g.param(Tensor::ones(&[2, 2, 1, 1]));
    g.conv2d(x, w, None, ConvSpec::pointwise(2, 2, 1)).unwrap();
    assert_eq!(g.macs(), 0);
}
