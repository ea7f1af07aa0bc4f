//! Forward and backward kernels. Pure functions over [`Tensor`]s; the
//! autodiff [`Graph`](crate::graph::Graph) wires them together.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{ConvSpec, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn padded(input: &Tensor, p: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    if p == 0 {
        return Ok((input.data().to_vec(), hp, wp));
    }
    let mut out = vec![0.0; n * c * hp * wp];
    let src = input.data();
    for plane in 0..n * c {
        for y in 0..h {
            let s = plane * h * w + y * w;
            let d = plane * hp * wp + (y + p) * wp + p;
            out[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok((out, hp, wp))
}

fn check_conv(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<(usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return dim_err(format!("conv input has {c} channels, spec expects {}", spec.in_channels));
    }
    if weight.shape() != spec.weight_shape() {
        return dim_err(format!("conv weight shape {:?}, expected {:?}", weight.shape(), spec.weight_shape()));
    }
    match (bias, spec.bias) {
        (Some(b), true) if b.shape() == [spec.out_channels] => {}
        (None, false) => {}
        (Some(b), _) => return dim_err(format!("conv bias shape {:?} does not match spec {spec:?}", b.shape())),
        (None, true) => return dim_err("conv spec requires a bias tensor"),
    }
    let (h2, w2) = spec.out_hw(h, w)?;
    Ok((n, h, w, h2, w2))
}

/// Grouped 2-d convolution. With `COUNT` every executed multiply-accumulate
/// increments `macs`.
///
/// Output channel `o` belongs to group `o / (C2/g)` and reads input channels
/// `q·(C1/g) .. (q+1)·(C1/g)` of its group `q`.
pub fn conv2d_counted<const COUNT: bool>(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
    macs: &mut u64,
) -> Result<Tensor> {
    let (n, _h, _w, h2, w2) = check_conv(input, weight, bias, spec)?;
    let (pad, hp, wp) = padded(input, spec.padding)?;
    let (c1, c2, k, s) = (spec.in_channels, spec.out_channels, spec.kernel, spec.stride);
    let cin_g = c1 / spec.groups;
    let cout_g = c2 / spec.groups;
    let wdata = weight.data();
    let mut out = vec![0.0; n * c2 * h2 * w2];
    for b in 0..n {
        for oc in 0..c2 {
            let q = oc / cout_g;
            let obase = (b * c2 + oc) * h2 * w2;
            let oplane = &mut out[obase..obase + h2 * w2];
            for icl in 0..cin_g {
                let ic = q * cin_g + icl;
                let ibase = (b * c1 + ic) * hp * wp;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = wdata[((oc * cin_g + icl) * k + kh) * k + kw];
                        for oh in 0..h2 {
                            let row = ibase + (oh * s + kh) * wp + kw;
                            let orow = &mut oplane[oh * w2..(oh + 1) * w2];
                            for (ow, o) in orow.iter_mut().enumerate() {
                                *o += wv * pad[row + ow * s];
                                if COUNT {
                                    *macs += 1;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(bias) = bias {
                let bv = bias.data()[oc];
                oplane.iter_mut().for_each(|o| *o += bv);
            }
        }
    }
    Tensor::new(vec![n, c2, h2, w2], out)
}

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    conv2d_counted::<false>(input, weight, bias, spec, &mut 0)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(input: &Tensor, weight: &Tensor, spec: &ConvSpec, grad_out: &Tensor) -> Result<ConvGrads> {
    let (n, c1, h, w) = input.dims4()?;
    let (h2, w2) = spec.out_hw(h, w)?;
    if grad_out.shape() != [n, spec.out_channels, h2, w2] {
        return dim_err("conv upstream gradient has the wrong shape");
    }
    let (pad, hp, wp) = padded(input, spec.padding)?;
    let (c2, k, s, p) = (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    let cin_g = c1 / spec.groups;
    let cout_g = c2 / spec.groups;
    let wdata = weight.data();
    let go = grad_out.data();
    let mut gpad = vec![0.0; pad.len()];
    let mut gw = vec![0.0; wdata.len()];
    for b in 0..n {
        for oc in 0..c2 {
            let q = oc / cout_g;
            let gplane = &go[(b * c2 + oc) * h2 * w2..(b * c2 + oc + 1) * h2 * w2];
            for icl in 0..cin_g {
                let ic = q * cin_g + icl;
                let ibase = (b * c1 + ic) * hp * wp;
                for kh in 0..k {
                    for kw in 0..k {
                        let widx = ((oc * cin_g + icl) * k + kh) * k + kw;
                        let wv = wdata[widx];
                        let mut acc = 0.0;
                        for oh in 0..h2 {
                            let row = ibase + (oh * s + kh) * wp + kw;
                            for ow in 0..w2 {
                                let g = gplane[oh * w2 + ow];
                                acc += g * pad[row + ow * s];
                                gpad[row + ow * s] += wv * g;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    let mut gi = vec![0.0; n * c1 * h * w];
    for plane in 0..n * c1 {
        for y in 0..h {
            let d = plane * h * w + y * w;
            let src = plane * hp * wp + (y + p) * wp + p;
            gi[d..d + w].copy_from_slice(&gpad[src..src + w]);
        }
    }
    let bias = spec.bias.then(|| {
        let mut gb = vec![0.0; c2];
        for b in 0..n {
            for (oc, g) in gb.iter_mut().enumerate() {
                *g += go[(b * c2 + oc) * h2 * w2..(b * c2 + oc + 1) * h2 * w2].iter().sum::<f64>();
            }
        }
        Tensor::new(vec![c2], gb).expect("bias shape")
    });
    Ok(ConvGrads { input: Tensor::new(vec![n, c1, h, w], gi)?, weight: Tensor::new(weight.shape().to_vec(), gw)?, bias })
}

pub fn relu6(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 6.0))
}

/// Subgradient 0 at the kinks 0 and 6.
pub fn relu6_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if !(xv > 0.0 && xv < 6.0) {
            *gv = 0.0;
        }
    }
    g
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        *gv *= yv * (1.0 - yv);
    }
    g
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let data = x.data().chunks(hw).map(|plane| plane.iter().sum::<f64>() / hw as f64).collect();
    Tensor::new(vec![n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let hw = input_shape[2] * input_shape[3];
    let mut data = Vec::with_capacity(grad_out.numel() * hw);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// `x·Wᵀ + b` for `x: [N,Cin]`, `W: [Cout,Cin]`.
pub fn linear_counted<const COUNT: bool>(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, macs: &mut u64) -> Result<Tensor> {
    let (n, cin) = x.dims2()?;
    let (cout, wcin) = weight.dims2()?;
    if wcin != cin {
        return dim_err(format!("linear input width {cin} vs weight {:?}", weight.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return dim_err(format!("linear bias shape {:?}, expected [{cout}]", b.shape()));
        }
    }
    let mut out = vec![0.0; n * cout];
    for i in 0..n {
        let xr = &x.data()[i * cin..(i + 1) * cin];
        for o in 0..cout {
            let wr = &weight.data()[o * cin..(o + 1) * cin];
            let mut acc = bias.map_or(0.0, |b| b.data()[o]);
            for (a, b) in xr.iter().zip(wr) {
                acc += a * b;
                if COUNT {
                    *macs += 1;
                }
            }
            out[i * cout + o] = acc;
        }
    }
    Tensor::new(vec![n, cout], out)
}

pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    linear_counted::<false>(x, weight, bias, &mut 0)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (n, cin) = x.dims2()?;
    let (cout, _) = weight.dims2()?;
    let go = grad_out.data();
    let mut gi = vec![0.0; n * cin];
    let mut gw = vec![0.0; cout * cin];
    let mut gb = vec![0.0; cout];
    for i in 0..n {
        let xr = &x.data()[i * cin..(i + 1) * cin];
        for o in 0..cout {
            let g = go[i * cout + o];
            gb[o] += g;
            let wr = &weight.data()[o * cin..(o + 1) * cin];
            for j in 0..cin {
                gi[i * cin + j] += g * wr[j];
                gw[o * cin + j] += g * xr[j];
            }
        }
    }
    Ok(LinearGrads { input: Tensor::new(vec![n, cin], gi)?, weight: Tensor::new(vec![cout, cin], gw)?, bias: Tensor::new(vec![cout], gb)? })
}

/// Running statistics of one batch-normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics used by a normalization forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
}

pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &mut RunningStats, mode: Mode) -> Result<(Tensor, BnCache)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c {
        return dim_err(format!("batch norm over {c} channels got mismatched parameters"));
    }
    let hw = h * w;
    let count = n * hw;
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(format!("N·H·W = {count} < 2 in train mode")));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let vals = (0..n).flat_map(|b| x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter());
                let m = vals.clone().sum::<f64>() / count as f64;
                let v = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                mean[ch] = m;
                var[ch] = v;
                let unbiased = v * count as f64 / (count - 1) as f64;
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * m;
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
            }
            (mean, var)
        }
        Mode::Eval => (stats.mean.clone(), stats.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut out = x.clone();
    for b in 0..n {
        for ch in 0..c {
            let (g, be, m, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for v in &mut out.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                *v = g * (*v - m) * is + be;
            }
        }
    }
    Ok((out, BnCache { mean, inv_std, mode }))
}

pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn batch_norm_backward(x: &Tensor, gamma: &Tensor, cache: &BnCache, grad_out: &Tensor) -> Result<BnGrads> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut gi = vec![0.0; x.numel()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for ch in 0..c {
        let (m, is, gam) = (cache.mean[ch], cache.inv_std[ch], gamma.data()[ch]);
        let idx = |b: usize| (b * c + ch) * hw..(b * c + ch + 1) * hw;
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            for (g, xv) in grad_out.data()[idx(b)].iter().zip(&x.data()[idx(b)]) {
                let xhat = (xv - m) * is;
                sum_g += g;
                sum_gx += g * xhat;
            }
        }
        gg[ch] = sum_gx;
        gb[ch] = sum_g;
        for b in 0..n {
            for i in idx(b) {
                let g = grad_out.data()[i];
                gi[i] = match cache.mode {
                    Mode::Eval => gam * is * g,
                    Mode::Train => {
                        let xhat = (x.data()[i] - m) * is;
                        gam * is * (g - sum_g / count - xhat * sum_gx / count)
                    }
                };
            }
        }
    }
    Ok(BnGrads { input: Tensor::new(x.shape().to_vec(), gi)?, gamma: Tensor::new(vec![c], gg)?, beta: Tensor::new(vec![c], gb)? })
}

/// Numerically stable softmax of a vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_backward(y: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(grad_out).map(|(a, b)| a * b).sum();
    y.iter().zip(grad_out).map(|(yi, gi)| yi * (gi - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d(&x, &w, None, &ConvSpec::pointwise(1, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_scaling() {
        let x = t(&[1, 2, 1, 1], &[3.0, 5.0]);
        let w = t(&[2, 1, 1, 1], &[2.0, 10.0]);
        let y = conv2d(&x, &w, None, &ConvSpec::new(2, 2, 1, 1, 2)).unwrap();
        assert_eq!(y.data(), &[6.0, 50.0]);
    }

    #[test]
    fn grouped_equals_block_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_fn(&[1, 4, 5, 5], |_| rng.random_range(-1.0..1.0));
        let grouped = ConvSpec::new(4, 4, 3, 1, 2);
        let wg = Tensor::from_fn(&grouped.weight_shape(), |_| rng.random_range(-1.0..1.0));
        // Embed the grouped weight into a dense block-diagonal kernel.
        let dense = ConvSpec::new(4, 4, 3, 1, 1);
        let mut wd = Tensor::zeros(&dense.weight_shape());
        for oc in 0..4 {
            let q = oc / 2;
            for icl in 0..2 {
                let ic = q * 2 + icl;
                for k in 0..9 {
                    wd.data_mut()[(oc * 4 + ic) * 9 + k] = wg.data()[(oc * 2 + icl) * 9 + k];
                }
            }
        }
        let a = conv2d(&x, &wg, None, &grouped).unwrap();
        let b = conv2d(&x, &wd, None, &dense).unwrap();
        assert_eq!(a.shape(), b.shape());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_bad_groups_and_shapes() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let spec = ConvSpec::new(3, 4, 1, 1, 2);
        assert!(matches!(conv2d(&x, &Tensor::zeros(&[4, 1, 1, 1]), None, &spec), Err(Error::Config(_))));
        let spec = ConvSpec::new(4, 4, 1, 1, 1);
        assert!(matches!(conv2d(&x, &Tensor::zeros(&[4, 4, 1, 1]), None, &spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu6_values() {
        let y = relu6(&t(&[3], &[-1.0, 3.2, 7.0]));
        assert_eq!(y.data(), &[0.0, 3.2, 6.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let tiny = sigmoid_scalar(-800.0);
        assert!((0.0..1e-300).contains(&tiny) && !tiny.is_nan());
        for x in [0.3, 2.5, 17.0, 40.0] {
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_values() {
        let y = global_avg_pool(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let y = global_avg_pool(&Tensor::full(&[2, 3, 4, 5], 1.75)).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn linear_values() {
        let x = t(&[1, 2], &[0.5, -2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear(&x, &eye, Some(&Tensor::zeros(&[2]))).unwrap().data(), x.data());
        let b = t(&[3], &[1.0, 2.0, 3.0]);
        let y = linear(&x, &Tensor::zeros(&[3, 2]), Some(&b)).unwrap();
        assert_eq!(y.data(), b.data());
        // Independent dot-product oracle.
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let w = t(&[2, 3], &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let y = linear(&x, &w, None).unwrap();
        let expect = [1.4, 2.4, 1.2, 3.05];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn batch_norm_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(&[4, 3, 3, 3], |_| rng.random_range(-10.0..10.0));
        let (y, _) = batch_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), &mut RunningStats::new(3), Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.data()[(b * 3 + ch) * 9..(b * 3 + ch + 1) * 9].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6, "variance {v}");
        }
        // Input whose batch variance is exactly 1 − eps is a fixed point.
        let y1 = y.map(|v| v * (1.0 - BN_EPS).sqrt());
        let (z, _) = batch_norm(&y1, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), &mut RunningStats::new(3), Mode::Train).unwrap();
        assert!(z.max_abs_diff(&y1) < 1e-6);
        let beta = t(&[3], &[0.5, -1.0, 2.0]);
        let (z, _) = batch_norm(&x, &Tensor::zeros(&[3]), &beta, &mut RunningStats::new(3), Mode::Train).unwrap();
        for ch in 0..3 {
            assert!(z.data()[ch * 9..(ch + 1) * 9].iter().all(|&v| v == beta.data()[ch]));
        }
        let single = Tensor::zeros(&[1, 2, 1, 1]);
        let err = batch_norm(&single, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &mut RunningStats::new(2), Mode::Train);
        assert!(matches!(err, Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn batch_norm_running_stats_momentum() {
        let x = t(&[2, 1, 1, 1], &[1.0, 3.0]);
        let mut stats = RunningStats::new(1);
        batch_norm(&x, &Tensor::ones(&[1]), &Tensor::zeros(&[1]), &mut stats, Mode::Train).unwrap();
        assert!((stats.mean[0] - 0.2).abs() < 1e-15);
        // Unbiased batch variance 2.0.
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let w = softmax(&[3f64.ln(), 0.0]);
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
