use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, KinkRegion, Var};
use crate::network::Network;
use crate::ops::{Mode, RunningStats};
use crate::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub eps: f64,
    /// Minimum number of compared coordinates (all λ are added on top).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, samples: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates whose ±ε evaluations landed on different sides of an
    /// activation kink.
    pub skipped: usize,
    pub lambdas_checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares reverse-mode gradients with central differences.
///
/// `forward` records a computation over the bound parameters and returns
/// its output; the checked loss is the output's inner product with a fixed
/// random tensor. Batch statistics are restored after every evaluation.
pub fn gradcheck<F>(store: &mut ParamStore, cfg: GradcheckConfig, mut forward: F) -> Result<GradcheckReport>
where
    F: FnMut(&mut Graph, &Bound, &mut [RunningStats]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stats0 = store.stats().to_vec();
    let mut projection: Option<Tensor> = None;

    let mut eval =
        |store: &mut ParamStore, rng: &mut ChaCha8Rng, want_grads: bool| -> Result<(f64, Vec<KinkRegion>, Option<Vec<Tensor>>)> {
            let mut graph = Graph::new().with_kink_recording();
            let bound = store.bind(&mut graph);
            let mut stats = stats0.clone();
            let out = forward(&mut graph, &bound, &mut stats)?;
            let shape = graph.value(out).shape().to_vec();
            let proj = projection.get_or_insert_with(|| Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))).clone();
            let loss = graph.dot(out, proj)?;
            let value = graph.value(loss).data()[0];
            let grads = if want_grads {
                let mut g = graph.backward(loss)?;
                Some(
                    bound
                        .vars()
                        .iter()
                        .zip(store.entries())
                        .map(|(&v, e)| g.take(v).unwrap_or_else(|| Tensor::zeros(e.value.shape())))
                        .collect(),
                )
            } else {
                None
            };
            Ok((value, graph.kink_regions().to_vec(), grads))
        };

    let (_, _, grads) = eval(store, &mut rng, true)?;
    let grads = grads.expect("requested");

    let coords: Vec<(usize, usize)> =
        store.entries().iter().enumerate().flat_map(|(p, e)| (0..e.value.numel()).map(move |k| (p, k))).collect();
    let lambdas: Vec<(usize, usize)> = coords.iter().copied().filter(|&(p, _)| store.entries()[p].kind == ParamKind::Logits).collect();
    let order: Vec<usize> = sample(&mut rng, coords.len(), coords.len()).into_vec();

    let mut report =
        GradcheckReport { max_rel_err: 0.0, worst_param: String::new(), worst_index: 0, checked: 0, skipped: 0, lambdas_checked: 0 };
    let mut check = |store: &mut ParamStore, rng: &mut ChaCha8Rng, (p, k): (usize, usize), report: &mut GradcheckReport| -> Result<bool> {
        let id = ParamId(p);
        let orig = store.get(id).data()[k];
        store.get_mut(id).data_mut()[k] = orig + cfg.eps;
        let (lp, rp, _) = eval(store, rng, false)?;
        store.get_mut(id).data_mut()[k] = orig - cfg.eps;
        let (lm, rm, _) = eval(store, rng, false)?;
        store.get_mut(id).data_mut()[k] = orig;
        if rp != rm {
            report.skipped += 1;
            return Ok(false);
        }
        let numeric = (lp - lm) / (2.0 * cfg.eps);
        let err = relative_error(grads[p].data()[k], numeric);
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("gradient check of {}[{k}]", store.entries()[p].name)));
        }
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = err;
            report.worst_param = store.entries()[p].name.clone();
            report.worst_index = k;
        }
        report.checked += 1;
        Ok(true)
    };

    for &c in &lambdas {
        if check(store, &mut rng, c, &mut report)? {
            report.lambdas_checked += 1;
        }
    }
    let mut sampled = 0;
    for &i in &order {
        if sampled >= cfg.samples {
            break;
        }
        if lambdas.contains(&coords[i]) {
            continue;
        }
        if check(store, &mut rng, coords[i], &mut report)? {
            sampled += 1;
        }
    }
    Ok(report)
}

/// Gradient check of a whole network on `input` (batch statistics mode).
pub fn gradcheck_network(net: &mut Network, input: &Tensor, cfg: GradcheckConfig) -> Result<GradcheckReport> {
    let layers = net.layers.clone();
    let spec_shape = net.spec.input_shape;
    let (_, c, h, w) = input.dims4()?;
    if [c, h, w] != spec_shape {
        return Err(Error::Dimension(format!("input {:?} does not match {:?}", input.shape(), spec_shape)));
    }
    let x = input.clone();
    gradcheck(&mut net.store, cfg, |graph, bound, stats| {
        let mut ctx = crate::blocks::Ctx { graph, bound, stats, mode: Mode::Train };
        let mut v = ctx.graph.input(x.clone());
        for layer in &layers {
            v = layer.forward(&mut ctx, v)?;
        }
        Ok(v)
    })
}
