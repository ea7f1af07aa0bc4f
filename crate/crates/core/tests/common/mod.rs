#![allow(dead_code)]

use antkit::blocks::Ctx;
use antkit::graph::{Graph, Var};
use antkit::ops::Mode;
use antkit::params::ParamStore;
use antkit::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Runs `f` on `x` in eval mode; returns the output and the MACs executed.
pub fn run(store: &ParamStore, x: &Tensor, f: impl Fn(&mut Ctx<'_>, Var) -> Result<Var>) -> (Tensor, u64) {
    run_mode(store, x, Mode::Eval, f)
}

pub fn run_mode(store: &ParamStore, x: &Tensor, mode: Mode, f: impl Fn(&mut Ctx<'_>, Var) -> Result<Var>) -> (Tensor, u64) {
    let mut graph = Graph::new().with_mac_counting();
    let bound = store.bind(&mut graph);
    let mut stats = store.stats().to_vec();
    let y = {
        let mut ctx = Ctx { graph: &mut graph, bound: &bound, stats: &mut stats, mode };
        let xv = ctx.graph.constant(x.clone());
        f(&mut ctx, xv).unwrap()
    };
    (graph.value(y).clone(), graph.macs())
}
