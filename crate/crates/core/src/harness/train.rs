use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{Augment, Dataset};
use super::optim::{lr_schedule, sgd_step, SgdState, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::Network;
use crate::ops::Mode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rows: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,train_acc,eval_acc\n");
        for r in &self.rows {
            let eval = r.eval_acc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.lr, r.loss, r.train_acc, eval);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }
}

fn argmax_hits(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row.iter().enumerate().fold(0, |b, (j, v)| if *v > row[b] { j } else { b });
            best == l
        })
        .count()
}

/// Eval-mode accuracy over `data`, in batches of `batch_size`.
pub fn evaluate(net: &mut Network, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        hits += argmax_hits(&net.predict(&x)?, &y);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mini-batch SGD with softmax cross-entropy. Batches are drawn from a
/// ChaCha8 permutation seeded by `cfg.seed`; a trailing batch of one sample
/// is dropped since batch statistics need two.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    augment: Option<&Augment>,
) -> Result<History> {
    if train_set.len() < 2 {
        return Err(Error::DegenerateBatch("training needs at least two samples".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::new(&net.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            // A batch is a set; sorting makes its arithmetic independent of draw order.
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            let (mut x, y) = train_set.batch(&chunk);
            if let Some(a) = augment {
                let [c, h, w] = train_set.image_shape();
                let per = c * h * w;
                let mut data = Vec::with_capacity(x.numel());
                for i in 0..chunk.len() {
                    let img = Tensor::new(vec![c, h, w], x.data()[i * per..(i + 1) * per].to_vec())?;
                    data.extend(a.apply(&img, &mut rng)?.into_data());
                }
                x = Tensor::new(x.shape().to_vec(), data)?;
            }
            let mut graph = Graph::new();
            let (logits, bound) = net.forward(&mut graph, &x, Mode::Train)?;
            graph.set_scope("loss");
            let loss = graph.cross_entropy(logits, &y)?;
            let lv = graph.value(loss).data()[0];
            if !lv.is_finite() {
                let scope = graph.first_non_finite().map(|v| graph.scope_of(v).to_string()).unwrap_or_default();
                return Err(Error::NonFinite(format!("loss is {lv} at epoch {epoch}; first non-finite value in '{scope}'")));
            }
            hits += argmax_hits(graph.value(logits), &y);
            let mut grads = graph.backward(loss)?;
            let g: Vec<Tensor> = bound
                .vars()
                .iter()
                .zip(net.store.entries())
                .map(|(&v, e)| grads.take(v).unwrap_or_else(|| Tensor::zeros(e.value.shape())))
                .collect();
            sgd_step(&mut net.store, &g, &mut state, lr, cfg)?;
            loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        let eval_acc = match eval_set {
            Some(d) => Some(evaluate(net, d, cfg.batch_size)?),
            None => None,
        };
        history.rows.push(EpochRecord { epoch, lr, loss: loss_sum / seen as f64, train_acc: hits as f64 / seen as f64, eval_acc });
    }
    Ok(history)
}
