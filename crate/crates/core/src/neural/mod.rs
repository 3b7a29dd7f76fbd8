//! Trainable classifiers over integer id sequences: a fastText-style bag
//! model, a single-layer LSTM and the simplified transformer.

mod fasttext;
mod lstm;
mod transformer;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Grad, Sgd, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::par;

pub use fasttext::{FastTextModel, FastTextVocab, FASTTEXT_BUCKETS, FASTTEXT_DIM};
pub use lstm::{LstmModel, LSTM_CORE_PARAMS, LSTM_DIM};
pub use transformer::{contextualize, SimplifiedTransformer, TRANSFORMER_CORE_PARAMS, TRANSFORMER_DIM};

/// A classifier whose last two parameters are the linear head
/// (`D x 2` weights, `1 x 2` bias) applied to a pooled `B x D` representation.
pub trait Network: Send + Sync {
    fn kind(&self) -> &'static str;
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];
    fn param_names(&self) -> &'static [&'static str];
    /// Pooled representation of each sequence, `B x D`. `vars` are the
    /// parameters registered on `tape`, in `params()` order.
    fn pooled(&self, tape: &mut Tape<'_>, vars: &[Var], batch: &[&[usize]]) -> Result<Var>;
}

fn check_batch(batch: &[&[usize]]) -> Result<()> {
    if batch.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptyInput("id sequence"));
    }
    Ok(())
}

/// Logits `B x 2`, with inverted dropout on the pooled representation when
/// `dropout` is given.
pub fn logits<N: Network + ?Sized>(
    net: &N,
    tape: &mut Tape<'_>,
    vars: &[Var],
    batch: &[&[usize]],
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Var> {
    check_batch(batch)?;
    let k = vars.len();
    let mut h = net.pooled(tape, vars, batch)?;
    if let Some((p, rng)) = dropout {
        if p > 0.0 {
            let (r, c) = tape.value(h).shape();
            let keep = 1.0 - p;
            let mask: Vec<f64> = (0..r * c)
                .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            let m = tape.constant(Tensor::from_vec(r, c, mask)?);
            h = tape.mul(h, m)?;
        }
    }
    let z = tape.matmul(h, vars[k - 2])?;
    tape.add(z, vars[k - 1])
}

/// Mean cross-entropy of a batch and the gradient of every parameter.
pub fn loss_and_gradients<N: Network + ?Sized>(
    net: &N,
    batch: &[&[usize]],
    labels: &[usize],
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(f64, Vec<Option<Grad>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = net.params().iter().map(|p| tape.param(p)).collect();
    let z = logits(net, &mut tape, &vars, batch, dropout)?;
    let loss = tape.cross_entropy(z, labels)?;
    let value = tape.value(loss).item();
    let mut g = tape.backward(loss)?;
    Ok((value, vars.iter().map(|&v| g.take(v)).collect()))
}

const EVAL_CHUNK: usize = 64;

/// Class probabilities `[p(original), p(translated)]` per sequence.
pub fn predict_proba<N: Network + ?Sized>(net: &N, inputs: &[Vec<usize>]) -> Result<Vec<[f64; 2]>> {
    let chunks: Vec<&[Vec<usize>]> = inputs.chunks(EVAL_CHUNK).collect();
    let parts = par::map(&chunks, |chunk| -> Result<Vec<[f64; 2]>> {
        let batch: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = net.params().iter().map(|p| tape.param(p)).collect();
        let z = logits(net, &mut tape, &vars, &batch, None)?;
        let p = tape.softmax(z);
        let t = tape.value(p);
        Ok((0..t.rows).map(|r| [t.at(r, 0), t.at(r, 1)]).collect())
    });
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Predicted class index per sequence (ties go to class 0).
pub fn predict<N: Network + ?Sized>(net: &N, inputs: &[Vec<usize>]) -> Result<Vec<usize>> {
    Ok(predict_proba(net, inputs)?
        .into_iter()
        .map(|p| usize::from(p[1] > p[0]))
        .collect())
}

pub fn accuracy<N: Network + ?Sized>(net: &N, inputs: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let pred = predict(net, inputs)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / inputs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        })
    }
}

enum Stepper {
    Adam(Adam),
    Sgd(Sgd),
}

impl Stepper {
    fn step(&mut self, params: &mut [Tensor], grads: &[Option<Grad>]) {
        match self {
            Stepper::Adam(a) => a.step(params, grads),
            Stepper::Sgd(s) => s.step(params, grads),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            epochs: 20,
            patience: 3,
            batch_size: 32,
            lr: 1e-2,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Per-example SGD, as the original fastText tool trains. Adam's
    /// per-coordinate scaling lets rare word and bigram rows memorize the
    /// training set as fast as shared rows learn.
    pub fn fasttext() -> Self {
        TrainConfig {
            optimizer: Optimizer::Sgd,
            batch_size: 1,
            lr: 0.5,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,dev_accuracy")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.dev_accuracy)?;
        }
        w.flush()
    }
}

/// Adam (or plain SGD) on mean cross-entropy with early stopping on dev accuracy. The
/// parameters of the best dev epoch are restored before returning.
pub fn train_network<N: Network + ?Sized>(
    net: &mut N,
    train: (&[Vec<usize>], &[usize]),
    dev: (&[Vec<usize>], &[usize]),
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let (xs, ys) = train;
    if xs.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if dev.0.is_empty() {
        return Err(Error::EmptyInput("dev set"));
    }
    if xs.len() != ys.len() || dev.0.len() != dev.1.len() {
        return Err(Error::InvalidArgument("inputs and labels differ in length".into()));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::InvalidArgument("batch size must be positive and dropout in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut opt = match cfg.optimizer {
        Optimizer::Adam => Stepper::Adam(Adam::new(cfg.lr)),
        Optimizer::Sgd => Stepper::Sgd(Sgd::new(cfg.lr)),
    };
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_accuracy: f64::NEG_INFINITY,
    };
    let mut best = net.params().to_vec();
    let mut stale = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&[usize]> = idx.iter().map(|&i| xs[i].as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            let drop = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut rng));
            let (loss, grads) = loss_and_gradients(&*net, &batch, &labels, drop)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            total += loss * idx.len() as f64;
            opt.step(net.params_mut(), &grads);
        }
        let dev_acc = accuracy(&*net, dev.0, dev.1)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / xs.len() as f64,
            dev_accuracy: dev_acc,
        });
        if dev_acc > log.best_dev_accuracy {
            log.best_dev_accuracy = dev_acc;
            log.best_epoch = epoch;
            best.clone_from_slice(net.params());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    net.params_mut().clone_from_slice(&best);
    Ok(log)
}

/// Parameters as named tensors for the checkpoint format.
pub fn to_checkpoint<N: Network + ?Sized>(net: &N) -> Vec<(String, Tensor)> {
    net.param_names()
        .iter()
        .zip(net.params())
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect()
}

/// Overwrites the parameters from named tensors, which must match the
/// network's names and shapes exactly.
pub fn load_checkpoint_into<N: Network + ?Sized>(net: &mut N, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let names = net.param_names();
    if tensors.len() != names.len() {
        return Err(Error::PipelineMismatch(format!(
            "{} checkpoint has {} tensors, expected {}",
            net.kind(),
            tensors.len(),
            names.len()
        )));
    }
    for ((name, t), (want, cur)) in tensors.iter().zip(names.iter().zip(net.params())) {
        if name != want || t.shape() != cur.shape() {
            return Err(Error::PipelineMismatch(format!(
                "checkpoint tensor {name} {:?} does not fit {want} {:?}",
                t.shape(),
                cur.shape()
            )));
        }
    }
    for (p, (_, t)) in net.params_mut().iter_mut().zip(tensors) {
        *p = t;
    }
    Ok(())
}

/// Total number of scalars.
pub fn count_params(params: &[Tensor]) -> usize {
    params.iter().map(Tensor::len).sum()
}
