//! Single-layer uni-directional LSTM over subword embeddings, mean-pooled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{count_params, Network};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::subword::PAD;

pub const LSTM_DIM: usize = 128;
/// Input and recurrent weights for four gates plus their biases at D = 128.
pub const LSTM_CORE_PARAMS: usize = 131_584;

const NAMES: [&str; 6] = ["embedding", "w_x", "w_h", "bias", "head_w", "head_b"];

/// Gates are laid out as `[input | forget | candidate | output]`.
#[derive(Debug, Clone)]
pub struct LstmModel {
    params: Vec<Tensor>,
    dim: usize,
}

impl LstmModel {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        let m = Self::with_dim(vocab_size, LSTM_DIM, seed);
        assert_eq!(m.core_param_count(), LSTM_CORE_PARAMS);
        m
    }

    /// Any hidden size; embedding size equals hidden size.
    pub fn with_dim(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut bias = Tensor::zeros(1, 4 * dim);
        // forget gate starts open
        bias.data[dim..2 * dim].fill(1.0);
        let m = LstmModel {
            params: vec![
                Tensor::uniform(vocab_size, dim, 0.1, &mut rng),
                Tensor::uniform(dim, 4 * dim, bound, &mut rng),
                Tensor::uniform(dim, 4 * dim, bound, &mut rng),
                bias,
                Tensor::uniform(dim, 2, bound, &mut rng),
                Tensor::zeros(1, 2),
            ],
            dim,
        };
        assert_eq!(m.core_param_count(), 4 * (2 * dim * dim + dim));
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.params[0].rows
    }

    /// Cell parameters only (no embedding, no head).
    pub fn core_param_count(&self) -> usize {
        count_params(&self.params[1..4])
    }
}

impl Network for LstmModel {
    fn kind(&self) -> &'static str {
        "lstm"
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn param_names(&self) -> &'static [&'static str] {
        &NAMES
    }

    /// Sequences are right-padded; padded steps run but are masked out of
    /// the mean, and since they come last they never feed a real step.
    fn pooled(&self, tape: &mut Tape<'_>, vars: &[Var], batch: &[&[usize]]) -> Result<Var> {
        let d = self.dim;
        let b = batch.len();
        let steps = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        // time-major ids so that step t is a contiguous block of rows
        let mut ids = Vec::with_capacity(steps * b);
        for t in 0..steps {
            ids.extend(batch.iter().map(|s| s.get(t).copied().unwrap_or(PAD)));
        }
        let x = tape.embedding_lookup(vars[0], &ids)?;
        let xw = tape.matmul(x, vars[1])?;

        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut sum: Option<Var> = None;
        for t in 0..steps {
            let mut z = tape.slice_rows(xw, t * b, b)?;
            if let Some(h) = h {
                let hw = tape.matmul(h, vars[2])?;
                z = tape.add(z, hw)?;
            }
            z = tape.add(z, vars[3])?;
            let i = tape.slice_cols(z, 0, d)?;
            let f = tape.slice_cols(z, d, d)?;
            let g = tape.slice_cols(z, 2 * d, d)?;
            let o = tape.slice_cols(z, 3 * d, d)?;
            let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
            let ig = tape.mul(i, g)?;
            let c_new = match c {
                Some(c) => {
                    let fc = tape.mul(f, c)?;
                    tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o, tc)?;

            let mask: Vec<f64> = batch.iter().map(|s| f64::from(u8::from(t < s.len()))).collect();
            let contrib = if mask.iter().all(|&m| m == 1.0) {
                h_new
            } else {
                let m = tape.constant(Tensor::from_vec(b, 1, mask)?);
                tape.broadcast_mul(h_new, m)?
            };
            sum = Some(match sum {
                Some(s) => tape.add(s, contrib)?,
                None => contrib,
            });
            h = Some(h_new);
            c = Some(c_new);
        }
        let inv_len: Vec<f64> = batch.iter().map(|s| 1.0 / s.len() as f64).collect();
        let inv = tape.constant(Tensor::from_vec(b, 1, inv_len)?);
        let sum = sum.expect("batch has at least one step");
        tape.broadcast_mul(sum, inv)
    }
}
