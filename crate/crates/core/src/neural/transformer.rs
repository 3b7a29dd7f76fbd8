//! Simplified transformer: cumulative-sum contextualization, element-wise
//! attention without projections, no positional encodings and no
//! feedforward blocks. The only parameters besides the embedding and the
//! head are three layer norms.
//!
//! Rows are positions and columns are features throughout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{count_params, Network};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

pub const TRANSFORMER_DIM: usize = 128;
/// Three layer norms with gain and shift at D = 128.
pub const TRANSFORMER_CORE_PARAMS: usize = 768;

const NAMES: [&str; 9] = [
    "embedding",
    "enc_norm_gain",
    "enc_norm_shift",
    "dec1_norm_gain",
    "dec1_norm_shift",
    "dec2_norm_gain",
    "dec2_norm_shift",
    "head_w",
    "head_b",
];

#[derive(Debug, Clone)]
pub struct SimplifiedTransformer {
    params: Vec<Tensor>,
    dim: usize,
}

/// Returns `(C, X_hat)`: `C` is the running sum of `x` over positions,
/// `w_j = x_j . c_j` and `X_hat` is `x` with row `j` scaled by `w_j`.
pub fn contextualize(tape: &mut Tape<'_>, x: Var) -> Result<(Var, Var)> {
    let c = tape.cumulative_sum(x);
    let w = tape.columnwise_dot(x, c)?;
    let x_hat = tape.broadcast_mul(x, w)?;
    Ok((c, x_hat))
}

/// `|gelu(.) + 1|` feature map applied to queries and keys.
fn positive(tape: &mut Tape<'_>, v: Var) -> Var {
    let g = tape.gelu(v);
    let g = tape.add_scalar(g, 1.0);
    tape.abs(g)
}

/// Energies `Q * K / sqrt(D)`, normalized over positions for each feature,
/// times the values. `key` may be a single row shared by all positions.
fn attend(tape: &mut Tape<'_>, query: Var, key: Var, value: Var, dim: usize) -> Result<Var> {
    let q = positive(tape, query);
    let k = positive(tape, key);
    let e = if tape.value(k).rows == tape.value(q).rows {
        tape.mul(q, k)?
    } else {
        tape.broadcast_mul(q, k)?
    };
    let e = tape.scale(e, 1.0 / (dim as f64).sqrt());
    let total = tape.sum_rows(e);
    let inv = tape.reciprocal(total);
    let weights = tape.broadcast_mul(e, inv)?;
    tape.mul(weights, value)
}

impl SimplifiedTransformer {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        let m = Self::with_dim(vocab_size, TRANSFORMER_DIM, seed);
        assert_eq!(m.core_param_count(), TRANSFORMER_CORE_PARAMS);
        m
    }

    pub fn with_dim(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![Tensor::uniform(vocab_size, dim, 0.1, &mut rng)];
        for _ in 0..3 {
            params.push(Tensor::full(1, dim, 1.0));
            params.push(Tensor::zeros(1, dim));
        }
        params.push(Tensor::uniform(dim, 2, 1.0 / (dim as f64).sqrt(), &mut rng));
        params.push(Tensor::zeros(1, 2));
        let m = SimplifiedTransformer { params, dim };
        assert_eq!(m.core_param_count(), 6 * dim);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.params[0].rows
    }

    /// Layer-norm parameters only (no embedding, no head).
    pub fn core_param_count(&self) -> usize {
        count_params(&self.params[1..7])
    }

    /// One encoder-style block: contextualize, attend with query = value =
    /// `X_hat` and key = `C`, then residual and layer norm.
    fn block(&self, tape: &mut Tape<'_>, x: Var, gain: Var, shift: Var) -> Result<(Var, Var)> {
        let (c, x_hat) = contextualize(tape, x)?;
        let a = attend(tape, x_hat, c, x_hat, self.dim)?;
        let r = tape.add(x, a)?;
        Ok((tape.layer_norm(r, gain, shift)?, c))
    }

    /// Pooled `1 x D` representation of one sequence.
    fn encode_one(&self, tape: &mut Tape<'_>, vars: &[Var], ids: &[usize]) -> Result<Var> {
        let x = tape.embedding_lookup(vars[0], ids)?;
        let (enc, c) = self.block(tape, x, vars[1], vars[2])?;
        // decoder input is the encoder output
        let (d1, _) = self.block(tape, enc, vars[3], vars[4])?;
        // key: sum of the encoder embeddings, i.e. the last row of C
        let key = tape.slice_rows(c, ids.len() - 1, 1)?;
        let a = attend(tape, d1, key, enc, self.dim)?;
        let r = tape.add(d1, a)?;
        let d2 = tape.layer_norm(r, vars[5], vars[6])?;
        Ok(tape.mean_pool(d2))
    }
}

impl Network for SimplifiedTransformer {
    fn kind(&self) -> &'static str {
        "transformer"
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

    fn pooled(&self, tape: &mut Tape<'_>, vars: &[Var], batch: &[&[usize]]) -> Result<Var> {
        let rows = batch
            .iter()
            .map(|ids| self.encode_one(tape, vars, ids))
            .collect::<Result<Vec<Var>>>()?;
        tape.concat_rows(&rows)
    }
}
