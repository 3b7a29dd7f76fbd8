//! Central finite-difference gradient checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use translationese::autodiff::{Tape, Tensor, Var};
use translationese::neural::{loss_and_gradients, LstmModel, Network, SimplifiedTransformer};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Builds `sum(f(inputs) * r)` for a fixed random `r`, so every output
/// element gets a distinct upstream gradient.
fn loss_of(build: &Build, inputs: &[Tensor], weights: &mut Option<Tensor>, seed: u64) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let (r, c) = tape.value(out).shape();
    let w = weights.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        Tensor::uniform(r, c, 1.0, &mut rng)
    });
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum_all(prod);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map(|g| g.to_dense(t.rows, t.cols))
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    (value, g)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between the tape gradient and central differences.
pub fn op_error(build: &Build, inputs: Vec<Tensor>, seed: u64) -> f64 {
    let mut weights = None;
    let (_, analytic) = loss_of(build, &inputs, &mut weights, seed);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data[i] += STEP;
            let mut minus = inputs.clone();
            minus[k].data[i] -= STEP;
            let fp = loss_of(build, &plus, &mut weights, seed).0;
            let fm = loss_of(build, &minus, &mut weights, seed).0;
            worst = worst.max(rel_err(analytic[k][i], (fp - fm) / (2.0 * STEP)));
        }
    }
    worst
}

pub fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(rows, cols, 1.0, &mut rng)
}

/// Values bounded away from zero (for abs and reciprocal).
pub fn away_from_zero(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut t = rand_t(rows, cols, seed);
    for x in &mut t.data {
        *x = x.signum() * (0.5 + x.abs());
    }
    t
}

/// One LSTM step on a batch of 2: gates from x W + h U + b.
fn lstm_cell(t: &mut Tape, v: &[Var]) -> Var {
    let (x, w, u, b, h, c) = (v[0], v[1], v[2], v[3], v[4], v[5]);
    let xw = t.matmul(x, w).unwrap();
    let hu = t.matmul(h, u).unwrap();
    let z = t.add(xw, hu).unwrap();
    let z = t.add(z, b).unwrap();
    let i = t.slice_cols(z, 0, 3).unwrap();
    let f = t.slice_cols(z, 3, 3).unwrap();
    let g = t.slice_cols(z, 6, 3).unwrap();
    let o = t.slice_cols(z, 9, 3).unwrap();
    let (i, f, g, o) = (t.sigmoid(i), t.sigmoid(f), t.tanh(g), t.sigmoid(o));
    let fc = t.mul(f, c).unwrap();
    let ig = t.mul(i, g).unwrap();
    let c2 = t.add(fc, ig).unwrap();
    let tc = t.tanh(c2);
    t.mul(o, tc).unwrap()
}

/// Every differentiable tape op (plus an LSTM cell built from them) with its
/// worst relative error.
pub fn op_errors() -> Vec<(&'static str, f64)> {
    let (a, b) = (rand_t(3, 4, 1), rand_t(3, 4, 2));
    let cases: Vec<(&'static str, Box<Build>, Vec<Tensor>)> = vec![
        ("add", Box::new(|t, v| t.add(v[0], v[1]).unwrap()), vec![a.clone(), b.clone()]),
        ("add_row", Box::new(|t, v| t.add(v[0], v[1]).unwrap()), vec![a.clone(), rand_t(1, 4, 9)]),
        ("sub", Box::new(|t, v| t.sub(v[0], v[1]).unwrap()), vec![a.clone(), b.clone()]),
        ("mul", Box::new(|t, v| t.mul(v[0], v[1]).unwrap()), vec![a.clone(), b.clone()]),
        ("scale", Box::new(|t, v| t.scale(v[0], -2.5)), vec![a.clone()]),
        ("add_scalar", Box::new(|t, v| t.add_scalar(v[0], 1.5)), vec![a.clone()]),
        ("gelu", Box::new(|t, v| t.gelu(v[0])), vec![rand_t(3, 4, 7)]),
        ("tanh", Box::new(|t, v| t.tanh(v[0])), vec![a.clone()]),
        ("sigmoid", Box::new(|t, v| t.sigmoid(v[0])), vec![a.clone()]),
        ("abs", Box::new(|t, v| t.abs(v[0])), vec![away_from_zero(3, 4, 10)]),
        ("reciprocal", Box::new(|t, v| t.reciprocal(v[0])), vec![away_from_zero(3, 4, 11)]),
        ("matmul", Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()), vec![rand_t(3, 5, 1), rand_t(5, 2, 2)]),
        ("cumulative_sum", Box::new(|t, v| t.cumulative_sum(v[0])), vec![rand_t(5, 3, 3)]),
        (
            "columnwise_dot",
            Box::new(|t, v| t.columnwise_dot(v[0], v[1]).unwrap()),
            vec![rand_t(4, 3, 4), rand_t(4, 3, 5)],
        ),
        (
            "broadcast_mul_column",
            Box::new(|t, v| t.broadcast_mul(v[0], v[1]).unwrap()),
            vec![rand_t(4, 3, 6), rand_t(4, 1, 7)],
        ),
        (
            "broadcast_mul_row",
            Box::new(|t, v| t.broadcast_mul(v[0], v[1]).unwrap()),
            vec![rand_t(4, 3, 8), rand_t(1, 3, 9)],
        ),
        (
            "layer_norm",
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]).unwrap()),
            vec![rand_t(3, 5, 10), rand_t(1, 5, 11), rand_t(1, 5, 12)],
        ),
        ("softmax", Box::new(|t, v| t.softmax(v[0])), vec![rand_t(3, 4, 13)]),
        ("log_softmax", Box::new(|t, v| t.log_softmax(v[0])), vec![rand_t(3, 4, 14)]),
        ("cross_entropy", Box::new(|t, v| t.cross_entropy(v[0], &[1, 0, 1]).unwrap()), vec![rand_t(3, 2, 1)]),
        ("mean_pool", Box::new(|t, v| t.mean_pool(v[0])), vec![rand_t(4, 3, 15)]),
        ("sum_rows", Box::new(|t, v| t.sum_rows(v[0])), vec![rand_t(4, 3, 16)]),
        ("sum_all", Box::new(|t, v| t.sum_all(v[0])), vec![rand_t(4, 3, 17)]),
        ("slice_rows", Box::new(|t, v| t.slice_rows(v[0], 1, 2).unwrap()), vec![rand_t(4, 3, 18)]),
        ("slice_cols", Box::new(|t, v| t.slice_cols(v[0], 1, 2).unwrap()), vec![rand_t(4, 3, 19)]),
        (
            "concat_rows",
            Box::new(|t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
            vec![rand_t(2, 3, 20), rand_t(3, 3, 21)],
        ),
        (
            "concat_cols",
            Box::new(|t, v| t.concat_cols(&[v[0], v[1]]).unwrap()),
            vec![rand_t(2, 3, 22), rand_t(2, 1, 23)],
        ),
        (
            "embedding_lookup",
            Box::new(|t, v| t.embedding_lookup(v[0], &[2, 0, 2, 3]).unwrap()),
            vec![rand_t(5, 3, 24)],
        ),
        (
            "lstm_cell",
            Box::new(lstm_cell),
            vec![
                rand_t(2, 4, 1),
                rand_t(4, 12, 2),
                rand_t(3, 12, 3),
                rand_t(1, 12, 4),
                rand_t(2, 3, 5),
                rand_t(2, 3, 6),
            ],
        ),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, build, inputs))| (name, op_error(build.as_ref(), inputs, i as u64 + 1)))
        .collect()
}

/// Central differences on every parameter entry of a network's loss.
pub fn network_error<N: Network>(net: &mut N, batch: &[Vec<usize>], labels: &[usize]) -> f64 {
    let refs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
    let (_, grads) = loss_and_gradients(&*net, &refs, labels, None).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..net.params().len() {
        let (r, c) = net.params()[k].shape();
        let analytic = grads[k]
            .as_ref()
            .map(|g| g.to_dense(r, c))
            .unwrap_or_else(|| vec![0.0; r * c]);
        for i in 0..r * c {
            let orig = net.params()[k].data[i];
            net.params_mut()[k].data[i] = orig + STEP;
            let fp = loss_and_gradients(&*net, &refs, labels, None).unwrap().0;
            net.params_mut()[k].data[i] = orig - STEP;
            let fm = loss_and_gradients(&*net, &refs, labels, None).unwrap().0;
            net.params_mut()[k].data[i] = orig;
            worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * STEP)));
        }
    }
    worst
}

/// LSTM and simplified transformer at D = 4 on length-3 sequences.
pub fn end_to_end_errors() -> Vec<(&'static str, f64)> {
    use rand::Rng;
    let mut lstm = LstmModel::with_dim(6, 4, 21);
    let lstm_err = network_error(&mut lstm, &[vec![1, 4, 2], vec![5, 3, 0], vec![0, 0, 5]], &[1, 0, 1]);
    let mut tr = SimplifiedTransformer::with_dim(6, 4, 22);
    // random gains/shifts so the norm parameters are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 1..7 {
        for x in &mut tr.params_mut()[k].data {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    let tr_err = network_error(&mut tr, &[vec![1, 4, 2], vec![5, 3, 3]], &[1, 0]);
    vec![("lstm", lstm_err), ("simplified_transformer", tr_err)]
}
