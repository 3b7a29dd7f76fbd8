mod common;

use common::gradcheck::{end_to_end_errors, network_error};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use translationese::autodiff::{Tape, Tensor, Var};
use translationese::corpus::Paragraph;
use translationese::neural::{
    accuracy, contextualize, load_checkpoint_into, predict_proba, to_checkpoint,
    train_network, FastTextModel, FastTextVocab, LstmModel, Network, SimplifiedTransformer, TrainConfig,
    LSTM_CORE_PARAMS, TRANSFORMER_CORE_PARAMS,
};
use translationese::subword::train_subword;
use translationese::synth::marker_corpus;
use translationese::Error;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn core_parameter_counts() {
    let lstm = LstmModel::new(50, 1);
    assert_eq!(lstm.core_param_count(), 131_584);
    assert_eq!(LSTM_CORE_PARAMS, 4 * (128 * 128 + 128 * 128 + 128));
    let tr = SimplifiedTransformer::new(50, 1);
    assert_eq!(tr.core_param_count(), 768);
    assert_eq!(TRANSFORMER_CORE_PARAMS, 3 * 2 * 128);
    // nothing besides embedding, three norms and head
    assert_eq!(tr.params().len(), 1 + 6 + 2);
}

fn random_seqs(rng: &mut ChaCha8Rng, n: usize, vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            (0..len).map(|_| rng.gen_range(0..vocab)).collect()
        })
        .collect()
}

#[test]
fn probabilities_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seqs = random_seqs(&mut rng, 20, 30, 12);
    let nets: Vec<Box<dyn Network>> = vec![
        Box::new(FastTextModel::new(30, 8, 1)),
        Box::new(LstmModel::with_dim(30, 8, 1)),
        Box::new(SimplifiedTransformer::with_dim(30, 8, 1)),
    ];
    for net in &nets {
        for p in predict_proba(net.as_ref(), &seqs).unwrap() {
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6, "{}", net.kind());
        }
    }
}

#[test]
fn zero_classifier_is_uniform() {
    let m = FastTextModel::new(10, 5, 2);
    for p in predict_proba(&m, &[vec![1, 2, 3], vec![4]]).unwrap() {
        assert_eq!(p, [0.5, 0.5]);
    }
}

#[test]
fn empty_sequences_are_rejected() {
    let m = LstmModel::with_dim(10, 4, 2);
    assert!(matches!(predict_proba(&m, &[vec![]]), Err(Error::EmptyInput(_))));
    let v = FastTextVocab::build(&[vec!["a"]], 10);
    assert!(v.encode::<&str>(&[]).is_err());
}

#[test]
fn single_token_document_is_its_embedding() {
    let vocab = FastTextVocab::build(&[vec!["x", "y"]], 16);
    let m = FastTextModel::new(vocab.rows(), 6, 4);
    let ids = vocab.encode(&["y"]).unwrap();
    assert_eq!(ids.len(), 1);
    let mut tape = Tape::new();
    let vars: Vec<Var> = m.params().iter().map(|p| tape.param(p)).collect();
    let pooled = m.pooled(&mut tape, &vars, &[&ids]).unwrap();
    assert_eq!(tape.value(pooled).data, m.params()[0].row(ids[0]));

    // two tokens: mean of both words and the bigram bucket
    let ids = vocab.encode(&["x", "y"]).unwrap();
    assert_eq!(ids.len(), 3);
    assert!(ids[2] >= vocab.n_words());
    let mut tape = Tape::new();
    let vars: Vec<Var> = m.params().iter().map(|p| tape.param(p)).collect();
    let pooled = m.pooled(&mut tape, &vars, &[&ids]).unwrap();
    for j in 0..6 {
        let want = ids.iter().map(|&i| m.params()[0].at(i, j)).sum::<f64>() / 3.0;
        assert!((tape.value(pooled).data[j] - want).abs() < 1e-15);
    }
}

#[test]
fn lstm_length_one_pools_first_hidden_state() {
    let d = 5;
    let m = LstmModel::with_dim(7, d, 9);
    let p = m.params();
    let id = 3;
    let x = p[0].row(id);
    let z: Vec<f64> = (0..4 * d)
        .map(|k| (0..d).map(|r| x[r] * p[1].at(r, k)).sum::<f64>() + p[3].data[k])
        .collect();
    let h1: Vec<f64> = (0..d)
        .map(|j| {
            let c = sigmoid(z[j]) * z[2 * d + j].tanh();
            sigmoid(z[3 * d + j]) * c.tanh()
        })
        .collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = p.iter().map(|t| tape.param(t)).collect();
    let pooled = m.pooled(&mut tape, &vars, &[&[id]]).unwrap();
    for (a, b) in tape.value(pooled).data.iter().zip(&h1) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn lstm_padding_does_not_change_results() {
    let m = LstmModel::with_dim(12, 6, 5);
    let short = vec![3, 4];
    let long = vec![1, 2, 5, 7, 9, 11];
    let alone = predict_proba(&m, &[short.clone()]).unwrap()[0];
    let batched = predict_proba(&m, &[long, short]).unwrap()[1];
    for k in 0..2 {
        assert!((alone[k] - batched[k]).abs() < 1e-14);
    }
}

#[test]
fn contextualization_by_hand() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(2, 1, vec![1.0, 2.0]).unwrap());
    let (c, x_hat) = contextualize(&mut tape, x).unwrap();
    assert_eq!(tape.value(c).data, vec![1.0, 3.0]);
    assert_eq!(tape.value(x_hat).data, vec![1.0, 12.0]);
}

#[test]
fn transformer_is_position_sensitive() {
    let m = SimplifiedTransformer::with_dim(20, 16, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ids: Vec<usize> = (0..5).map(|_| rng.gen_range(0..20)).collect();
    let mut perm = ids.clone();
    while perm == ids {
        perm.shuffle(&mut rng);
    }
    let p = predict_proba(&m, &[ids.clone(), perm.clone()]).unwrap();
    assert!((p[0][1] - p[1][1]).abs() > 1e-9, "{ids:?} {perm:?}");

    let mut tape = Tape::new();
    let vars: Vec<Var> = m.params().iter().map(|t| tape.param(t)).collect();
    let a = m.pooled(&mut tape, &vars, &[&ids]).unwrap();
    let b = m.pooled(&mut tape, &vars, &[&perm]).unwrap();
    let diff: f64 = tape
        .value(a)
        .data
        .iter()
        .zip(&tape.value(b).data)
        .map(|(x, y)| (x - y).abs())
        .sum();
    assert!(diff > 1e-6);
}

#[test]
fn end_to_end_losses_at_dimension_four() {
    for (name, worst) in end_to_end_errors() {
        assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn lstm_end_to_end_gradients() {
    let mut m = LstmModel::with_dim(6, 4, 21);
    let batch = vec![vec![1, 4, 2], vec![5, 3], vec![0, 0, 5]];
    let worst = network_error(&mut m, &batch, &[1, 0, 1]);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn transformer_end_to_end_gradients() {
    let mut m = SimplifiedTransformer::with_dim(6, 4, 22);
    // random gains/shifts so the norm parameters are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 1..7 {
        for x in &mut m.params_mut()[k].data {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    let batch = vec![vec![1, 4, 2], vec![5, 3, 3]];
    let worst = network_error(&mut m, &batch, &[1, 0]);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn fasttext_end_to_end_gradients() {
    let mut m = FastTextModel::new(8, 3, 23);
    // move the classifier off zero so the embedding gradient is non-trivial
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for x in &mut m.params_mut()[1].data {
        *x = rng.gen_range(-1.0..1.0);
    }
    let batch = vec![vec![1, 4, 7], vec![5, 3]];
    let worst = network_error(&mut m, &batch, &[1, 0]);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let a = LstmModel::with_dim(9, 4, 1);
    let mut b = LstmModel::with_dim(9, 4, 2);
    load_checkpoint_into(&mut b, to_checkpoint(&a)).unwrap();
    assert_eq!(a.params(), b.params());
    let mut other = LstmModel::with_dim(9, 5, 2);
    assert!(matches!(
        load_checkpoint_into(&mut other, to_checkpoint(&a)),
        Err(Error::PipelineMismatch(_))
    ));
    let mut tr = SimplifiedTransformer::with_dim(9, 4, 2);
    assert!(load_checkpoint_into(&mut tr, to_checkpoint(&a)).is_err());
}

#[test]
fn nan_parameters_report_divergence() {
    let mut m = FastTextModel::new(5, 3, 1);
    m.params_mut()[2].data[0] = f64::NAN;
    let xs = vec![vec![1, 2], vec![3]];
    let ys = vec![0, 1];
    let err = train_network(&mut m, (&xs, &ys), (&xs, &ys), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 1 }), "{err}");
}

struct Task {
    train: (Vec<Vec<usize>>, Vec<usize>),
    dev: (Vec<Vec<usize>>, Vec<usize>),
    test: (Vec<Vec<usize>>, Vec<usize>),
}

fn split(paras: Vec<Paragraph>, enc: impl Fn(&Paragraph) -> Vec<usize>, seed: u64) -> Task {
    let mut paras = paras;
    paras.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = paras.len();
    let cut = |lo: usize, hi: usize| {
        let ps = &paras[lo..hi];
        (ps.iter().map(&enc).collect(), ps.iter().map(|p| p.label.index()).collect())
    };
    Task {
        train: cut(0, n * 5 / 7),
        dev: cut(n * 5 / 7, n * 6 / 7),
        test: cut(n * 6 / 7, n),
    }
}

fn run<N: Network>(net: &mut N, task: &Task, epochs: usize, seed: u64) -> (f64, Vec<f64>) {
    let base = if net.kind() == "fasttext" {
        TrainConfig::fasttext()
    } else {
        TrainConfig::default()
    };
    let cfg = TrainConfig { epochs, seed, ..base };
    let log = train_network(
        net,
        (&task.train.0, &task.train.1),
        (&task.dev.0, &task.dev.1),
        &cfg,
    )
    .unwrap();
    let acc = accuracy(net, &task.test.0, &task.test.1).unwrap();
    (acc, log.epochs.iter().map(|e| e.dev_accuracy).collect())
}

fn marker_task() -> (Vec<Paragraph>, Vec<Vec<String>>) {
    let paras = marker_corpus("en", "de", "zzmarker", 1000, 17);
    let toks = paras.iter().map(|p| p.tokens.clone()).collect();
    (paras, toks)
}

#[test]
fn marker_task_is_learned_by_all_three() {
    let (paras, toks) = marker_task();
    let sub = train_subword(&toks, 2000).unwrap();
    let ft_vocab = FastTextVocab::build(&toks, 10_000);

    let task = split(paras.clone(), |p| ft_vocab.encode(&p.tokens).unwrap(), 1);
    let mut ft = FastTextModel::new(ft_vocab.rows(), 100, 1);
    let (acc, _) = run(&mut ft, &task, 10, 1);
    assert!(acc >= 0.95, "fasttext {acc}");

    let task = split(paras, |p| sub.encode(&p.tokens), 1);
    let mut lstm = LstmModel::with_dim(sub.size(), 32, 1);
    let (acc, _) = run(&mut lstm, &task, 10, 1);
    assert!(acc >= 0.95, "lstm {acc}");
    let mut tr = SimplifiedTransformer::with_dim(sub.size(), 32, 1);
    let (acc, _) = run(&mut tr, &task, 10, 1);
    assert!(acc >= 0.95, "transformer {acc}");
}

#[test]
fn training_is_deterministic() {
    let (paras, toks) = marker_task();
    let sub = train_subword(&toks, 2000).unwrap();
    let task = split(paras, |p| sub.encode(&p.tokens), 2);
    let mut a = SimplifiedTransformer::with_dim(sub.size(), 16, 4);
    let mut b = SimplifiedTransformer::with_dim(sub.size(), 16, 4);
    let (_, ca) = run(&mut a, &task, 3, 4);
    let (_, cb) = run(&mut b, &task, 3, 4);
    assert_eq!(ca, cb);
    assert_eq!(a.params(), b.params());
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    // labels drawn independently of the text; a larger test split keeps the
    // sampling spread of chance accuracy well inside the band
    let (mut paras, toks) = marker_task();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for p in &mut paras {
        let flip = rng.gen_bool(0.5);
        if flip != (p.label.index() == 1) {
            p.label = if flip {
                translationese::corpus::Label::Translated
            } else {
                translationese::corpus::Label::Original
            };
        }
    }
    let vocab = FastTextVocab::build(&toks, 10_000);
    let mut accs = Vec::new();
    for seed in 0..5 {
        let task = split(paras.clone(), |p| vocab.encode(&p.tokens).unwrap(), seed);
        let mut m = FastTextModel::new(vocab.rows(), 16, seed);
        accs.push(run(&mut m, &task, 5, seed).0);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.05, "{accs:?}");
}
