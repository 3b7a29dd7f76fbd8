//! Brute-force reference implementations used as test oracles. They work on
//! strings and raw counts and recompute every probability on demand, sharing
//! no code with the library's estimators.
#![allow(dead_code)]

pub mod gradcheck;

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use translationese::corpus::{Paragraph, PosTag};
use translationese::features::{fit_feature_context, FeatureConfig, N_FEATURES, QUARTILE_OFFSET};
use translationese::ngram::{train_ngram, Direction, NgramModel, Stream};
use translationese::synth::{generate_corpus, SynthConfig};

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const UNK: &str = "<unk>";
const EPS: f64 = 1e-12;

/// Katz back-off model recomputed from counts at every query.
pub struct KatzOracle {
    order: usize,
    backward: bool,
    open: bool,
    vocab: BTreeSet<String>,
    /// counts[m - 1][history][word], history of length m - 1
    counts: Vec<HashMap<Vec<String>, HashMap<String, usize>>>,
    disc: Vec<[f64; 6]>,
    /// history -> (discounted followers, back-off weight or None when the
    /// followers are renormalized instead)
    memo: RefCell<HashMap<Vec<String>, Option<(HashMap<String, f64>, Option<f64>)>>>,
    unigram: HashMap<String, f64>,
}

fn gt(coc: &[usize; 7]) -> [f64; 6] {
    let mut d = [1.0; 6];
    let n = |r: usize| coc[r] as f64;
    if n(1) == 0.0 {
        return d;
    }
    let big = 6.0 * n(6) / n(1);
    for r in 1..=5 {
        if n(r) == 0.0 {
            continue;
        }
        let raw = (r as f64 + 1.0) * n(r + 1) / (r as f64 * n(r));
        let k = (raw - big) / (1.0 - big);
        if raw <= 1.0 && k.is_finite() && k > 1e-15 && k <= 1.0 {
            d[r] = k;
        }
    }
    d
}

impl KatzOracle {
    /// `open` vocabularies keep words seen at least twice and map the rest
    /// to `<unk>`; closed ones are the eighteen tags plus anything seen.
    pub fn train(seqs: &[Vec<String>], order: usize, backward: bool, open: bool) -> Self {
        let mut vocab: BTreeSet<String> = BTreeSet::new();
        vocab.insert(EOS.into());
        if open {
            vocab.insert(UNK.into());
            let mut freq: HashMap<&str, usize> = HashMap::new();
            for s in seqs {
                for w in s {
                    *freq.entry(w).or_insert(0) += 1;
                }
            }
            for (w, c) in freq {
                if c >= 2 && w != BOS && w != EOS && w != UNK {
                    vocab.insert(w.to_string());
                }
            }
        } else {
            for t in PosTag::ALL {
                vocab.insert(t.as_str().to_string());
            }
            for s in seqs {
                vocab.extend(s.iter().cloned());
            }
        }
        let mut o = KatzOracle {
            order,
            backward,
            open,
            vocab,
            counts: vec![HashMap::new(); order],
            disc: Vec::new(),
            memo: RefCell::new(HashMap::new()),
            unigram: HashMap::new(),
        };
        for s in seqs.iter().filter(|s| !s.is_empty()) {
            let padded = o.pad(s);
            for i in order - 1..padded.len() {
                for m in 1..=order {
                    let h = padded[i + 1 - m..i].to_vec();
                    *o.counts[m - 1].entry(h).or_default().entry(padded[i].clone()).or_insert(0) += 1;
                }
            }
        }
        for m in 0..order {
            let mut coc = [0usize; 7];
            for f in o.counts[m].values() {
                for &c in f.values() {
                    if c <= 6 {
                        coc[c] += 1;
                    }
                }
            }
            o.disc.push(gt(&coc));
        }
        let (p, left, unseen) = o.discounted(1, &[]).expect("unigram counts");
        for w in &o.vocab {
            let x = match p.get(w) {
                Some(x) if unseen == 0 => x + left / o.vocab.len() as f64,
                Some(x) => *x,
                None => left / unseen as f64,
            };
            o.unigram.insert(w.clone(), x);
        }
        o
    }

    fn map(&self, w: &str) -> String {
        if self.vocab.contains(w) && w != BOS {
            w.to_string()
        } else if self.open {
            UNK.to_string()
        } else {
            w.to_string()
        }
    }

    fn pad(&self, s: &[String]) -> Vec<String> {
        let mut body: Vec<String> = s.iter().map(|w| self.map(w)).collect();
        if self.backward {
            body.reverse();
        }
        let mut out = vec![BOS.to_string(); self.order - 1];
        out.extend(body);
        out.push(EOS.into());
        out
    }

    /// Discounted relative frequencies of the followers of `h` at level `m`
    /// and the mass left over.
    fn discounted(&self, m: usize, h: &[String]) -> Option<(HashMap<String, f64>, f64, usize)> {
        let f = self.counts[m - 1].get(h)?;
        let total: usize = f.values().sum();
        let unseen = self.vocab.len() - f.len();
        let d = &self.disc[m - 1];
        let est = |den: f64| {
            let p: HashMap<String, f64> = f
                .iter()
                .map(|(w, &c)| (w.clone(), if c <= 5 { d[c] } else { 1.0 } * c as f64 / den))
                .collect();
            let left = 1.0 - p.values().sum::<f64>();
            (p, left)
        };
        let (mut p, mut left) = est(total as f64);
        if unseen > 0 && left < EPS {
            (p, left) = est(total as f64 + 1.0);
        }
        Some((p, left, unseen))
    }

    /// p(w | h) with `h.len() == m - 1`.
    fn p(&self, m: usize, h: &[String], w: &str) -> f64 {
        if m == 1 {
            return self.unigram.get(w).copied().unwrap_or(0.0);
        }
        let lower = &h[1..];
        let cached = self.memo.borrow().get(h).cloned();
        let entry = match cached {
            Some(e) => e,
            None => {
                let e = self.discounted(m, h).map(|(p, left, unseen)| {
                    let lower_seen: f64 = p.keys().map(|v| self.p(m - 1, lower, v)).sum();
                    let den = 1.0 - lower_seen;
                    if unseen == 0 || den < EPS || left < EPS {
                        let s: f64 = p.values().sum();
                        (p.into_iter().map(|(k, v)| (k, v / s)).collect(), None)
                    } else {
                        (p, Some(left / den))
                    }
                });
                self.memo.borrow_mut().insert(h.to_vec(), e.clone());
                e
            }
        };
        match entry {
            None => self.p(m - 1, lower, w),
            Some((p, alpha)) => match p.get(w) {
                Some(x) => *x,
                None => alpha.unwrap_or(1.0) * self.p(m - 1, lower, w),
            },
        }
    }

    /// (log10 p with end marker, log10 p without, ppl, ppl without end marker)
    pub fn score(&self, s: &[String]) -> (f64, f64, f64, f64) {
        let padded = self.pad(s);
        let mut no_eos = 0.0;
        for i in self.order - 1..padded.len() - 1 {
            no_eos += self.p(self.order, &padded[i + 1 - self.order..i], &padded[i]).log10();
        }
        let last = padded.len() - 1;
        let with = no_eos + self.p(self.order, &padded[last + 1 - self.order..last], EOS).log10();
        let n = s.len() as f64;
        (with, no_eos, 10f64.powf(-with / (n + 1.0)), 10f64.powf(-no_eos / n))
    }

    /// log10 p(w | context) for a context in model order.
    pub fn log10_prob(&self, context: &[String], w: &str) -> f64 {
        let mut h: Vec<String> = context.iter().map(|x| if x == BOS { x.clone() } else { self.map(x) }).collect();
        let keep = h.len().min(self.order - 1);
        h.drain(..h.len() - keep);
        self.p(h.len() + 1, &h, &self.map(w)).log10()
    }
}

fn vowel_runs(token: &str, vowels: &str) -> usize {
    let lower = token.to_lowercase();
    let v: Vec<bool> = lower.chars().map(|c| vowels.contains(c)).collect();
    let runs = (0..v.len()).filter(|&i| v[i] && (i == 0 || !v[i - 1])).count();
    let has_letter = token.chars().any(|c| c.is_alphabetic());
    match (has_letter, runs) {
        (false, _) => 0,
        (true, 0) => 1,
        (true, r) => r,
    }
}

/// Reference feature extractor: fits everything on `train` and describes
/// paragraphs with unscaled 108-dimensional vectors.
pub struct FeatureOracle {
    vowels: String,
    /// token then POS stream, forward then backward, orders 1..=5
    lms: Vec<KatzOracle>,
    /// per n: sorted types with their quartile
    quartiles: Vec<HashMap<Vec<String>, usize>>,
}

const CONTENT: [&str; 5] = ["NOUN", "PROPN", "VERB", "ADJ", "ADV"];

fn tags(p: &Paragraph) -> Vec<String> {
    p.pos_tags.iter().map(|t| t.as_str().to_string()).collect()
}

impl FeatureOracle {
    pub fn fit(train: &[Paragraph], vowels: &str) -> Self {
        let tok: Vec<Vec<String>> = train.iter().map(|p| p.tokens.clone()).collect();
        let pos: Vec<Vec<String>> = train.iter().map(tags).collect();
        let mut lms = Vec::new();
        for (data, open) in [(&tok, true), (&pos, false)] {
            for backward in [false, true] {
                for n in 1..=5 {
                    lms.push(KatzOracle::train(data, n, backward, open));
                }
            }
        }
        let mut quartiles = Vec::new();
        for n in 1..=5 {
            let mut freq: HashMap<Vec<String>, usize> = HashMap::new();
            for p in train {
                if p.tokens.len() >= n {
                    for i in 0..=p.tokens.len() - n {
                        *freq.entry(p.tokens[i..i + n].to_vec()).or_insert(0) += 1;
                    }
                }
            }
            let mut ranked: Vec<(Vec<String>, usize)> = freq.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let k = ranked.len();
            quartiles.push(ranked.into_iter().enumerate().map(|(r, (g, _))| (g, 4 * r / k)).collect());
        }
        FeatureOracle {
            vowels: vowels.to_string(),
            lms,
            quartiles,
        }
    }

    pub fn extract(&self, p: &Paragraph) -> Vec<f64> {
        let n = p.tokens.len() as f64;
        let mut f = vec![
            p.tokens.iter().map(|t| t.chars().count() as f64).sum::<f64>() / n,
            p.tokens.iter().map(|t| vowel_runs(t, &self.vowels) as f64).sum::<f64>() / n,
            n,
        ];
        let t = tags(p);
        f.push(t.iter().filter(|x| CONTENT.contains(&x.as_str())).count() as f64 / n);
        let types: BTreeSet<String> = p.tokens.iter().map(|w| w.to_lowercase()).collect();
        f.push(types.len() as f64 / n);
        for tag in PosTag::ALL {
            f.push(t.iter().filter(|x| *x == tag.as_str()).count() as f64 / n);
        }
        for (i, lm) in self.lms.iter().enumerate() {
            let (with, _, ppl, ppl_no) = lm.score(if i < 10 { &p.tokens } else { &t });
            f.extend([with, ppl, ppl_no]);
        }
        for (k, table) in self.quartiles.iter().enumerate() {
            let n = k + 1;
            let mut c = [0.0f64; 5];
            let grams = p.tokens.len().saturating_sub(n - 1);
            for i in 0..grams {
                c[*table.get(&p.tokens[i..i + n]).unwrap_or(&4)] += 1.0;
            }
            if grams == 0 {
                f.extend([0.0, 0.0, 0.0, 0.0, 100.0]);
            } else {
                f.extend(c.map(|x| 100.0 * x / grams as f64));
            }
        }
        f
    }
}

/// Largest absolute elementwise difference.
pub fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() }).fold(0.0, f64::max)
}

/// Measurements of [`feature_fidelity`].
#[derive(Debug)]
pub struct FeatureCheck {
    pub paragraphs: usize,
    pub all_len_108: bool,
    pub raw_gap: f64,
    pub scaled_gap: f64,
    pub scaler_gap: f64,
    pub tag_sum_gap: f64,
    pub quartile_sum_gap: f64,
}

pub fn synthetic(seed: u64, n: usize) -> Vec<Paragraph> {
    generate_corpus(&SynthConfig {
        languages: vec!["de".into(), "en".into()],
        n_original: n / 2,
        n_translated: n - n / 2,
        min_len: 5,
        max_len: 40,
        seed,
    })
}

/// Fits the library and the oracle on 200 random synthetic paragraphs and
/// compares them on 100 others, half of them from the training set.
pub fn feature_fidelity(seed: u64) -> FeatureCheck {
    let corpus = synthetic(seed, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut rng);
    let train: Vec<Paragraph> = idx[..200].iter().map(|&i| corpus[i].clone()).collect();
    let probe: Vec<&Paragraph> = idx[150..250].iter().map(|&i| &corpus[i]).collect();

    let config = FeatureConfig::default();
    let ctx = fit_feature_context(&train, config.clone()).unwrap();
    let oracle = FeatureOracle::fit(&train, &config.vowels);

    let mut scaler = vec![0.0f64; N_FEATURES];
    for p in &train {
        for (s, x) in scaler.iter_mut().zip(oracle.extract(p)) {
            *s = s.max(x.abs());
        }
    }
    for s in &mut scaler {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let mut c = FeatureCheck {
        paragraphs: probe.len(),
        all_len_108: true,
        raw_gap: 0.0,
        scaled_gap: 0.0,
        scaler_gap: max_gap(&ctx.scaler, &scaler),
        tag_sum_gap: 0.0,
        quartile_sum_gap: 0.0,
    };
    for p in probe {
        let want = oracle.extract(p);
        let raw = ctx.extract_raw(p);
        let scaled = ctx.extract(p);
        c.all_len_108 &= raw.len() == N_FEATURES && scaled.len() == N_FEATURES && want.len() == N_FEATURES;
        c.raw_gap = c.raw_gap.max(max_gap(&raw, &want));
        let want_scaled: Vec<f64> = want.iter().zip(&scaler).map(|(x, s)| x / s).collect();
        c.scaled_gap = c.scaled_gap.max(max_gap(&scaled, &want_scaled));
        c.tag_sum_gap = c.tag_sum_gap.max((raw[5..23].iter().sum::<f64>() - 1.0).abs());
        for n in 0..5 {
            let o = QUARTILE_OFFSET + 5 * n;
            c.quartile_sum_gap = c.quartile_sum_gap.max((raw[o..o + 5].iter().sum::<f64>() - 100.0).abs());
        }
    }
    c
}

/// Measurements of [`lm_checks`].
#[derive(Debug)]
pub struct LmCheck {
    pub models: usize,
    pub contexts: usize,
    /// Largest |sum over the vocabulary of p(w | context) - 1|.
    pub normalization_gap: f64,
    /// Largest |log10 p| difference from the brute-force scorer.
    pub oracle_gap: f64,
    /// ScoreReport fields equal their definitions bit for bit.
    pub ppl_exact: bool,
    /// Backward models equal forward models of reversed text entry by entry.
    pub reversal_exact: bool,
}

/// Trains every (stream, direction, order) model on `corpus` and checks
/// normalization over sampled contexts, agreement with [`KatzOracle`],
/// the perplexity definitions and reversal symmetry.
pub fn lm_checks(corpus: &[Paragraph], contexts_per_level: usize, seed: u64) -> LmCheck {
    let tok: Vec<Vec<String>> = corpus.iter().map(|p| p.tokens.clone()).collect();
    let pos: Vec<Vec<String>> = corpus.iter().map(tags).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = LmCheck {
        models: 0,
        contexts: 0,
        normalization_gap: 0.0,
        oracle_gap: 0.0,
        ppl_exact: true,
        reversal_exact: true,
    };
    for (data, stream) in [(&tok, Stream::Token), (&pos, Stream::Pos)] {
        for direction in [Direction::Forward, Direction::Backward] {
            for n in 1..=5 {
                let lm = train_ngram(data, n, direction, stream).unwrap();
                let oracle = KatzOracle::train(data, n, direction == Direction::Backward, stream == Stream::Token);
                c.models += 1;
                let vocab: Vec<String> = lm.predictable().map(str::to_string).collect();
                for m in 1..=n {
                    let stored = lm.contexts(m);
                    let mut sample: Vec<Vec<String>> = stored
                        .choose_multiple(&mut rng, contexts_per_level)
                        .map(|h| h.iter().map(|s| s.to_string()).collect())
                        .collect();
                    // unseen histories exercise the back-off path
                    for _ in 0..contexts_per_level / 4 {
                        sample.push((0..m - 1).map(|_| vocab.choose(&mut rng).unwrap().clone()).collect());
                    }
                    for h in sample {
                        let hs: Vec<&str> = h.iter().map(String::as_str).collect();
                        let mut total = 0.0;
                        for w in &vocab {
                            let lp = lm.log10_prob(&hs, w);
                            total += 10f64.powf(lp);
                            let gap = (lp - oracle.log10_prob(&h, w)).abs();
                            c.oracle_gap = c.oracle_gap.max(if gap.is_nan() { f64::INFINITY } else { gap });
                        }
                        c.normalization_gap = c.normalization_gap.max((total - 1.0).abs());
                        c.contexts += 1;
                    }
                }
                for p in data.choose_multiple(&mut rng, 20) {
                    c.ppl_exact &= ppl_definitions_hold(&lm, p, n, direction);
                }
                if direction == Direction::Backward {
                    let reversed: Vec<Vec<String>> =
                        data.iter().map(|s| s.iter().rev().cloned().collect()).collect();
                    let fwd = train_ngram(&reversed, n, Direction::Forward, stream).unwrap();
                    c.reversal_exact &= fwd.conditional_log10_probs() == lm.conditional_log10_probs()
                        && fwd.backoff_log10_weights() == lm.backoff_log10_weights()
                        && fwd.vocabulary() == lm.vocabulary();
                }
            }
        }
    }
    c
}

fn ppl_definitions_hold(lm: &NgramModel, p: &[String], n: usize, direction: Direction) -> bool {
    let r = lm.score(p);
    let mut seq: Vec<&str> = p.iter().map(String::as_str).collect();
    if direction == Direction::Backward {
        seq.reverse();
    }
    let mut padded = vec![BOS; n - 1];
    padded.extend(seq);
    let mut no_eos = 0.0;
    for i in n - 1..padded.len() {
        no_eos += lm.log10_prob(&padded[i + 1 - n..i], padded[i]);
    }
    let with = no_eos + lm.log10_prob(&padded[padded.len() + 1 - n..], EOS);
    let len = p.len() as f64;
    r.n_tokens == p.len()
        && r.log10_prob_no_eos == no_eos
        && r.log10_prob_with_eos == with
        && r.ppl == 10f64.powf(-r.log10_prob_with_eos / (len + 1.0))
        && r.ppl_no_eos == 10f64.powf(-r.log10_prob_no_eos / len)
}

/// Full-batch subgradient descent on `0.5 |w|^2 + C sum max(0, 1 - y(w.x + b))`
/// with step `1 / (t + 1)^0.5` scaled by `step0`; returns the best iterate and
/// its objective.
pub fn subgradient_svm(x: &[Vec<f64>], y: &[f64], c: f64, iters: usize, step0: f64) -> (Vec<f64>, f64, f64) {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let obj = |w: &[f64], b: f64| {
        0.5 * w.iter().map(|v| v * v).sum::<f64>()
            + c * x
                .iter()
                .zip(y)
                .map(|(xi, yi)| (1.0 - yi * (w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b)).max(0.0))
                .sum::<f64>()
    };
    let mut best = (w.clone(), b, obj(&w, b));
    for t in 0..iters {
        let mut gw = w.clone();
        let mut gb = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let m = yi * (w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b);
            if m < 1.0 {
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g -= c * yi * v;
                }
                gb -= c * yi;
            }
        }
        let eta = step0 / ((t + 1) as f64).sqrt();
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
        let o = obj(&w, b);
        if o < best.2 {
            best = (w.clone(), b, o);
        }
    }
    best
}

/// Two Gaussian clouds around ±`centre` in `dim` dimensions, moved apart
/// along the first axis until every point clears the plane x_0 = 0 by `gap`.
pub fn separable_blobs(n: usize, dim: usize, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        v[0] = s * (gap + v[0].abs());
        x.push(v);
        y.push(s);
    }
    (x, y)
}

/// Measurements of [`svm_checks`].
#[derive(Debug)]
pub struct SvmCheck {
    /// Lowest training accuracy over the constructed separable sets.
    pub separable_accuracy: f64,
    /// |w - (1, 0)| and |b| on the symmetric set.
    pub symmetric_w_gap: f64,
    pub symmetric_b_gap: f64,
    /// Fraction of points, over all seeds, where the kernel and linear
    /// machines predict the same label.
    pub kernel_agreement: f64,
    pub seeds: usize,
    /// Solver objective minus the subgradient oracle's best objective,
    /// relative to the latter; positive means the solver is worse.
    pub objective_excess: f64,
}

pub fn svm_checks() -> SvmCheck {
    use translationese::svm::{primal_objective, train_kernel_svm, train_linear_svm};
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut separable_accuracy = 1.0f64;
    for seed in 0..5 {
        let (x, y) = separable_blobs(80, 4, 0.5, seed);
        let m = train_linear_svm(&x, &y, 100.0).unwrap();
        let ok = x.iter().zip(&y).filter(|(xi, yi)| (m.decision(xi) > 0.0) == (**yi > 0.0)).count();
        separable_accuracy = separable_accuracy.min(ok as f64 / x.len() as f64);
    }

    // mirror-image points on both sides of x_0 = 0; the closest pair sits at
    // x_0 = ±1, so the maximum-margin plane is w = (1, 0), b = 0
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (a, b) in [(1.0, 0.0), (1.0, 0.5), (1.0, -0.5), (2.0, 1.0), (3.0, -2.0), (1.5, 2.0)] {
        x.push(vec![a, b]);
        y.push(1.0);
        x.push(vec![-a, -b]);
        y.push(-1.0);
    }
    let m = train_linear_svm(&x, &y, 1000.0).unwrap();
    let symmetric_w_gap = (m.weights[0] - 1.0).abs().max(m.weights[1].abs());
    let symmetric_b_gap = m.bias.abs();

    let mut agree = 0usize;
    let mut total = 0usize;
    let seeds = 10;
    for seed in 0..seeds as u64 {
        let (x, y) = separable_blobs(60, 5, 0.5, 100 + seed);
        let (probe, _) = separable_blobs(60, 5, 0.5, 200 + seed);
        let lin = train_linear_svm(&x, &y, 1.0).unwrap();
        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| dot(a, b)).collect()).collect();
        let ker = train_kernel_svm(&k, &y, 1.0).unwrap();
        for p in x.iter().chain(&probe) {
            let row: Vec<f64> = x.iter().map(|b| dot(p, b)).collect();
            agree += usize::from(lin.predict(p) == ker.predict(&row));
            total += 1;
        }
    }

    // overlapping clouds so that the hinge term is active
    let (mut x, y) = separable_blobs(60, 3, 0.0, 77);
    for (xi, yi) in x.iter_mut().zip(&y) {
        xi[0] -= 0.8 * yi;
    }
    let c = 0.5;
    let m = train_linear_svm(&x, &y, c).unwrap();
    let ours = primal_objective(&m.weights, m.bias, c, &x, &y);
    let (_, _, best) = subgradient_svm(&x, &y, c, 20_000, 0.01);
    SvmCheck {
        separable_accuracy,
        symmetric_w_gap,
        symmetric_b_gap,
        kernel_agreement: agree as f64 / total as f64,
        seeds,
        objective_excess: (ours - best) / best,
    }
}

/// Normal equations on [1, x] solved by LU, with the slope's standard error
/// from sigma^2 (X'X)^-1.
pub fn normal_equation_oracle(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len();
    let design = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let yv = nalgebra::DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let beta = xtx.clone().lu().solve(&(design.transpose() * &yv)).unwrap();
    let resid = &yv - &design * &beta;
    let sse = resid.dot(&resid);
    let ybar = yv.mean();
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let inv = xtx.try_inverse().unwrap();
    let se = (sse / (n as f64 - 2.0) * inv[(1, 1)]).sqrt();
    (beta[1], beta[0], 1.0 - sse / sst, beta[1] / se)
}
