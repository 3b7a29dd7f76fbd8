//! Katz back-off n-gram language models with Good-Turing discounting.
//!
//! Models follow SRILM conventions: log base 10, counts 1..=5 are
//! Good-Turing discounted and larger counts use maximum likelihood, and a
//! context that would leave no mass for unseen words has its denominator
//! incremented by one. Each training sequence is padded with `order - 1`
//! begin markers and a single end marker. Backward models are trained on
//! (and score) reversed sequences.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::corpus::PosTag;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Counts above this are not discounted.
pub const GT_MAX: usize = 5;

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

/// Probability mass below this is treated as "nothing left for unseen words".
const MASS_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Token,
    Pos,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(Error::Format(format!("unknown direction {s:?}"))),
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Token => "token",
            Stream::Pos => "pos",
        })
    }
}

impl FromStr for Stream {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(Stream::Token),
            "pos" => Ok(Stream::Pos),
            _ => Err(Error::Format(format!("unknown stream {s:?}"))),
        }
    }
}

/// Log-probability and perplexity of one paragraph scored as a single sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub log10_prob_with_eos: f64,
    pub log10_prob_no_eos: f64,
    pub n_tokens: usize,
    pub ppl: f64,
    pub ppl_no_eos: f64,
}

impl ScoreReport {
    pub fn from_log_probs(with_eos: f64, no_eos: f64, n_tokens: usize) -> Self {
        ScoreReport {
            log10_prob_with_eos: with_eos,
            log10_prob_no_eos: no_eos,
            n_tokens,
            ppl: 10f64.powf(-with_eos / (n_tokens as f64 + 1.0)),
            ppl_no_eos: 10f64.powf(-no_eos / n_tokens as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ContextEntry {
    /// log10 of the discounted probability of each word seen after this context.
    probs: BTreeMap<u32, f64>,
    /// log10 of the back-off weight.
    backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    direction: Direction,
    stream: Stream,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    has_unk: bool,
    /// `levels[m - 1]` maps contexts of length `m - 1` to their distributions.
    levels: Vec<BTreeMap<Vec<u32>, ContextEntry>>,
}

/// Good-Turing discount coefficients for counts `1..=GT_MAX`, index 0 unused.
///
/// Coefficients that fall outside (0, 1] are replaced with 1 (no discount).
fn good_turing_coefficients(count_of_counts: &[usize]) -> [f64; GT_MAX + 1] {
    let mut d = [1.0; GT_MAX + 1];
    let n = |r: usize| count_of_counts.get(r).copied().unwrap_or(0) as f64;
    if n(1) == 0.0 {
        return d;
    }
    let common = (GT_MAX as f64 + 1.0) * n(GT_MAX + 1) / n(1);
    for (r, slot) in d.iter_mut().enumerate().skip(1) {
        if n(r) == 0.0 {
            continue;
        }
        let coeff0 = (r as f64 + 1.0) * n(r + 1) / (r as f64 * n(r));
        let coeff = (coeff0 - common) / (1.0 - common);
        if coeff.is_finite() && coeff > 1e-15 && coeff <= 1.0 && coeff0 <= 1.0 {
            *slot = coeff;
        }
    }
    d
}

pub fn train_ngram<S: AsRef<str>>(
    sequences: &[Vec<S>],
    order: usize,
    direction: Direction,
    stream: Stream,
) -> Result<NgramModel> {
    if !(1..=5).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "n-gram order must be in [1, 5], got {order}"
        )));
    }
    if sequences.is_empty() || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("n-gram training data"));
    }

    // vocabulary
    let mut vocab: Vec<String> = vec![BOS.into(), EOS.into()];
    let has_unk = stream == Stream::Token;
    let mut words: Vec<String> = match stream {
        Stream::Token => {
            let mut freq: HashMap<&str, usize> = HashMap::new();
            for s in sequences {
                for w in s {
                    *freq.entry(w.as_ref()).or_default() += 1;
                }
            }
            freq.into_iter()
                .filter(|(w, c)| *c > 1 && !is_reserved(w))
                .map(|(w, _)| w.to_string())
                .collect()
        }
        Stream::Pos => {
            let mut set: Vec<String> = PosTag::ALL.iter().map(|t| t.as_str().to_string()).collect();
            for s in sequences {
                for w in s {
                    let w = w.as_ref();
                    if !is_reserved(w) && !set.iter().any(|x| x == w) {
                        set.push(w.to_string());
                    }
                }
            }
            set
        }
    };
    if has_unk {
        vocab.push(UNK.into());
    }
    words.sort();
    vocab.extend(words);
    let index: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();

    let map_id = |w: &str| -> u32 {
        match index.get(w) {
            Some(&id) if id != BOS_ID => id,
            _ if has_unk => UNK_ID,
            // closed POS vocabularies contain every symbol seen in training
            _ => unreachable!("symbol {w:?} missing from closed vocabulary"),
        }
    };

    // counts per level
    let mut counts: Vec<BTreeMap<Vec<u32>, BTreeMap<u32, usize>>> = vec![BTreeMap::new(); order];
    let mut padded: Vec<u32> = Vec::new();
    for s in sequences {
        if s.is_empty() {
            continue;
        }
        padded.clear();
        padded.extend(std::iter::repeat(BOS_ID).take(order - 1));
        let ids = s.iter().map(|w| map_id(w.as_ref()));
        match direction {
            Direction::Forward => padded.extend(ids),
            Direction::Backward => {
                let mut v: Vec<u32> = ids.collect();
                v.reverse();
                padded.extend(v);
            }
        }
        padded.push(EOS_ID);
        for i in (order - 1)..padded.len() {
            let w = padded[i];
            for m in 1..=order {
                let ctx = padded[i + 1 - m..i].to_vec();
                *counts[m - 1].entry(ctx).or_default().entry(w).or_default() += 1;
            }
        }
    }

    let predictable: usize = vocab.len() - 1; // everything except BOS
    let mut levels: Vec<BTreeMap<Vec<u32>, ContextEntry>> = Vec::with_capacity(order);
    for m in 1..=order {
        let level_counts = &counts[m - 1];
        let mut coc = vec![0usize; GT_MAX + 2];
        for followers in level_counts.values() {
            for &c in followers.values() {
                if c <= GT_MAX + 1 {
                    coc[c] += 1;
                }
            }
        }
        let disc = good_turing_coefficients(&coc);
        let discount = |c: usize| if c <= GT_MAX { disc[c] } else { 1.0 };

        let mut level = BTreeMap::new();
        for (ctx, followers) in level_counts {
            let total: usize = followers.values().sum();
            let n_unseen = predictable - followers.len();
            let estimate = |denom: f64| -> (Vec<(u32, f64)>, f64) {
                let probs: Vec<(u32, f64)> = followers
                    .iter()
                    .map(|(&w, &c)| (w, discount(c) * c as f64 / denom))
                    .collect();
                let seen: f64 = probs.iter().map(|(_, p)| p).sum();
                (probs, 1.0 - seen)
            };
            let (mut probs, mut leftover) = estimate(total as f64);
            if n_unseen > 0 && leftover < MASS_EPSILON {
                (probs, leftover) = estimate(total as f64 + 1.0);
            }

            let entry = if m == 1 {
                // unigrams list every predictable word explicitly
                let mut all: BTreeMap<u32, f64> = BTreeMap::new();
                let seen: BTreeMap<u32, f64> = probs.into_iter().collect();
                let share = if n_unseen > 0 {
                    leftover / n_unseen as f64
                } else {
                    0.0
                };
                let bonus = if n_unseen == 0 {
                    leftover / predictable as f64
                } else {
                    0.0
                };
                for id in 1..vocab.len() as u32 {
                    let p = seen.get(&id).map_or(share, |p| p + bonus);
                    all.insert(id, p.log10());
                }
                ContextEntry {
                    probs: all,
                    backoff: 0.0,
                }
            } else {
                let lower = &ctx[1..];
                let lower_seen: f64 = probs
                    .iter()
                    .map(|&(w, _)| 10f64.powf(backoff_log10(&levels, lower, w)))
                    .sum();
                let denom = 1.0 - lower_seen;
                if n_unseen == 0 || denom < MASS_EPSILON || leftover < MASS_EPSILON {
                    let s: f64 = probs.iter().map(|(_, p)| p).sum();
                    ContextEntry {
                        probs: probs.into_iter().map(|(w, p)| (w, (p / s).log10())).collect(),
                        backoff: 0.0,
                    }
                } else {
                    ContextEntry {
                        probs: probs.into_iter().map(|(w, p)| (w, p.log10())).collect(),
                        backoff: (leftover / denom).log10(),
                    }
                }
            };
            level.insert(ctx.clone(), entry);
        }
        levels.push(level);
    }

    Ok(NgramModel {
        order,
        direction,
        stream,
        vocab,
        index,
        has_unk,
        levels,
    })
}

fn is_reserved(w: &str) -> bool {
    w == BOS || w == EOS || w == UNK
}

/// log10 p(w | ctx) with Katz back-off, using the levels built so far.
fn backoff_log10(levels: &[BTreeMap<Vec<u32>, ContextEntry>], ctx: &[u32], w: u32) -> f64 {
    let mut acc = 0.0;
    let start = ctx.len().min(levels.len().saturating_sub(1));
    for m in (1..=start + 1).rev() {
        let h = &ctx[ctx.len() - (m - 1)..];
        if let Some(entry) = levels[m - 1].get(h) {
            if let Some(p) = entry.probs.get(&w) {
                return acc + p;
            }
            acc += entry.backoff;
        }
    }
    f64::NEG_INFINITY
}

impl NgramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Vocabulary including the reserved markers.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    /// Symbols that can be predicted (everything but the begin marker).
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.vocab[1..].iter().map(String::as_str)
    }

    fn id_of(&self, w: &str) -> u32 {
        match self.index.get(w) {
            Some(&id) => id,
            None if self.has_unk => UNK_ID,
            // unseen POS symbol: score as the rarest possible event
            None => u32::MAX,
        }
    }

    /// log10 p(word | context) in model order (context is the preceding
    /// symbols as the model sees them; backward models see reversed text).
    pub fn log10_prob(&self, context: &[&str], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| self.id_of(w)).collect();
        let w = self.id_of(word);
        backoff_log10(&self.levels, &ctx, w)
    }

    /// Scores a paragraph as one sentence. OOV tokens are scored as `<unk>`.
    pub fn score<S: AsRef<str>>(&self, paragraph: &[S]) -> ScoreReport {
        let mut ids: Vec<u32> = Vec::with_capacity(paragraph.len() + self.order);
        ids.extend(std::iter::repeat(BOS_ID).take(self.order - 1));
        let body = paragraph.iter().map(|w| self.id_of(w.as_ref()));
        match self.direction {
            Direction::Forward => ids.extend(body),
            Direction::Backward => {
                let mut v: Vec<u32> = body.collect();
                v.reverse();
                ids.extend(v);
            }
        }
        ids.push(EOS_ID);
        let mut no_eos = 0.0;
        let last = ids.len() - 1;
        for i in (self.order - 1)..last {
            no_eos += backoff_log10(&self.levels, &ids[i + 1 - self.order..i], ids[i]);
        }
        let eos = backoff_log10(&self.levels, &ids[last + 1 - self.order..last], EOS_ID);
        ScoreReport::from_log_probs(no_eos + eos, no_eos, paragraph.len())
    }

    /// Contexts stored at level `m` (context length `m - 1`).
    pub fn contexts(&self, m: usize) -> Vec<Vec<&str>> {
        self.levels[m - 1]
            .keys()
            .map(|ctx| ctx.iter().map(|&i| self.vocab[i as usize].as_str()).collect())
            .collect()
    }

    /// Stored (context, word) → log10 probability entries, for comparisons.
    pub fn conditional_log10_probs(&self) -> BTreeMap<(Vec<String>, String), f64> {
        let mut out = BTreeMap::new();
        for level in &self.levels {
            for (ctx, entry) in level {
                let c: Vec<String> = ctx.iter().map(|&i| self.vocab[i as usize].clone()).collect();
                for (&w, &p) in &entry.probs {
                    out.insert((c.clone(), self.vocab[w as usize].clone()), p);
                }
            }
        }
        out
    }

    pub fn backoff_log10_weights(&self) -> BTreeMap<Vec<String>, f64> {
        let mut out = BTreeMap::new();
        for level in &self.levels {
            for (ctx, entry) in level {
                let c: Vec<String> = ctx.iter().map(|&i| self.vocab[i as usize].clone()).collect();
                out.insert(c, entry.backoff);
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "\\ngram-lm v1")?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "direction {}", self.direction)?;
        writeln!(w, "stream {}", self.stream)?;
        writeln!(w, "vocab {}", self.vocab.len())?;
        for v in &self.vocab {
            writeln!(w, "{v}")?;
        }
        for (m, level) in self.levels.iter().enumerate() {
            writeln!(w, "\\level {} {}", m + 1, level.len())?;
            for (ctx, entry) in level {
                write!(w, "C\t{}\t{}", entry.backoff, entry.probs.len())?;
                for &c in ctx {
                    write!(w, "\t{}", self.vocab[c as usize])?;
                }
                writeln!(w)?;
                for (&word, &p) in &entry.probs {
                    writeln!(w, "{}\t{}", p, self.vocab[word as usize])?;
                }
            }
        }
        writeln!(w, "\\end")
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = LineReader { r, line: 0 };
        lines.expect_exact("\\ngram-lm v1")?;
        let order: usize = lines.keyed("order")?;
        let direction: Direction = lines.keyed::<String>("direction")?.parse()?;
        let stream: Stream = lines.keyed::<String>("stream")?.parse()?;
        let n_vocab: usize = lines.keyed("vocab")?;
        if !(1..=5).contains(&order) {
            return Err(Error::Format(format!("bad order {order}")));
        }
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            vocab.push(lines.next_line()?);
        }
        if vocab.first().map(String::as_str) != Some(BOS)
            || vocab.get(1).map(String::as_str) != Some(EOS)
        {
            return Err(Error::Format("vocabulary must start with <s> </s>".into()));
        }
        let has_unk = vocab.get(2).map(String::as_str) == Some(UNK);
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let lookup = |w: &str, line: usize| -> Result<u32> {
            index
                .get(w)
                .copied()
                .ok_or_else(|| Error::Format(format!("line {line}: symbol {w:?} not in vocabulary")))
        };
        let mut levels = Vec::with_capacity(order);
        for m in 1..=order {
            let header = lines.next_line()?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let n_ctx: usize = match parts.as_slice() {
                ["\\level", lm, n] if lm.parse::<usize>().ok() == Some(m) => {
                    n.parse().map_err(|_| lines.err("bad context count"))?
                }
                _ => return Err(lines.err("expected level header")),
            };
            let mut level = BTreeMap::new();
            for _ in 0..n_ctx {
                let cl = lines.next_line()?;
                let f: Vec<&str> = cl.split('\t').collect();
                if f.len() < 3 || f[0] != "C" || f.len() - 3 != m - 1 {
                    return Err(lines.err("bad context line"));
                }
                let backoff: f64 = f[1].parse().map_err(|_| lines.err("bad backoff"))?;
                let n_probs: usize = f[2].parse().map_err(|_| lines.err("bad prob count"))?;
                let ctx = f[3..]
                    .iter()
                    .map(|w| lookup(w, lines.line))
                    .collect::<Result<Vec<u32>>>()?;
                let mut probs = BTreeMap::new();
                for _ in 0..n_probs {
                    let pl = lines.next_line()?;
                    let (p, word) = pl.split_once('\t').ok_or_else(|| lines.err("bad prob line"))?;
                    let p: f64 = p.parse().map_err(|_| lines.err("bad probability"))?;
                    probs.insert(lookup(word, lines.line)?, p);
                }
                level.insert(ctx, ContextEntry { probs, backoff });
            }
            levels.push(level);
        }
        lines.expect_exact("\\end")?;
        Ok(NgramModel {
            order,
            direction,
            stream,
            vocab,
            index,
            has_unk,
            levels,
        })
    }
}

/// Small line-oriented reader shared by the text model formats.
pub(crate) struct LineReader<'a, R: BufRead> {
    pub r: &'a mut R,
    pub line: usize,
}

impl<R: BufRead> LineReader<'_, R> {
    pub fn err(&self, msg: &str) -> Error {
        Error::Format(format!("line {}: {msg}", self.line))
    }

    pub fn next_line(&mut self) -> Result<String> {
        let mut s = String::new();
        let n = self
            .r
            .read_line(&mut s)
            .map_err(|e| Error::Format(format!("line {}: {e}", self.line + 1)))?;
        self.line += 1;
        if n == 0 {
            return Err(self.err("unexpected end of input"));
        }
        while s.ends_with('\n') || s.ends_with('\r') {
            s.pop();
        }
        Ok(s)
    }

    pub fn expect_exact(&mut self, want: &str) -> Result<()> {
        let got = self.next_line()?;
        if got != want {
            return Err(self.err(&format!("expected {want:?}, got {got:?}")));
        }
        Ok(())
    }

    pub fn keyed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let got = self.next_line()?;
        let rest = got
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(&format!("expected {key:?}")))?;
        rest.parse()
            .map_err(|_| self.err(&format!("cannot parse value of {key:?}")))
    }
}
