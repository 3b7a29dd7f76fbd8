//! Hand-crafted 108-dimensional paragraph features and the POS/character
//! trigram baseline vectors.
//!
//! Layout:
//! - 0..5: mean token length, syllables per token, token count, lexical
//!   density, type-token ratio
//! - 5..23: POS tag ratios in [`PosTag::ALL`] order
//! - 23..83: (log-prob, ppl, ppl without EOS) for token/POS streams,
//!   forward/backward, n = 1..5, in that nesting order
//! - 83..108: for n = 1..5, percentages of paragraph n-grams in training
//!   frequency quartiles 1..4 and out of vocabulary

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Paragraph, PosTag};
use crate::error::{Error, Result};
use crate::ngram::{train_ngram, Direction, LineReader, NgramModel, Stream};
use crate::par;

pub const N_FEATURES: usize = 108;
pub const LM_OFFSET: usize = 23;
pub const QUARTILE_OFFSET: usize = 83;
pub const N_LMS: usize = 20;
pub const MAX_ORDER: usize = 5;

pub const DEFAULT_VOWELS: &str = "aeiouyàáâãäåæèéêëìíîïòóôõöøùúûüýÿœ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuartileMode {
    /// Four near-equal bins of n-gram types by descending frequency rank.
    TypeRank,
    /// Bins by cumulative token mass (quartile 1 holds the first quarter of mass).
    Mass,
}

impl std::fmt::Display for QuartileMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuartileMode::TypeRank => "type-rank",
            QuartileMode::Mass => "mass",
        })
    }
}

impl std::str::FromStr for QuartileMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type-rank" => Ok(QuartileMode::TypeRank),
            "mass" => Ok(QuartileMode::Mass),
            _ => Err(Error::InvalidArgument(format!("unknown quartile mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub vowels: String,
    pub quartile_mode: QuartileMode,
    /// Whether the log-prob features include the end-of-sentence transition.
    pub logprob_with_eos: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            vowels: DEFAULT_VOWELS.to_string(),
            quartile_mode: QuartileMode::TypeRank,
            logprob_with_eos: true,
        }
    }
}

/// (stream, direction, order) of the language model in slot `slot`.
pub fn lm_slot_spec(slot: usize) -> (Stream, Direction, usize) {
    let stream = if slot < 10 { Stream::Token } else { Stream::Pos };
    let direction = if slot % 10 < 5 {
        Direction::Forward
    } else {
        Direction::Backward
    };
    (stream, direction, slot % 5 + 1)
}

pub fn lm_slot(stream: Stream, direction: Direction, order: usize) -> usize {
    let s = match stream {
        Stream::Token => 0,
        Stream::Pos => 1,
    };
    let d = match direction {
        Direction::Forward => 0,
        Direction::Backward => 1,
    };
    s * 10 + d * 5 + order - 1
}

pub fn feature_name(id: usize) -> String {
    const SURFACE: [&str; 5] = [
        "Average word length",
        "Syllable ratio",
        "Paragraph length",
        "Lexical density",
        "Type-token ratio",
    ];
    match id {
        0..=4 => SURFACE[id].to_string(),
        5..=22 => format!("POS Tag Ratio {:?}", PosTag::ALL[id - 5]),
        23..=82 => {
            let slot = (id - LM_OFFSET) / 3;
            let (stream, dir, n) = lm_slot_spec(slot);
            let stream = match stream {
                Stream::Token => "tok",
                Stream::Pos => "POS",
            };
            let dir = match dir {
                Direction::Forward => "fwd",
                Direction::Backward => "bck",
            };
            let what = ["Log Prob", "Ppl", "Ppl-EOS"][(id - LM_OFFSET) % 3];
            format!("LM_{stream} {dir} n={n} {what}")
        }
        83..=107 => {
            let n = (id - QUARTILE_OFFSET) / 5 + 1;
            let gram = ["unigrams", "bigrams", "trigrams", "4-grams", "5-grams"][n - 1];
            match (id - QUARTILE_OFFSET) % 5 {
                4 => format!("% OOV {gram}"),
                q => format!("% {gram} from freq. quartile {}", q + 1),
            }
        }
        _ => panic!("feature id {id} out of range"),
    }
}

pub fn pos_strings(p: &Paragraph) -> Vec<&'static str> {
    p.pos_tags.iter().map(|t| t.as_str()).collect()
}

/// Quartile assignment (0..4) for every training n-gram type.
pub fn quartile_table(
    paragraphs: &[Paragraph],
    n: usize,
    mode: QuartileMode,
) -> HashMap<Vec<String>, u8> {
    let mut freq: HashMap<&[String], usize> = HashMap::new();
    for p in paragraphs {
        for g in p.tokens.windows(n) {
            *freq.entry(g).or_default() += 1;
        }
    }
    let mut types: Vec<(&[String], usize)> = freq.into_iter().collect();
    types.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n_types = types.len();
    let total: usize = types.iter().map(|t| t.1).sum();
    let mut cum = 0usize;
    types
        .into_iter()
        .enumerate()
        .map(|(rank, (g, c))| {
            let q = match mode {
                QuartileMode::TypeRank => rank * 4 / n_types,
                QuartileMode::Mass => (cum * 4 / total).min(3),
            };
            cum += c;
            (g.to_vec(), q as u8)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FeatureContext {
    pub config: FeatureConfig,
    /// Twenty models in slot order, see [`lm_slot_spec`].
    pub lms: Vec<NgramModel>,
    /// One table per n = 1..5.
    pub quartiles: Vec<HashMap<Vec<String>, u8>>,
    pub scaler: Vec<f64>,
}

pub fn fit_feature_context(train: &[Paragraph], config: FeatureConfig) -> Result<FeatureContext> {
    if train.is_empty() {
        return Err(Error::EmptyInput("feature training set"));
    }
    let mut ctx = fit_unscaled(train, config)?;
    let raw = par::map(train, |p| ctx.extract_raw(p));
    ctx.scaler = max_abs(&raw);
    Ok(ctx)
}

/// Language models and quartile tables fitted on `train`, scaler all ones.
fn fit_unscaled(train: &[Paragraph], config: FeatureConfig) -> Result<FeatureContext> {
    let token_seqs: Vec<Vec<&str>> = train
        .iter()
        .map(|p| p.tokens.iter().map(String::as_str).collect())
        .collect();
    let pos_seqs: Vec<Vec<&str>> = train.iter().map(pos_strings).collect();
    let lms = par::map_range(N_LMS, |slot| {
        let (stream, dir, n) = lm_slot_spec(slot);
        let data = match stream {
            Stream::Token => &token_seqs,
            Stream::Pos => &pos_seqs,
        };
        train_ngram(data, n, dir, stream)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let quartiles = (1..=MAX_ORDER)
        .map(|n| quartile_table(train, n, config.quartile_mode))
        .collect();
    Ok(FeatureContext {
        config,
        lms,
        quartiles,
        scaler: vec![1.0; N_FEATURES],
    })
}

/// Fits a context on `train` and returns it with out-of-fold training
/// features. Paragraph `i` falls in fold `i % folds` and is described by
/// language models and quartile tables fitted on the other folds; the scaler
/// is the max-abs of these out-of-fold values. In-sample scores would make
/// training paragraphs look far more probable than any unseen paragraph.
/// With `folds < 2` this is [`fit_feature_context`] plus in-sample features.
pub fn fit_crossfit(
    train: &[Paragraph],
    config: FeatureConfig,
    folds: usize,
) -> Result<(FeatureContext, Vec<Vec<f64>>)> {
    if folds < 2 {
        let ctx = fit_feature_context(train, config)?;
        let x = ctx.extract_all(train);
        return Ok((ctx, x));
    }
    if train.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{} training paragraphs cannot fill {folds} folds",
            train.len()
        )));
    }
    let mut ctx = fit_unscaled(train, config)?;
    let mut raw = vec![Vec::new(); train.len()];
    for f in 0..folds {
        let rest: Vec<Paragraph> = train
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds != f)
            .map(|(_, p)| p.clone())
            .collect();
        let sub = fit_unscaled(&rest, ctx.config.clone())?;
        let held: Vec<usize> = (f..train.len()).step_by(folds).collect();
        let feats = par::map(&held, |&i| sub.extract_raw(&train[i]));
        for (i, v) in held.into_iter().zip(feats) {
            raw[i] = v;
        }
    }
    ctx.scaler = max_abs(&raw);
    let x = raw.into_iter().map(|v| ctx.scale(v)).collect();
    Ok((ctx, x))
}

fn max_abs(raw: &[Vec<f64>]) -> Vec<f64> {
    let mut scaler = vec![0.0f64; N_FEATURES];
    for v in raw {
        for (s, x) in scaler.iter_mut().zip(v) {
            *s = s.max(x.abs());
        }
    }
    for s in &mut scaler {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    scaler
}

/// Number of maximal vowel runs, at least one for tokens with a letter.
pub fn syllables(token: &str, vowels: &str) -> usize {
    let mut runs = 0;
    let mut in_run = false;
    for c in token.chars().flat_map(char::to_lowercase) {
        let v = vowels.contains(c);
        if v && !in_run {
            runs += 1;
        }
        in_run = v;
    }
    if token.chars().any(char::is_alphabetic) {
        runs.max(1)
    } else {
        0
    }
}

impl FeatureContext {
    /// Unscaled feature vector.
    pub fn extract_raw(&self, p: &Paragraph) -> Vec<f64> {
        let mut f = Vec::with_capacity(N_FEATURES);
        let n = p.len() as f64;

        let chars: usize = p.tokens.iter().map(|t| t.chars().count()).sum();
        f.push(chars as f64 / n);
        let syl: usize = p.tokens.iter().map(|t| syllables(t, &self.config.vowels)).sum();
        f.push(syl as f64 / n);
        f.push(n);
        let content = p.pos_tags.iter().filter(|t| t.is_content()).count();
        f.push(content as f64 / n);
        let types: HashSet<String> = p.tokens.iter().map(|t| t.to_lowercase()).collect();
        f.push(types.len() as f64 / n);

        let mut tag_counts = [0usize; 18];
        for t in &p.pos_tags {
            tag_counts[t.index()] += 1;
        }
        f.extend(tag_counts.iter().map(|&c| c as f64 / n));

        let pos = pos_strings(p);
        for lm in &self.lms {
            let r = match lm.stream() {
                Stream::Token => lm.score(&p.tokens),
                Stream::Pos => lm.score(&pos),
            };
            f.push(if self.config.logprob_with_eos {
                r.log10_prob_with_eos
            } else {
                r.log10_prob_no_eos
            });
            f.push(r.ppl);
            f.push(r.ppl_no_eos);
        }

        for (k, table) in self.quartiles.iter().enumerate() {
            let mut counts = [0usize; 5];
            let mut total = 0usize;
            for g in p.tokens.windows(k + 1) {
                let q = table.get(g).map_or(4, |&q| q as usize);
                counts[q] += 1;
                total += 1;
            }
            if total == 0 {
                f.extend([0.0, 0.0, 0.0, 0.0, 100.0]);
            } else {
                f.extend(counts.iter().map(|&c| 100.0 * c as f64 / total as f64));
            }
        }
        debug_assert_eq!(f.len(), N_FEATURES);
        f
    }

    pub fn scale(&self, mut raw: Vec<f64>) -> Vec<f64> {
        for (x, s) in raw.iter_mut().zip(&self.scaler) {
            *x /= s;
        }
        raw
    }

    /// Scaled feature vector.
    pub fn extract(&self, p: &Paragraph) -> Vec<f64> {
        self.scale(self.extract_raw(p))
    }

    pub fn extract_all(&self, ps: &[Paragraph]) -> Vec<Vec<f64>> {
        par::map(ps, |p| self.extract(p))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (slot, lm) in self.lms.iter().enumerate() {
            let path = dir.join(lm_file_name(slot));
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            lm.write(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("features.txt");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        self.write_tables(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    }

    fn write_tables<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "\\feature-context v1")?;
        writeln!(w, "vowels {}", self.config.vowels)?;
        writeln!(w, "quartile-mode {}", self.config.quartile_mode)?;
        writeln!(w, "logprob-with-eos {}", self.config.logprob_with_eos)?;
        let s: Vec<String> = self.scaler.iter().map(|x| x.to_string()).collect();
        writeln!(w, "scaler {}", s.join(" "))?;
        for (k, table) in self.quartiles.iter().enumerate() {
            writeln!(w, "quartiles {} {}", k + 1, table.len())?;
            let mut rows: Vec<(&Vec<String>, &u8)> = table.iter().collect();
            rows.sort();
            for (g, q) in rows {
                writeln!(w, "{}\t{}", q, g.join("\t"))?;
            }
        }
        writeln!(w, "\\end")
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut lms = Vec::with_capacity(N_LMS);
        for slot in 0..N_LMS {
            let path = dir.join(lm_file_name(slot));
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let lm = NgramModel::read(&mut BufReader::new(f))?;
            let want = lm_slot_spec(slot);
            if (lm.stream(), lm.direction(), lm.order()) != want {
                return Err(Error::PipelineMismatch(format!(
                    "language model slot {slot} holds {} {} order {}, expected {} {} order {}",
                    lm.stream(),
                    lm.direction(),
                    lm.order(),
                    want.0,
                    want.1,
                    want.2
                )));
            }
            lms.push(lm);
        }
        let path = dir.join("features.txt");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = BufReader::new(f);
        let mut lines = LineReader {
            r: &mut reader,
            line: 0,
        };
        lines.expect_exact("\\feature-context v1")?;
        let vowels: String = lines.keyed("vowels")?;
        let quartile_mode: QuartileMode = lines.keyed::<String>("quartile-mode")?.parse()?;
        let logprob_with_eos: bool = lines.keyed("logprob-with-eos")?;
        let scaler_line: String = lines.keyed("scaler")?;
        let scaler = scaler_line
            .split(' ')
            .map(|s| s.parse::<f64>().map_err(|_| lines.err("bad scaler value")))
            .collect::<Result<Vec<f64>>>()?;
        if scaler.len() != N_FEATURES {
            return Err(Error::PipelineMismatch(format!(
                "scaler has {} entries, expected {N_FEATURES}",
                scaler.len()
            )));
        }
        let mut quartiles = Vec::with_capacity(MAX_ORDER);
        for n in 1..=MAX_ORDER {
            let header = lines.next_line()?;
            let count: usize = match header.split(' ').collect::<Vec<_>>().as_slice() {
                ["quartiles", k, c] if k.parse::<usize>().ok() == Some(n) => {
                    c.parse().map_err(|_| lines.err("bad count"))?
                }
                _ => return Err(lines.err("expected quartile header")),
            };
            let mut table = HashMap::with_capacity(count);
            for _ in 0..count {
                let l = lines.next_line()?;
                let mut parts = l.split('\t');
                let q: u8 = parts
                    .next()
                    .and_then(|q| q.parse().ok())
                    .filter(|&q| q < 4)
                    .ok_or_else(|| lines.err("bad quartile"))?;
                let g: Vec<String> = parts.map(str::to_string).collect();
                if g.len() != n {
                    return Err(lines.err("n-gram length does not match its table"));
                }
                table.insert(g, q);
            }
            quartiles.push(table);
        }
        lines.expect_exact("\\end")?;
        Ok(FeatureContext {
            config: FeatureConfig {
                vowels,
                quartile_mode,
                logprob_with_eos,
            },
            lms,
            quartiles,
            scaler,
        })
    }
}

fn lm_file_name(slot: usize) -> String {
    let (stream, dir, n) = lm_slot_spec(slot);
    format!("lm_{slot:02}_{stream}_{dir}_{n}.lm")
}

/// Writes `id,label,0..107` rows.
pub fn write_feature_csv<W: Write>(w: W, paragraphs: &[Paragraph], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = rows.first().map_or(N_FEATURES, Vec::len);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| i.to_string()));
    out.write_record(&header)?;
    for (p, row) in paragraphs.iter().zip(rows) {
        let mut rec = vec![p.id.clone(), p.label.as_str().to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrigramKind {
    Pos,
    Char,
}

pub const TRIGRAM_VOCAB: usize = 1000;
const START: &str = "\u{2}";
const END: &str = "\u{3}";

/// Top trigrams of the training set for one baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigramBaselineSpec {
    pub kind: TrigramKind,
    pub vocabulary: Vec<[String; 3]>,
    index: HashMap<[String; 3], usize>,
}

/// Trigrams of one paragraph under the padding rules of `kind`.
pub fn paragraph_trigrams(p: &Paragraph, kind: TrigramKind) -> Vec<[String; 3]> {
    let mut out = Vec::new();
    let mut push_padded = |units: Vec<String>| {
        let mut seq = vec![START.to_string(), START.to_string()];
        seq.extend(units);
        seq.push(END.to_string());
        seq.push(END.to_string());
        for w in seq.windows(3) {
            out.push([w[0].clone(), w[1].clone(), w[2].clone()]);
        }
    };
    match kind {
        TrigramKind::Pos => push_padded(p.pos_tags.iter().map(|t| t.as_str().to_string()).collect()),
        TrigramKind::Char => {
            for (tok, tag) in p.tokens.iter().zip(&p.pos_tags) {
                if *tag == PosTag::Punct || !tok.chars().any(char::is_alphanumeric) {
                    continue;
                }
                push_padded(tok.chars().map(String::from).collect());
            }
        }
    }
    out
}

impl TrigramBaselineSpec {
    pub fn fit(train: &[Paragraph], kind: TrigramKind, size: usize) -> Self {
        let mut freq: HashMap<[String; 3], usize> = HashMap::new();
        for p in train {
            for g in paragraph_trigrams(p, kind) {
                *freq.entry(g).or_default() += 1;
            }
        }
        let mut all: Vec<([String; 3], usize)> = freq.into_iter().collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(size);
        Self::from_vocabulary(kind, all.into_iter().map(|(g, _)| g).collect())
    }

    pub fn from_vocabulary(kind: TrigramKind, vocabulary: Vec<[String; 3]>) -> Self {
        let index = vocabulary
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect();
        TrigramBaselineSpec {
            kind,
            vocabulary,
            index,
        }
    }

    pub fn extract(&self, p: &Paragraph) -> Vec<f64> {
        let grams = paragraph_trigrams(p, self.kind);
        let mut v = vec![0.0; self.vocabulary.len()];
        if grams.is_empty() {
            return v;
        }
        let total = grams.len() as f64;
        for g in &grams {
            if let Some(&i) = self.index.get(g) {
                v[i] += 1.0;
            }
        }
        for x in &mut v {
            *x /= total;
        }
        v
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = format!(
            "\\trigram-baseline v1\nkind {}\nsize {}\n",
            match self.kind {
                TrigramKind::Pos => "pos",
                TrigramKind::Char => "char",
            },
            self.vocabulary.len()
        );
        for g in &self.vocabulary {
            s.push_str(&g.join("\t"));
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let mut lines = LineReader { r: &mut r, line: 0 };
        lines.expect_exact("\\trigram-baseline v1")?;
        let kind = match lines.keyed::<String>("kind")?.as_str() {
            "pos" => TrigramKind::Pos,
            "char" => TrigramKind::Char,
            other => return Err(Error::Format(format!("unknown trigram kind {other:?}"))),
        };
        let size: usize = lines.keyed("size")?;
        let mut vocab = Vec::with_capacity(size);
        for _ in 0..size {
            let l = lines.next_line()?;
            let parts: Vec<&str> = l.split('\t').collect();
            if parts.len() != 3 {
                return Err(lines.err("expected three tab-separated units"));
            }
            vocab.push([parts[0].to_string(), parts[1].to_string(), parts[2].to_string()]);
        }
        Ok(Self::from_vocabulary(kind, vocab))
    }
}
