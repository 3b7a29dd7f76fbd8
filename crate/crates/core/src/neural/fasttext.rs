//! Bag of words plus hashed word bigrams, averaged and fed to a linear layer.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Network;
use crate::autodiff::{Tape, Tensor, Var};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ngram::LineReader;

pub const FASTTEXT_DIM: usize = 100;
pub const FASTTEXT_BUCKETS: usize = 100_000;
const UNK_WORD: &str = "<unk>";

/// Word ids (0 is the unknown word) followed by `buckets` bigram rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FastTextVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    buckets: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl FastTextVocab {
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], buckets: usize) -> Self {
        let mut words: Vec<String> = docs.iter().flatten().map(|t| t.as_ref().to_string()).collect();
        words.sort();
        words.dedup();
        words.retain(|w| w != UNK_WORD);
        words.insert(0, UNK_WORD.to_string());
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        FastTextVocab { words, index, buckets }
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn rows(&self) -> usize {
        self.words.len() + self.buckets
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn bigram_bucket(&self, a: &str, b: &str) -> usize {
        let key = format!("{a}\u{1f}{b}");
        self.words.len() + (fnv1a(key.as_bytes()) % self.buckets as u64) as usize
    }

    /// Word ids in order, then one bucket id per adjacent token pair.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("document"));
        }
        let mut ids: Vec<usize> = tokens
            .iter()
            .map(|t| self.index.get(t.as_ref()).copied().unwrap_or(0))
            .collect();
        if self.buckets > 0 {
            ids.extend(tokens.windows(2).map(|p| self.bigram_bucket(p[0].as_ref(), p[1].as_ref())));
        }
        Ok(ids)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "\\fasttext-vocab v1")?;
        writeln!(w, "buckets {}", self.buckets)?;
        writeln!(w, "words {}", self.words.len())?;
        for word in &self.words {
            writeln!(w, "{word}")?;
        }
        writeln!(w, "\\end")?;
        w.flush()
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut lr = LineReader { r: &mut r, line: 0 };
        lr.expect_exact("\\fasttext-vocab v1")?;
        let buckets = lr.keyed("buckets")?;
        let n: usize = lr.keyed("words")?;
        let mut words = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            words.push(lr.next_line()?);
        }
        lr.expect_exact("\\end")?;
        if words.first().map(String::as_str) != Some(UNK_WORD) {
            return Err(lr.err("word list must start with <unk>"));
        }
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(lr.err("duplicate word"));
        }
        Ok(FastTextVocab { words, index, buckets })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone)]
pub struct FastTextModel {
    params: Vec<Tensor>,
}

const NAMES: [&str; 3] = ["embedding", "head_w", "head_b"];

impl FastTextModel {
    /// Randomly initialized rows (uniform in +-1/dim) and a zero classifier.
    pub fn new(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FastTextModel {
            params: vec![
                Tensor::uniform(rows, dim, 1.0 / dim as f64, &mut rng),
                Tensor::zeros(dim, 2),
                Tensor::zeros(1, 2),
            ],
        }
    }

    /// Dimension taken from `table`; words found there start from their
    /// pre-trained vectors, everything else is random.
    pub fn with_pretrained(vocab: &FastTextVocab, table: &EmbeddingTable, seed: u64) -> Self {
        let mut m = Self::new(vocab.rows(), table.dim(), seed);
        for (i, w) in vocab.words().iter().enumerate() {
            if let Some(v) = table.get(w) {
                m.params[0].row_mut(i).copy_from_slice(v);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.params[0].cols
    }

    pub fn rows(&self) -> usize {
        self.params[0].rows
    }
}

impl Network for FastTextModel {
    fn kind(&self) -> &'static str {
        "fasttext"
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
        let docs = batch
            .iter()
            .map(|ids| {
                let rows = tape.embedding_lookup(vars[0], ids)?;
                Ok(tape.mean_pool(rows))
            })
            .collect::<Result<Vec<Var>>>()?;
        tape.concat_rows(&docs)
    }
}
