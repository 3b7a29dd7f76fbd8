//! Word-vector tables and document representations built from them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::Paragraph;
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const OOV_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
    pub oov_seed: u64,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic random vector for a word missing from a table.
pub fn oov_vector(word: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..dim).map(|_| rng.gen_range(-OOV_RANGE..OOV_RANGE)).collect()
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_seed: u64) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            oov_seed,
        }
    }

    pub fn from_pairs(dim: usize, pairs: Vec<(String, Vec<f64>)>, oov_seed: u64) -> Result<Self> {
        let mut t = Self::new(dim, oov_seed);
        for (w, v) in pairs {
            if v.len() != dim {
                return Err(Error::Shape {
                    op: "embedding table",
                    shapes: format!("vector for {w:?} has {} values, dim is {dim}", v.len()),
                });
            }
            t.insert(w, &v);
        }
        Ok(t)
    }

    /// Adds a vector unless the word is already present.
    fn insert(&mut self, word: String, v: &[f64]) -> bool {
        if self.index.contains_key(&word) {
            return false;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.data.extend_from_slice(v);
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Stored vector, or the deterministic OOV vector.
    pub fn vector(&self, word: &str) -> std::borrow::Cow<'_, [f64]> {
        match self.get(word) {
            Some(v) => std::borrow::Cow::Borrowed(v),
            None => std::borrow::Cow::Owned(oov_vector(word, self.oov_seed, self.dim)),
        }
    }

    pub fn read_vec<R: BufRead>(reader: R, oov_seed: u64) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::Malformed {
                line: 1,
                msg: e.to_string(),
            })?,
            None => return Err(Error::EmptyInput("vector file")),
        };
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match parts.as_slice() {
            [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
                (Ok(c), Ok(d)) if d > 0 => (c, d),
                _ => {
                    return Err(Error::Malformed {
                        line: 1,
                        msg: "header must be \"count dim\"".into(),
                    })
                }
            },
            _ => {
                return Err(Error::Malformed {
                    line: 1,
                    msg: "header must be \"count dim\"".into(),
                })
            }
        };
        let mut t = Self::new(dim, oov_seed);
        let mut buf = Vec::with_capacity(dim);
        let mut n_lines = 0;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::Malformed {
                line: line_no,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            n_lines += 1;
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default().to_string();
            buf.clear();
            for f in fields {
                buf.push(f.parse::<f64>().map_err(|_| Error::Malformed {
                    line: line_no,
                    msg: format!("cannot parse {f:?} as a real"),
                })?);
            }
            if buf.len() != dim {
                return Err(Error::Malformed {
                    line: line_no,
                    msg: format!("dimension mismatch: {} values, expected {dim}", buf.len()),
                });
            }
            t.insert(word, &buf);
        }
        if n_lines != count {
            return Err(Error::Malformed {
                line: 1,
                msg: format!("header declares {count} vectors, file has {n_lines}"),
            });
        }
        Ok(t)
    }

    pub fn load_vec(path: impl AsRef<Path>, oov_seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_vec(BufReader::new(f), oov_seed)
    }

    pub fn write_vec<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Hex sha-256 over the table contents and OOV seed.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dim.to_le_bytes());
        h.update(self.oov_seed.to_le_bytes());
        for (i, w) in self.words.iter().enumerate() {
            h.update(w.as_bytes());
            h.update([0]);
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Mean of the token vectors.
pub fn doc_mean(p: &Paragraph, table: &EmbeddingTable) -> Vec<f64> {
    let mut mean = vec![0.0; table.dim()];
    for t in &p.tokens {
        for (m, x) in mean.iter_mut().zip(table.vector(t).iter()) {
            *m += x;
        }
    }
    let n = p.tokens.len().max(1) as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Mean and per-dimension population variance of a paragraph's token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDoc {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn gaussian_doc(p: &Paragraph, table: &EmbeddingTable) -> GaussianDoc {
    let mean = doc_mean(p, table);
    let mut var = vec![0.0; table.dim()];
    for t in &p.tokens {
        for ((v, x), m) in var.iter_mut().zip(table.vector(t).iter()).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let n = p.tokens.len().max(1) as f64;
    for v in &mut var {
        *v /= n;
    }
    GaussianDoc { mean, var }
}

/// One row per paragraph: id, label, then the mean and variance vectors.
pub fn write_gaussian_csv<W: Write>(w: W, paragraphs: &[Paragraph], docs: &[GaussianDoc]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = docs.first().map_or(0, |d| d.mean.len());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("mean_{i}")));
    header.extend((0..dim).map(|i| format!("var_{i}")));
    out.write_record(&header)?;
    for (p, d) in paragraphs.iter().zip(docs) {
        let mut rec = vec![p.id.clone(), p.label.as_str().to_string()];
        rec.extend(d.mean.iter().chain(&d.var).map(|x| x.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

pub fn gaussian_similarity(a: &GaussianDoc, b: &GaussianDoc, alpha: f64) -> f64 {
    alpha * cosine(&a.mean, &b.mean) + (1.0 - alpha) * cosine(&a.var, &b.var)
}

/// Rows: `rows`, columns: `cols`.
pub fn gaussian_kernel(rows: &[GaussianDoc], cols: &[GaussianDoc], alpha: f64) -> Vec<Vec<f64>> {
    par::map(rows, |a| {
        cols.iter()
            .map(|b| gaussian_similarity(a, b, alpha))
            .collect()
    })
}

/// Symmetric kernel of a document set with itself; each pair computed once.
pub fn gaussian_gram(docs: &[GaussianDoc], alpha: f64) -> Vec<Vec<f64>> {
    let upper: Vec<Vec<f64>> = par::map_range(docs.len(), |i| {
        (i..docs.len())
            .map(|j| gaussian_similarity(&docs[i], &docs[j], alpha))
            .collect()
    });
    let n = docs.len();
    let mut k = vec![vec![0.0; n]; n];
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[i][i + off] = v;
            k[i + off][i] = v;
        }
    }
    k
}
