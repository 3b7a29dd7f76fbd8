//! Byte-pair subword units for the neural models.
//!
//! Words are split into characters plus an end-of-word marker, and the most
//! frequent adjacent pair is merged until the unit table reaches the target
//! size (or nothing is left to merge).

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ngram::LineReader;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_UNIT: &str = "<pad>";
pub const UNK_UNIT: &str = "<unk>";
/// Appended to every word before merging (a private-use code point).
pub const END_OF_WORD: char = '\u{E000}';
pub const DEFAULT_VOCAB_SIZE: usize = 8000;

#[derive(Debug, Clone, PartialEq)]
pub struct SubwordVocab {
    merges: Vec<(String, String)>,
    units: Vec<String>,
    index: HashMap<String, usize>,
}

fn split_word(w: &str) -> Vec<String> {
    w.chars()
        .map(|c| c.to_string())
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

/// Applies one merge to a symbol sequence in place.
fn apply_merge(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == a && symbols[i + 1] == b {
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        }
        i += 1;
    }
}

pub fn train_subword<S: AsRef<str>>(corpus: &[Vec<S>], target_size: usize) -> Result<SubwordVocab> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in corpus.iter().flatten() {
        let t = tok.as_ref();
        if !t.is_empty() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyInput("subword training corpus"));
    }
    let mut words: Vec<(Vec<String>, usize)> = counts.into_iter().map(|(w, c)| (split_word(w), c)).collect();
    words.sort();

    let mut base: Vec<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    base.sort();
    base.dedup();
    if target_size < base.len() + 2 {
        return Err(Error::InvalidArgument(format!(
            "subword vocabulary size {target_size} is below the {} reserved and base units",
            base.len() + 2
        )));
    }
    let mut units = vec![PAD_UNIT.to_string(), UNK_UNIT.to_string()];
    units.extend(base);
    let mut index: HashMap<String, usize> = units.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
    let mut merges = Vec::new();

    while units.len() < target_size {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0].as_str(), p[1].as_str())).or_insert(0) += c;
            }
        }
        // highest count, then lexicographically smallest pair
        let best = pairs
            .into_iter()
            .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then_with(|| pa.cmp(pb)));
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        for (syms, _) in &mut words {
            apply_merge(syms, &a, &b);
        }
        let joined = format!("{a}{b}");
        if !index.contains_key(&joined) {
            index.insert(joined.clone(), units.len());
            units.push(joined);
        }
        merges.push((a, b));
    }
    Ok(SubwordVocab { merges, units, index })
}

impl SubwordVocab {
    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn unit(&self, id: usize) -> Option<&str> {
        self.units.get(id).map(String::as_str)
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    /// Units of one token after replaying every merge in order.
    pub fn segment(&self, token: &str) -> Vec<String> {
        let mut syms = split_word(token);
        for (a, b) in &self.merges {
            if syms.len() < 2 {
                break;
            }
            apply_merge(&mut syms, a, b);
        }
        syms
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .filter(|t| !t.as_ref().is_empty())
            .flat_map(|t| self.segment(t.as_ref()))
            .map(|u| self.id(&u).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of `encode` on text made of known characters. Unknown units
    /// decode to U+FFFD; padding is skipped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for &id in ids {
            match id {
                PAD => continue,
                UNK => cur.push('\u{FFFD}'),
                _ => {
                    let Some(u) = self.unit(id) else {
                        cur.push('\u{FFFD}');
                        continue;
                    };
                    for c in u.chars() {
                        if c == END_OF_WORD {
                            out.push(std::mem::take(&mut cur));
                        } else {
                            cur.push(c);
                        }
                    }
                }
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "\\subword-vocab v1")?;
        writeln!(w, "merges {}", self.merges.len())?;
        for (a, b) in &self.merges {
            writeln!(w, "{}\t{}", escape(a), escape(b))?;
        }
        writeln!(w, "units {}", self.units.len())?;
        for u in &self.units {
            writeln!(w, "{}", escape(u))?;
        }
        writeln!(w, "\\end")?;
        w.flush()
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let mut lr = LineReader { r: &mut r, line: 0 };
        lr.expect_exact("\\subword-vocab v1")?;
        let n_merges: usize = lr.keyed("merges")?;
        let mut merges = Vec::with_capacity(n_merges.min(1 << 20));
        for _ in 0..n_merges {
            let line = lr.next_line()?;
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| lr.err("merge line needs two tab-separated units"))?;
            merges.push((unescape(a), unescape(b)));
        }
        let n_units: usize = lr.keyed("units")?;
        let mut units = Vec::with_capacity(n_units.min(1 << 20));
        for _ in 0..n_units {
            units.push(unescape(&lr.next_line()?));
        }
        lr.expect_exact("\\end")?;
        if units.len() < 2 || units[PAD] != PAD_UNIT || units[UNK] != UNK_UNIT {
            return Err(lr.err("unit table must start with <pad> and <unk>"));
        }
        let index: HashMap<String, usize> = units.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        if index.len() != units.len() {
            return Err(lr.err("duplicate unit"));
        }
        for (a, b) in &merges {
            if !index.contains_key(&format!("{a}{b}")) {
                return Err(lr.err(&format!("merge {a:?}+{b:?} has no unit")));
            }
        }
        Ok(SubwordVocab { merges, units, index })
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

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}
