//! Labeled, POS-tagged paragraphs and balanced dataset assembly.
//!
//! Corpora are JSON lines, one paragraph per line:
//!
//! ```text
//! {"id":"p1","language":"de","source_language":"en","label":"translated","tokens":["Das","ist"],"pos_tags":["DET","AUX"]}
//! ```
//!
//! `source_language` is omitted for originals.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Universal POS tags, in the fixed order used by the bag-of-POS features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PosTag {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Space,
    Sym,
    Verb,
    X,
}

impl PosTag {
    pub const ALL: [PosTag; 18] = [
        PosTag::Adj,
        PosTag::Adp,
        PosTag::Adv,
        PosTag::Aux,
        PosTag::Cconj,
        PosTag::Det,
        PosTag::Intj,
        PosTag::Noun,
        PosTag::Num,
        PosTag::Part,
        PosTag::Pron,
        PosTag::Propn,
        PosTag::Punct,
        PosTag::Sconj,
        PosTag::Space,
        PosTag::Sym,
        PosTag::Verb,
        PosTag::X,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Upper-case Universal Dependencies spelling, e.g. `"PROPN"`.
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Adj => "ADJ",
            PosTag::Adp => "ADP",
            PosTag::Adv => "ADV",
            PosTag::Aux => "AUX",
            PosTag::Cconj => "CCONJ",
            PosTag::Det => "DET",
            PosTag::Intj => "INTJ",
            PosTag::Noun => "NOUN",
            PosTag::Num => "NUM",
            PosTag::Part => "PART",
            PosTag::Pron => "PRON",
            PosTag::Propn => "PROPN",
            PosTag::Punct => "PUNCT",
            PosTag::Sconj => "SCONJ",
            PosTag::Space => "SPACE",
            PosTag::Sym => "SYM",
            PosTag::Verb => "VERB",
            PosTag::X => "X",
        }
    }

    /// Content-word tags used for lexical density.
    pub fn is_content(self) -> bool {
        matches!(
            self,
            PosTag::Noun | PosTag::Propn | PosTag::Verb | PosTag::Adj | PosTag::Adv
        )
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = ();

    /// Case-insensitive; accepts `NOUN`, `Noun` and `noun`.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        PosTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Original,
    Translated,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Original => "original",
            Label::Translated => "translated",
        }
    }

    /// `+1` for translated, `-1` for original.
    pub fn sign(self) -> f64 {
        match self {
            Label::Original => -1.0,
            Label::Translated => 1.0,
        }
    }

    /// Class index: original = 0, translated = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Original => 0,
            Label::Translated => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 1 {
            Label::Translated
        } else {
            Label::Original
        }
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "original" | "orig" => Ok(Label::Original),
            "translated" | "translation" | "translationese" => Ok(Label::Translated),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paragraph {
    pub id: String,
    pub language: String,
    pub source_language: Option<String>,
    pub label: Label,
    pub tokens: Vec<String>,
    pub pos_tags: Vec<PosTag>,
}

impl Paragraph {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the paragraph invariants; `line` is used for error reporting.
    pub fn validate(&self, line: usize) -> Result<()> {
        if self.tokens.len() != self.pos_tags.len() {
            return Err(Error::LengthMismatch {
                line,
                tokens: self.tokens.len(),
                tags: self.pos_tags.len(),
            });
        }
        if self.tokens.is_empty() {
            return Err(Error::Malformed {
                line,
                msg: "paragraph has no tokens".into(),
            });
        }
        if let Some(tok) = self
            .tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Malformed {
                line,
                msg: format!("token {tok:?} is empty or contains whitespace"),
            });
        }
        match (self.label, &self.source_language) {
            (Label::Translated, None) => Err(Error::Malformed {
                line,
                msg: "translated paragraph without source_language".into(),
            }),
            (Label::Original, Some(_)) => Err(Error::Malformed {
                line,
                msg: "original paragraph with source_language".into(),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_language: Option<String>,
    label: String,
    tokens: Vec<String>,
    pos_tags: Vec<String>,
}

fn parse_record(line: &str, line_no: usize) -> Result<Paragraph> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
        line: line_no,
        msg: e.to_string(),
    })?;
    let label = raw.label.parse().map_err(|_| Error::UnknownLabel {
        line: line_no,
        label: raw.label.clone(),
    })?;
    if raw.tokens.len() != raw.pos_tags.len() {
        return Err(Error::LengthMismatch {
            line: line_no,
            tokens: raw.tokens.len(),
            tags: raw.pos_tags.len(),
        });
    }
    let pos_tags = raw
        .pos_tags
        .iter()
        .map(|t| {
            t.parse().map_err(|_| Error::UnknownPosTag {
                line: line_no,
                tag: t.clone(),
            })
        })
        .collect::<Result<Vec<PosTag>>>()?;
    let p = Paragraph {
        id: raw.id,
        language: raw.language,
        source_language: raw.source_language,
        label,
        tokens: raw.tokens,
        pos_tags,
    };
    p.validate(line_no)?;
    Ok(p)
}

/// Serializes one paragraph as a single JSON line (without the newline).
pub fn to_json_line(p: &Paragraph) -> String {
    let raw = RawRecord {
        id: p.id.clone(),
        language: p.language.clone(),
        source_language: p.source_language.clone(),
        label: p.label.as_str().to_string(),
        tokens: p.tokens.clone(),
        pos_tags: p.pos_tags.iter().map(|t| t.as_str().to_string()).collect(),
    };
    serde_json::to_string(&raw).expect("record serialization cannot fail")
}

/// Parses a JSONL corpus from any reader. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Paragraph>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Malformed {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Paragraph>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(f))
}

pub fn write_corpus<W: Write>(mut w: W, paragraphs: &[Paragraph]) -> std::io::Result<()> {
    for p in paragraphs {
        writeln!(w, "{}", to_json_line(p))?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, paragraphs: &[Paragraph]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_corpus(&mut w, paragraphs).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    TrgSrc,
    TrgAll,
    AllAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub target_languages: BTreeSet<String>,
    pub source_languages: BTreeSet<String>,
    pub split_fractions: (f64, f64, f64),
}

/// Train/dev/test fractions that turn a 42k-paragraph pool into 30k/6k/6k.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0);

/// One balancing cell: originals are keyed by target language only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub language: String,
    pub source_language: Option<String>,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source_language {
            Some(s) => write!(f, "({}, {})", self.language, s),
            None => write!(f, "({}, original)", self.language),
        }
    }
}

impl DatasetSpec {
    pub fn trg_src(target: &str, source: &str) -> Self {
        DatasetSpec {
            kind: DatasetKind::TrgSrc,
            target_languages: [target.to_string()].into(),
            source_languages: [source.to_string()].into(),
            split_fractions: DEFAULT_FRACTIONS,
        }
    }

    pub fn trg_all(target: &str, sources: &[&str]) -> Self {
        DatasetSpec {
            kind: DatasetKind::TrgAll,
            target_languages: [target.to_string()].into(),
            source_languages: sources.iter().map(|s| s.to_string()).collect(),
            split_fractions: DEFAULT_FRACTIONS,
        }
    }

    pub fn all_all(languages: &[&str]) -> Self {
        let set: BTreeSet<String> = languages.iter().map(|s| s.to_string()).collect();
        DatasetSpec {
            kind: DatasetKind::AllAll,
            target_languages: set.clone(),
            source_languages: set,
            split_fractions: DEFAULT_FRACTIONS,
        }
    }

    pub fn with_fractions(mut self, train: f64, dev: f64, test: f64) -> Self {
        self.split_fractions = (train, dev, test);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        if self.target_languages.is_empty() || self.source_languages.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset needs at least one target and one source language".into(),
            ));
        }
        if self.kind == DatasetKind::TrgSrc
            && (self.target_languages.len() != 1 || self.source_languages.len() != 1)
        {
            return Err(Error::InvalidArgument(
                "TRG-SRC needs exactly one target and one source language".into(),
            ));
        }
        if self.kind == DatasetKind::TrgAll && self.target_languages.len() != 1 {
            return Err(Error::InvalidArgument(
                "TRG-ALL needs exactly one target language".into(),
            ));
        }
        if self.translated_cells().is_empty() {
            return Err(Error::InvalidArgument(
                "dataset has no (target, source) pair with distinct languages".into(),
            ));
        }
        Ok(())
    }

    pub fn original_cells(&self) -> Vec<Cell> {
        self.target_languages
            .iter()
            .map(|t| Cell {
                language: t.clone(),
                source_language: None,
            })
            .collect()
    }

    pub fn translated_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for t in &self.target_languages {
            for s in &self.source_languages {
                if s != t {
                    cells.push(Cell {
                        language: t.clone(),
                        source_language: Some(s.clone()),
                    });
                }
            }
        }
        cells
    }

    /// Dash notation, e.g. `DE-EN`, `DE-ALL`, `ALL-ALL[3]`.
    pub fn name(&self) -> String {
        let up = |s: &String| s.to_uppercase();
        match self.kind {
            DatasetKind::TrgSrc => format!(
                "{}-{}",
                self.target_languages.iter().map(up).collect::<String>(),
                self.source_languages.iter().map(up).collect::<String>()
            ),
            DatasetKind::TrgAll => format!(
                "{}-ALL",
                self.target_languages.iter().map(up).collect::<String>()
            ),
            DatasetKind::AllAll => format!("ALL-ALL[{}]", self.target_languages.len()),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    /// Parses `trg-src:de:en`, `trg-all:de:en,es` or `all-all:de,en,es`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let list = |p: &str| -> Vec<String> {
            p.split(',')
                .map(|x| x.trim().to_lowercase())
                .filter(|x| !x.is_empty())
                .collect()
        };
        let bad = || Error::InvalidArgument(format!("cannot parse dataset spec {s:?}"));
        let spec = match parts.as_slice() {
            [k, t, src] if k.eq_ignore_ascii_case("trg-src") => DatasetSpec {
                kind: DatasetKind::TrgSrc,
                target_languages: list(t).into_iter().collect(),
                source_languages: list(src).into_iter().collect(),
                split_fractions: DEFAULT_FRACTIONS,
            },
            [k, t, src] if k.eq_ignore_ascii_case("trg-all") => DatasetSpec {
                kind: DatasetKind::TrgAll,
                target_languages: list(t).into_iter().collect(),
                source_languages: list(src).into_iter().collect(),
                split_fractions: DEFAULT_FRACTIONS,
            },
            [k, langs] if k.eq_ignore_ascii_case("all-all") => {
                let set: BTreeSet<String> = list(langs).into_iter().collect();
                DatasetSpec {
                    kind: DatasetKind::AllAll,
                    target_languages: set.clone(),
                    source_languages: set,
                    split_fractions: DEFAULT_FRACTIONS,
                }
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(",");
        match self.kind {
            DatasetKind::TrgSrc => write!(
                f,
                "trg-src:{}:{}",
                join(&self.target_languages),
                join(&self.source_languages)
            ),
            DatasetKind::TrgAll => write!(
                f,
                "trg-all:{}:{}",
                join(&self.target_languages),
                join(&self.source_languages)
            ),
            DatasetKind::AllAll => write!(f, "all-all:{}", join(&self.target_languages)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub train: Vec<Paragraph>,
    pub dev: Vec<Paragraph>,
    pub test: Vec<Paragraph>,
    pub spec: DatasetSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[Paragraph] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn name(&self) -> String {
        self.spec.name()
    }

    /// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `bundle.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_corpus(dir.join("train.jsonl"), &self.train)?;
        save_corpus(dir.join("dev.jsonl"), &self.dev)?;
        save_corpus(dir.join("test.jsonl"), &self.test)?;
        let (a, b, c) = self.spec.split_fractions;
        let meta = format!(
            "dataset {}\nfractions {a} {b} {c}\nseed {}\n",
            self.spec, self.seed
        );
        let p = dir.join("bundle.txt");
        std::fs::write(&p, meta).map_err(|e| Error::io(p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("bundle.txt");
        let meta = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut spec: Option<DatasetSpec> = None;
        let mut fractions = DEFAULT_FRACTIONS;
        let mut seed = 0;
        for line in meta.lines() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("dataset") => {
                    spec = Some(it.next().unwrap_or_default().parse()?);
                }
                Some("fractions") => {
                    let v: Vec<f64> = it.filter_map(|x| x.parse().ok()).collect();
                    if v.len() != 3 {
                        return Err(Error::Format(format!("bad fractions line {line:?}")));
                    }
                    fractions = (v[0], v[1], v[2]);
                }
                Some("seed") => {
                    seed = it
                        .next()
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(|| Error::Format(format!("bad seed line {line:?}")))?;
                }
                _ => {}
            }
        }
        let mut spec = spec.ok_or_else(|| Error::Format("bundle.txt lacks dataset".into()))?;
        spec.split_fractions = fractions;
        Ok(DatasetBundle {
            train: load_corpus(dir.join("train.jsonl"))?,
            dev: load_corpus(dir.join("dev.jsonl"))?,
            test: load_corpus(dir.join("test.jsonl"))?,
            spec,
            seed,
        })
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Builds a class-balanced bundle.
///
/// Each cell is down-sampled uniformly at random to a common size; the
/// translated half is split evenly across (target, source) cells and the
/// original half evenly across target languages. Every cell is cut into
/// train/dev/test by the dataset's fractions, so each split stays balanced.
pub fn assemble_dataset(
    paragraphs: &[Paragraph],
    spec: &DatasetSpec,
    seed: u64,
) -> Result<DatasetBundle> {
    spec.validate()?;
    let orig_cells = spec.original_cells();
    let trans_cells = spec.translated_cells();

    let mut pools: BTreeMap<Cell, Vec<&Paragraph>> = BTreeMap::new();
    for c in orig_cells.iter().chain(&trans_cells) {
        pools.insert(c.clone(), Vec::new());
    }
    let mut seen_ids = HashSet::new();
    for p in paragraphs {
        let cell = Cell {
            language: p.language.clone(),
            source_language: p.source_language.clone(),
        };
        if let Some(pool) = pools.get_mut(&cell) {
            if !seen_ids.insert(p.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate paragraph id {:?}",
                    p.id
                )));
            }
            pool.push(p);
        }
    }
    if let Some((cell, _)) = pools.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::InsufficientData {
            cell: cell.to_string(),
        });
    }

    let n_o = orig_cells.len();
    let n_t = trans_cells.len();
    let unit = lcm(n_o, n_t);
    let min_o = orig_cells.iter().map(|c| pools[c].len()).min().unwrap_or(0);
    let min_t = trans_cells.iter().map(|c| pools[c].len()).min().unwrap_or(0);
    let half = (min_o * n_o).min(min_t * n_t) / unit * unit;
    if half == 0 {
        let worst = pools
            .iter()
            .min_by_key(|(_, v)| v.len())
            .map(|(c, _)| c.to_string())
            .unwrap_or_default();
        return Err(Error::InsufficientData { cell: worst });
    }

    let (f_train, f_dev, _) = spec.split_fractions;
    let cut = |f: f64| ((half as f64) * f + 1e-9).floor() as usize / unit * unit;
    let h_train = cut(f_train);
    let h_dev = cut(f_dev);
    if h_train == 0 || h_dev == 0 || h_train + h_dev >= half {
        let worst = pools
            .iter()
            .min_by_key(|(_, v)| v.len())
            .map(|(c, _)| c.to_string())
            .unwrap_or_default();
        return Err(Error::InsufficientData { cell: worst });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for (cell, pool) in pools.iter() {
        let n_cells = if cell.source_language.is_some() { n_t } else { n_o };
        let take = half / n_cells;
        let (tr, dv) = (h_train / n_cells, h_dev / n_cells);
        let mut pool = pool.clone();
        pool.shuffle(&mut rng);
        pool.truncate(take);
        train.extend(pool[..tr].iter().map(|p| (*p).clone()));
        dev.extend(pool[tr..tr + dv].iter().map(|p| (*p).clone()));
        test.extend(pool[tr + dv..].iter().map(|p| (*p).clone()));
    }
    train.shuffle(&mut rng);
    dev.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(DatasetBundle {
        train,
        dev,
        test,
        spec: spec.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(id: &str, lang: &str, src: Option<&str>) -> Paragraph {
        Paragraph {
            id: id.into(),
            language: lang.into(),
            source_language: src.map(Into::into),
            label: if src.is_some() {
                Label::Translated
            } else {
                Label::Original
            },
            tokens: vec!["a".into(), "b".into()],
            pos_tags: vec![PosTag::Det, PosTag::Noun],
        }
    }

    #[test]
    fn parses_single_record() {
        let line = r#"{"id":"x","language":"en","label":"original","tokens":["Hello","."],"pos_tags":["Intj","Punct"]}"#;
        let ps = read_corpus(line.as_bytes()).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].len(), 2);
        assert_eq!(ps[0].pos_tags, vec![PosTag::Intj, PosTag::Punct]);
    }

    #[test]
    fn reports_length_mismatch_line() {
        let text = concat!(
            r#"{"id":"a","language":"en","label":"original","tokens":["x"],"pos_tags":["X"]}"#,
            "\n",
            r#"{"id":"b","language":"en","label":"original","tokens":["x","y","z"],"pos_tags":["X","X"]}"#
        );
        let err = read_corpus(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { line: 2, .. }));
        assert!(err.to_string().contains("length mismatch at line 2"));
    }

    #[test]
    fn rejects_unknown_tag_and_label() {
        let bad_tag = r#"{"id":"a","language":"en","label":"original","tokens":["x"],"pos_tags":["FOO"]}"#;
        assert!(matches!(
            read_corpus(bad_tag.as_bytes()).unwrap_err(),
            Error::UnknownPosTag { line: 1, .. }
        ));
        let bad_label = r#"{"id":"a","language":"en","label":"maybe","tokens":["x"],"pos_tags":["X"]}"#;
        assert!(matches!(
            read_corpus(bad_label.as_bytes()).unwrap_err(),
            Error::UnknownLabel { line: 1, .. }
        ));
        let no_src = r#"{"id":"a","language":"en","label":"translated","tokens":["x"],"pos_tags":["X"]}"#;
        assert!(matches!(
            read_corpus(no_src.as_bytes()).unwrap_err(),
            Error::Malformed { line: 1, .. }
        ));
    }

    #[test]
    fn trg_src_split_counts() {
        let mut pool = Vec::new();
        for i in 0..100 {
            pool.push(para(&format!("o{i}"), "de", None));
            pool.push(para(&format!("t{i}"), "de", Some("en")));
        }
        let spec = DatasetSpec::trg_src("de", "en").with_fractions(0.72, 0.14, 0.14);
        let b = assemble_dataset(&pool, &spec, 3).unwrap();
        assert_eq!((b.train.len(), b.dev.len(), b.test.len()), (144, 28, 28));
        for split in [&b.train, &b.dev, &b.test] {
            let orig = split.iter().filter(|p| p.label == Label::Original).count();
            assert_eq!(orig * 2, split.len());
        }
    }

    #[test]
    fn all_all_balances_six_cells() {
        let langs = ["de", "en", "es"];
        let mut pool = Vec::new();
        let mut k = 0;
        for t in langs {
            for _ in 0..40 {
                pool.push(para(&format!("p{k}"), t, None));
                k += 1;
            }
            for s in langs.iter().filter(|s| **s != t) {
                for _ in 0..25 {
                    pool.push(para(&format!("p{k}"), t, Some(s)));
                    k += 1;
                }
            }
        }
        let spec = DatasetSpec::all_all(&langs).with_fractions(0.6, 0.2, 0.2);
        let b = assemble_dataset(&pool, &spec, 1).unwrap();
        let all: Vec<&Paragraph> = b.train.iter().chain(&b.dev).chain(&b.test).collect();
        let mut per_cell: BTreeMap<(String, Option<String>), usize> = BTreeMap::new();
        for p in &all {
            *per_cell
                .entry((p.language.clone(), p.source_language.clone()))
                .or_default() += 1;
        }
        let trans: Vec<usize> = per_cell
            .iter()
            .filter(|(k, _)| k.1.is_some())
            .map(|(_, v)| *v)
            .collect();
        assert_eq!(trans.len(), 6);
        assert!(trans.iter().all(|&c| c == trans[0]));
        let orig: Vec<usize> = per_cell
            .iter()
            .filter(|(k, _)| k.1.is_none())
            .map(|(_, v)| *v)
            .collect();
        assert!(orig.iter().all(|&c| c == orig[0]));
        assert_eq!(orig.iter().sum::<usize>(), trans.iter().sum::<usize>());
    }

    #[test]
    fn empty_cell_is_named() {
        let langs = ["de", "en", "es"];
        let mut pool = Vec::new();
        let mut k = 0;
        for t in langs {
            pool.push(para(&format!("p{k}"), t, None));
            k += 1;
            for s in langs.iter().filter(|s| **s != t) {
                if t == "es" && *s == "de" {
                    continue;
                }
                pool.push(para(&format!("p{k}"), t, Some(s)));
                k += 1;
            }
        }
        let err = assemble_dataset(&pool, &DatasetSpec::all_all(&langs), 0).unwrap_err();
        match err {
            Error::InsufficientData { cell } => assert_eq!(cell, "(es, de)"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn spec_string_round_trip() {
        for s in ["trg-src:de:en", "trg-all:de:en,es", "all-all:de,en,es"] {
            let spec: DatasetSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!("trg-src:de:en".parse::<DatasetSpec>().unwrap().name(), "DE-EN");
        assert!("trg-src:de".parse::<DatasetSpec>().is_err());
    }
}
