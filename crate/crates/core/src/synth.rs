//! Synthetic translationese corpora.
//!
//! Pseudo-languages with their own syllable inventories. Translated
//! paragraphs over-use function words (and prefer a different half of each
//! function-word list), draw content words from a steeper Zipf curve, and so
//! differ from originals in POS profile, lexical variety and word choice.
//! The marker task instead keeps both classes identically distributed and
//! injects one class-correlated token into translated paragraphs.

use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::corpus::{Label, Paragraph, PosTag};

/// Seed used for the bundled mini corpus and vectors.
pub const MINI_SEED: u64 = 20_211_107;
pub const MINI_LANGUAGES: [&str; 3] = ["de", "en", "es"];
pub const MINI_VEC_DIM: usize = 32;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub languages: Vec<String>,
    pub n_original: usize,
    pub n_translated: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// 2,000 paragraphs over de/en/es: 1,000 originals, 1,000 translations
    /// spread over the six (target, source) pairs.
    pub fn mini() -> Self {
        SynthConfig {
            languages: MINI_LANGUAGES.iter().map(|s| s.to_string()).collect(),
            n_original: 1000,
            n_translated: 1000,
            min_len: 20,
            max_len: 50,
            seed: MINI_SEED,
        }
    }
}

fn syllables(language: &str) -> &'static [&'static str] {
    match language {
        "de" => &[
            "ge", "ber", "schaf", "ein", "ung", "ter", "keit", "lich", "ver", "zu", "wer", "den",
            "sta", "rei", "mar", "hof", "wal", "ach", "eu", "ie", "ü", "ös",
        ],
        "en" => &[
            "th", "ing", "com", "ly", "pro", "ow", "ness", "sh", "ea", "wh", "ight", "ble", "ck",
            "ou", "st", "mon", "per", "ad", "ful", "by", "ire",
        ],
        "es" => &[
            "ci", "ón", "dad", "que", "la", "mi", "ño", "ll", "era", "ción", "mos", "ue", "al",
            "cas", "rra", "pe", "do", "ía", "té", "go", "bre",
        ],
        _ => &[
            "ka", "lo", "mi", "nu", "ra", "se", "ti", "vo", "za", "be", "du", "fe", "gi", "ho",
            "ju", "ke",
        ],
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Word lists per POS tag for one pseudo-language.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub language: String,
    words: Vec<Vec<String>>,
}

/// Lexicon size per tag, in `PosTag::ALL` order.
const LEXICON_SIZES: [usize; 18] = [
    60,  // Adj
    12,  // Adp
    30,  // Adv
    8,   // Aux
    6,   // Cconj
    10,  // Det
    4,   // Intj
    150, // Noun
    0,   // Num (generated digits)
    6,   // Part
    12,  // Pron
    20,  // Propn
    0,   // Punct (fixed)
    6,   // Sconj
    0,   // Space (fixed)
    0,   // Sym (fixed)
    80,  // Verb
    4,   // X
];

const PUNCT: [&str; 6] = [".", ",", ";", ":", "!", "?"];
const SYM: [&str; 4] = ["%", "€", "$", "+"];
const SPACE: [&str; 1] = ["¶"];

impl Lexicon {
    pub fn new(language: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(language));
        let syl = syllables(language);
        let mut used: HashSet<String> = HashSet::new();
        let mut words = Vec::with_capacity(18);
        for (t, &tag) in PosTag::ALL.iter().enumerate() {
            let size = LEXICON_SIZES[t];
            let list: Vec<String> = match tag {
                PosTag::Punct => PUNCT.iter().map(|s| s.to_string()).collect(),
                PosTag::Sym => SYM.iter().map(|s| s.to_string()).collect(),
                PosTag::Space => SPACE.iter().map(|s| s.to_string()).collect(),
                PosTag::Num => (0..30).map(|i| format!("{}", 3 + i * 7 % 97 + i * 31)).collect(),
                _ => {
                    let function = !tag.is_content();
                    let mut list = Vec::with_capacity(size);
                    let mut rank = 0;
                    let mut misses = 0;
                    while list.len() < size {
                        // frequent words are shorter; collisions lengthen them
                        let n_syl = misses / 8
                            + if function {
                                1 + rank % 2
                            } else {
                                1 + (4 * rank) / size + rng.gen_range(0..2)
                            };
                        let mut w: String = (0..n_syl).map(|_| *syl.choose(&mut rng).unwrap()).collect();
                        if tag == PosTag::Propn {
                            let mut c = w.chars();
                            w = match c.next() {
                                Some(f) => f.to_uppercase().chain(c).collect(),
                                None => w,
                            };
                        }
                        if used.insert(w.clone()) {
                            list.push(w);
                            rank += 1;
                            misses = 0;
                        } else {
                            misses += 1;
                        }
                    }
                    list
                }
            };
            words.push(list);
        }
        Lexicon {
            language: language.to_string(),
            words,
        }
    }

    pub fn words(&self, tag: PosTag) -> &[String] {
        &self.words[tag.index()]
    }

    pub fn all_words(&self) -> impl Iterator<Item = (PosTag, &str)> {
        PosTag::ALL
            .iter()
            .flat_map(move |&t| self.words(t).iter().map(move |w| (t, w.as_str())))
    }
}

// Tag profiles in `PosTag::ALL` order (weights, normalized on use).
const ORIGINAL_PROFILE: [f64; 18] = [
    0.12, 0.05, 0.08, 0.02, 0.015, 0.05, 0.002, 0.30, 0.02, 0.005, 0.03, 0.05, 0.09, 0.005,
    0.001, 0.002, 0.16, 0.002,
];
const TRANSLATED_PROFILE: [f64; 18] = [
    0.05, 0.14, 0.04, 0.06, 0.03, 0.15, 0.002, 0.17, 0.02, 0.01, 0.10, 0.03, 0.09, 0.02, 0.001,
    0.002, 0.10, 0.002,
];

struct ClassStyle {
    tags: WeightedIndex<f64>,
    /// probability of picking from the first half of a function-word list
    first_half: f64,
    zipf: f64,
}

impl ClassStyle {
    fn new(label: Label) -> Self {
        match label {
            Label::Original => ClassStyle {
                tags: WeightedIndex::new(ORIGINAL_PROFILE).unwrap(),
                first_half: 0.2,
                zipf: 0.8,
            },
            Label::Translated => ClassStyle {
                tags: WeightedIndex::new(TRANSLATED_PROFILE).unwrap(),
                first_half: 0.8,
                zipf: 1.2,
            },
        }
    }
}

fn zipf_pick<R: Rng>(rng: &mut R, n: usize, s: f64) -> usize {
    let weights: Vec<f64> = (0..n).map(|r| 1.0 / (r as f64 + 1.0).powf(s)).collect();
    WeightedIndex::new(weights).unwrap().sample(rng)
}

fn sample_paragraph<R: Rng>(
    rng: &mut R,
    lex: &Lexicon,
    style: &ClassStyle,
    min_len: usize,
    max_len: usize,
) -> (Vec<String>, Vec<PosTag>) {
    let len = rng.gen_range(min_len..=max_len);
    let mut tokens = Vec::with_capacity(len);
    let mut tags = Vec::with_capacity(len);
    for _ in 0..len {
        let tag = PosTag::ALL[style.tags.sample(rng)];
        let list = lex.words(tag);
        let w = if tag.is_content() {
            list[zipf_pick(rng, list.len(), style.zipf)].clone()
        } else if matches!(tag, PosTag::Punct | PosTag::Num | PosTag::Sym | PosTag::Space) {
            list[rng.gen_range(0..list.len())].clone()
        } else {
            let half = list.len().div_ceil(2);
            let (lo, hi) = if rng.gen_bool(style.first_half) {
                (0, half)
            } else {
                (half, list.len())
            };
            list[rng.gen_range(lo..hi.max(lo + 1))].clone()
        };
        tokens.push(w);
        tags.push(tag);
    }
    (tokens, tags)
}

/// Even split of `n` over `k` slots, earlier slots taking the remainder.
fn even_counts(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

pub fn generate_corpus(cfg: &SynthConfig) -> Vec<Paragraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lexicons: Vec<Lexicon> = cfg.languages.iter().map(|l| Lexicon::new(l)).collect();
    let orig = ClassStyle::new(Label::Original);
    let trans = ClassStyle::new(Label::Translated);
    let mut out = Vec::with_capacity(cfg.n_original + cfg.n_translated);

    for (lex, n) in lexicons.iter().zip(even_counts(cfg.n_original, lexicons.len())) {
        for i in 0..n {
            let (tokens, pos_tags) = sample_paragraph(&mut rng, lex, &orig, cfg.min_len, cfg.max_len);
            out.push(Paragraph {
                id: format!("{}-orig-{:04}", lex.language, i),
                language: lex.language.clone(),
                source_language: None,
                label: Label::Original,
                tokens,
                pos_tags,
            });
        }
    }
    let pairs: Vec<(usize, usize)> = (0..lexicons.len())
        .flat_map(|t| (0..lexicons.len()).filter(move |&s| s != t).map(move |s| (t, s)))
        .collect();
    for (&(t, s), n) in pairs.iter().zip(even_counts(cfg.n_translated, pairs.len())) {
        let lex = &lexicons[t];
        for i in 0..n {
            let (tokens, pos_tags) = sample_paragraph(&mut rng, lex, &trans, cfg.min_len, cfg.max_len);
            out.push(Paragraph {
                id: format!("{}-{}-{:04}", lex.language, cfg.languages[s], i),
                language: lex.language.clone(),
                source_language: Some(cfg.languages[s].clone()),
                label: Label::Translated,
                tokens,
                pos_tags,
            });
        }
    }
    out
}

/// Word vectors for the synthetic lexicons. Each vector is a category axis
/// (first/second half of a function-word list, content word, punctuation or
/// other) plus a language axis plus Gaussian noise. Every `oov_every`-th
/// content word is left out so that lookups exercise the OOV path.
pub fn synthetic_vectors(
    languages: &[&str],
    dim: usize,
    seed: u64,
    oov_every: usize,
) -> Vec<(String, Vec<f64>)> {
    assert!(dim >= 5 + languages.len(), "dimension too small for the category axes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (li, lang) in languages.iter().enumerate() {
        let lex = Lexicon::new(lang);
        for &tag in &PosTag::ALL {
            let list = lex.words(tag);
            let half = list.len().div_ceil(2);
            for (i, w) in list.iter().enumerate() {
                if tag.is_content() && oov_every > 0 && i % oov_every == oov_every - 1 {
                    continue;
                }
                if !seen.insert(w.clone()) {
                    continue;
                }
                let axis = if tag.is_content() {
                    2
                } else if matches!(tag, PosTag::Punct | PosTag::Num | PosTag::Sym | PosTag::Space) {
                    3
                } else if i < half {
                    0
                } else {
                    1
                };
                let mut v: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
                v[axis] += 1.0;
                v[5 + li] += 0.5;
                out.push((w.clone(), v));
            }
        }
    }
    out
}

/// Marker task: both classes share the original-style distribution; each
/// translated paragraph gets `marker` (tagged as a noun) at a random position.
pub fn marker_corpus(
    language: &str,
    source: &str,
    marker: &str,
    n_per_class: usize,
    seed: u64,
) -> Vec<Paragraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(marker));
    let lex = Lexicon::new(language);
    let style = ClassStyle::new(Label::Original);
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in [Label::Original, Label::Translated] {
        for i in 0..n_per_class {
            let (mut tokens, mut pos_tags) = sample_paragraph(&mut rng, &lex, &style, 8, 24);
            let tag = match label {
                Label::Original => "orig",
                Label::Translated => {
                    let at = rng.gen_range(0..=tokens.len());
                    tokens.insert(at, marker.to_string());
                    pos_tags.insert(at, PosTag::Noun);
                    source
                }
            };
            out.push(Paragraph {
                id: format!("{marker}-{language}-{tag}-{i:04}"),
                language: language.to_string(),
                source_language: (label == Label::Translated).then(|| source.to_string()),
                label,
                tokens,
                pos_tags,
            });
        }
    }
    out
}

/// Every tenth content word is missing from the bundled vectors.
pub const MINI_OOV_EVERY: usize = 10;

/// Writes `mini.jsonl` and `mini.vec` into `dir`.
pub fn write_mini_data(dir: &std::path::Path) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    crate::corpus::save_corpus(dir.join("mini.jsonl"), &generate_corpus(&SynthConfig::mini()))?;
    let pairs = synthetic_vectors(&MINI_LANGUAGES, MINI_VEC_DIM, MINI_SEED, MINI_OOV_EVERY);
    let table = crate::embeddings::EmbeddingTable::from_pairs(MINI_VEC_DIM, pairs, MINI_SEED)?;
    let path = dir.join("mini.vec");
    let mut buf = Vec::new();
    table.write_vec(&mut buf).map_err(|e| crate::Error::io(&path, e))?;
    std::fs::write(&path, buf).map_err(|e| crate::Error::io(&path, e))
}

/// Path of a file in the crate's bundled data directory.
pub fn bundled_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape() {
        let c = generate_corpus(&SynthConfig::mini());
        assert_eq!(c.len(), 2000);
        let orig = c.iter().filter(|p| p.label == Label::Original).count();
        assert_eq!(orig, 1000);
        for (i, p) in c.iter().enumerate() {
            p.validate(i + 1).unwrap();
            assert!((20..=50).contains(&p.len()));
        }
        let ids: HashSet<&str> = c.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 2000);
    }

    #[test]
    fn deterministic() {
        let mut cfg = SynthConfig::mini();
        cfg.n_original = 30;
        cfg.n_translated = 30;
        assert_eq!(generate_corpus(&cfg), generate_corpus(&cfg));
    }

    #[test]
    fn translated_use_more_function_words() {
        let c = generate_corpus(&SynthConfig::mini());
        let share = |label: Label| {
            let (f, n) = c
                .iter()
                .filter(|p| p.label == label)
                .flat_map(|p| p.pos_tags.iter())
                .fold((0usize, 0usize), |(f, n), t| {
                    (f + usize::from(matches!(t, PosTag::Det | PosTag::Adp | PosTag::Pron)), n + 1)
                });
            f as f64 / n as f64
        };
        assert!(share(Label::Translated) > share(Label::Original) + 0.15);
    }

    #[test]
    fn marker_only_in_translated() {
        let c = marker_corpus("en", "de", "qqmark", 20, 3);
        for p in &c {
            let has = p.tokens.iter().any(|t| t == "qqmark");
            assert_eq!(has, p.label == Label::Translated);
        }
    }
}
