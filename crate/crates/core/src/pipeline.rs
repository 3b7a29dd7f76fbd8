//! One trained classifier together with everything it needs to score new
//! paragraphs: feature context, vocabularies, training representations.
//! Saved pipelines are always reloaded as they are, never refitted.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::corpus::{DatasetBundle, Label, Paragraph};
use crate::embeddings::{doc_mean, gaussian_doc, gaussian_gram, gaussian_kernel, EmbeddingTable, GaussianDoc};
use crate::error::{Error, Result};
use crate::features::{fit_crossfit, FeatureConfig, FeatureContext, TrigramBaselineSpec, TrigramKind, TRIGRAM_VOCAB};
use crate::neural::{
    self, load_checkpoint_into, to_checkpoint, FastTextModel, FastTextVocab, LstmModel, Network,
    SimplifiedTransformer, TrainConfig, TrainLog, FASTTEXT_BUCKETS, FASTTEXT_DIM,
};
use crate::par;
use crate::subword::{train_subword, SubwordVocab, DEFAULT_VOCAB_SIZE};
use crate::svm::{train_kernel_svm, train_linear_svm, KernelSvmModel, LinearSvmModel, DEFAULT_C_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Handcrafted,
    MeanEmbedding,
    GaussianKernel,
    PosTrigram,
    CharTrigram,
    FastText,
    FastTextPretrained,
    Lstm,
    Transformer,
    /// Always predicts Original.
    Constant,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Handcrafted,
        ModelKind::MeanEmbedding,
        ModelKind::GaussianKernel,
        ModelKind::PosTrigram,
        ModelKind::CharTrigram,
        ModelKind::FastText,
        ModelKind::FastTextPretrained,
        ModelKind::Lstm,
        ModelKind::Transformer,
        ModelKind::Constant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Handcrafted => "handcrafted",
            ModelKind::MeanEmbedding => "mean-embedding",
            ModelKind::GaussianKernel => "gaussian-kernel",
            ModelKind::PosTrigram => "pos-trigram",
            ModelKind::CharTrigram => "char-trigram",
            ModelKind::FastText => "fasttext",
            ModelKind::FastTextPretrained => "fasttext-pretrained",
            ModelKind::Lstm => "lstm",
            ModelKind::Transformer => "transformer",
            ModelKind::Constant => "constant",
        }
    }

    pub fn needs_vectors(self) -> bool {
        matches!(
            self,
            ModelKind::MeanEmbedding | ModelKind::GaussianKernel | ModelKind::FastTextPretrained
        )
    }

    pub fn is_neural(self) -> bool {
        matches!(
            self,
            ModelKind::FastText | ModelKind::FastTextPretrained | ModelKind::Lstm | ModelKind::Transformer
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s:?}")))
    }
}

/// Hyperparameters shared by all model kinds; each kind reads its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub c_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub features: FeatureConfig,
    /// Folds for out-of-fold handcrafted training features; below 2 the
    /// training paragraphs are scored in-sample.
    pub crossfit_folds: usize,
    pub subword_size: usize,
    pub fasttext_dim: usize,
    pub fasttext_buckets: usize,
    /// Hidden size of the LSTM and the simplified transformer.
    pub neural_dim: usize,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub dropout: Option<f64>,
    /// Permute train and dev labels before fitting (null-task control).
    pub shuffle_labels: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            c_grid: DEFAULT_C_GRID.to_vec(),
            alpha_grid: vec![crate::embeddings::DEFAULT_ALPHA],
            features: FeatureConfig::default(),
            crossfit_folds: 5,
            subword_size: DEFAULT_VOCAB_SIZE,
            fasttext_dim: FASTTEXT_DIM,
            fasttext_buckets: FASTTEXT_BUCKETS,
            neural_dim: crate::neural::LSTM_DIM,
            epochs: None,
            patience: None,
            batch_size: None,
            lr: None,
            dropout: None,
            shuffle_labels: false,
        }
    }
}

impl Hyper {
    pub fn train_config(&self, kind: ModelKind, seed: u64) -> TrainConfig {
        let base = match kind {
            ModelKind::FastText | ModelKind::FastTextPretrained => TrainConfig::fasttext(),
            _ => TrainConfig::default(),
        };
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            patience: self.patience.unwrap_or(base.patience),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            dropout: self.dropout.unwrap_or(base.dropout),
            seed,
            ..base
        }
    }
}

/// External inputs a pipeline may depend on.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub vectors: Option<Arc<EmbeddingTable>>,
}

impl Resources {
    fn vectors(&self, kind: ModelKind) -> Result<&Arc<EmbeddingTable>> {
        self.vectors
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{kind} needs word vectors")))
    }
}

pub enum Classifier {
    Linear(LinearSvmModel),
    Kernel {
        svm: KernelSvmModel,
        alpha: f64,
        train_docs: Vec<GaussianDoc>,
    },
    FastText(FastTextVocab, FastTextModel),
    Lstm(SubwordVocab, LstmModel),
    Transformer(SubwordVocab, SimplifiedTransformer),
    Constant(Label),
}

/// How a paragraph becomes a linear-SVM input.
pub enum Featurizer {
    Handcrafted(Box<FeatureContext>),
    Trigram(TrigramBaselineSpec),
    MeanEmbedding,
    None,
}

pub struct TrainedModel {
    pub kind: ModelKind,
    pub featurizer: Featurizer,
    pub classifier: Classifier,
    /// Digest of the word vectors the pipeline was built with.
    pub vectors_digest: Option<String>,
    pub info: BTreeMap<String, String>,
    vectors: Option<Arc<EmbeddingTable>>,
}

fn labels_pm1(ps: &[Paragraph]) -> Vec<f64> {
    ps.iter().map(|p| p.label.sign()).collect()
}

fn labels_idx(ps: &[Paragraph]) -> Vec<usize> {
    ps.iter().map(|p| p.label.index()).collect()
}

fn shuffled_labels(ps: &[Paragraph], rng: &mut ChaCha8Rng) -> Vec<Paragraph> {
    let mut labels: Vec<Label> = ps.iter().map(|p| p.label).collect();
    labels.shuffle(rng);
    ps.iter()
        .zip(labels)
        .map(|(p, l)| Paragraph { label: l, ..p.clone() })
        .collect()
}

fn hits(pred: &[Label], gold: &[Paragraph]) -> f64 {
    let n = pred.iter().zip(gold).filter(|(p, g)| **p == g.label).count();
    n as f64 / gold.len().max(1) as f64
}

/// Linear SVM per C in the grid; best dev accuracy wins, ties to smaller C.
fn fit_linear(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    dev_x: &[Vec<f64>],
    dev: &[Paragraph],
    grid: &[f64],
) -> Result<(LinearSvmModel, f64)> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(LinearSvmModel, f64)> = None;
    for &c in &grid {
        let m = train_linear_svm(train_x, train_y, c)?;
        let pred: Vec<Label> = dev_x.iter().map(|x| m.predict(x)).collect();
        let acc = hits(&pred, dev);
        if best.as_ref().is_none_or(|(_, b)| acc > *b) {
            best = Some((m, acc));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty C grid".into()))
}

pub fn train_model(
    kind: ModelKind,
    bundle: &DatasetBundle,
    seed: u64,
    hyper: &Hyper,
    resources: &Resources,
) -> Result<(TrainedModel, Option<TrainLog>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6265_6c73);
    let (train, dev) = if hyper.shuffle_labels {
        (shuffled_labels(&bundle.train, &mut rng), shuffled_labels(&bundle.dev, &mut rng))
    } else {
        (bundle.train.clone(), bundle.dev.clone())
    };
    let mut info = BTreeMap::new();
    info.insert("train_size".to_string(), train.len().to_string());
    let vectors = if kind.needs_vectors() {
        Some(resources.vectors(kind)?.clone())
    } else {
        None
    };
    let mut log = None;
    let (featurizer, classifier) = match kind {
        ModelKind::Handcrafted | ModelKind::PosTrigram | ModelKind::CharTrigram | ModelKind::MeanEmbedding => {
            let mut train_x = None;
            let featurizer = match kind {
                ModelKind::Handcrafted => {
                    let (ctx, x) = fit_crossfit(&train, hyper.features.clone(), hyper.crossfit_folds)?;
                    train_x = Some(x);
                    Featurizer::Handcrafted(Box::new(ctx))
                }
                ModelKind::PosTrigram => Featurizer::Trigram(TrigramBaselineSpec::fit(&train, TrigramKind::Pos, TRIGRAM_VOCAB)),
                ModelKind::CharTrigram => {
                    Featurizer::Trigram(TrigramBaselineSpec::fit(&train, TrigramKind::Char, TRIGRAM_VOCAB))
                }
                _ => Featurizer::MeanEmbedding,
            };
            let fx = |ps: &[Paragraph]| featurize(&featurizer, vectors.as_deref(), ps);
            let (tx, dx) = (train_x.unwrap_or_else(|| fx(&train)), fx(&dev));
            let (m, dev_acc) = fit_linear(&tx, &labels_pm1(&train), &dx, &dev, &hyper.c_grid)?;
            info.insert("c".to_string(), m.c.to_string());
            info.insert("dev_accuracy".to_string(), dev_acc.to_string());
            (featurizer, Classifier::Linear(m))
        }
        ModelKind::GaussianKernel => {
            let table = vectors.as_deref().expect("checked above");
            let train_docs: Vec<GaussianDoc> = par::map(&train, |p| gaussian_doc(p, table));
            let dev_docs: Vec<GaussianDoc> = par::map(&dev, |p| gaussian_doc(p, table));
            let y = labels_pm1(&train);
            let mut alphas = hyper.alpha_grid.clone();
            alphas.sort_by(f64::total_cmp);
            let mut cs = hyper.c_grid.clone();
            cs.sort_by(f64::total_cmp);
            let mut best: Option<(KernelSvmModel, f64, f64)> = None;
            for &alpha in &alphas {
                let k = gaussian_gram(&train_docs, alpha);
                let kd = gaussian_kernel(&dev_docs, &train_docs, alpha);
                for &c in &cs {
                    let m = train_kernel_svm(&k, &y, c)?;
                    let pred: Vec<Label> = kd.iter().map(|r| m.predict(r)).collect();
                    let acc = hits(&pred, &dev);
                    if best.as_ref().is_none_or(|(_, _, b)| acc > *b) {
                        best = Some((m, alpha, acc));
                    }
                }
            }
            let (svm, alpha, acc) = best.ok_or_else(|| Error::InvalidArgument("empty C or alpha grid".into()))?;
            info.insert("c".to_string(), svm.c.to_string());
            info.insert("alpha".to_string(), alpha.to_string());
            info.insert("dev_accuracy".to_string(), acc.to_string());
            (Featurizer::None, Classifier::Kernel { svm, alpha, train_docs })
        }
        ModelKind::FastText | ModelKind::FastTextPretrained => {
            let toks: Vec<Vec<String>> = train.iter().map(|p| p.tokens.clone()).collect();
            let vocab = FastTextVocab::build(&toks, hyper.fasttext_buckets);
            let mut net = match &vectors {
                Some(t) => FastTextModel::with_pretrained(&vocab, t, seed),
                None => FastTextModel::new(vocab.rows(), hyper.fasttext_dim, seed),
            };
            let enc = |ps: &[Paragraph]| ps.iter().map(|p| vocab.encode(&p.tokens)).collect::<Result<Vec<_>>>();
            let l = fit_network(&mut net, &enc(&train)?, &train, &enc(&dev)?, &dev, hyper, kind, seed)?;
            info.insert("dev_accuracy".to_string(), l.best_dev_accuracy.to_string());
            info.insert("best_epoch".to_string(), l.best_epoch.to_string());
            log = Some(l);
            (Featurizer::None, Classifier::FastText(vocab, net))
        }
        ModelKind::Lstm | ModelKind::Transformer => {
            let toks: Vec<Vec<String>> = train.iter().map(|p| p.tokens.clone()).collect();
            let vocab = train_subword(&toks, hyper.subword_size)?;
            let enc = |ps: &[Paragraph]| ps.iter().map(|p| vocab.encode(&p.tokens)).collect::<Vec<_>>();
            let (tx, dx) = (enc(&train), enc(&dev));
            let classifier = if kind == ModelKind::Lstm {
                let mut net = if hyper.neural_dim == crate::neural::LSTM_DIM {
                    LstmModel::new(vocab.size(), seed)
                } else {
                    LstmModel::with_dim(vocab.size(), hyper.neural_dim, seed)
                };
                log = Some(fit_network(&mut net, &tx, &train, &dx, &dev, hyper, kind, seed)?);
                Classifier::Lstm(vocab, net)
            } else {
                let mut net = if hyper.neural_dim == crate::neural::TRANSFORMER_DIM {
                    SimplifiedTransformer::new(vocab.size(), seed)
                } else {
                    SimplifiedTransformer::with_dim(vocab.size(), hyper.neural_dim, seed)
                };
                log = Some(fit_network(&mut net, &tx, &train, &dx, &dev, hyper, kind, seed)?);
                Classifier::Transformer(vocab, net)
            };
            let l = log.as_ref().expect("just trained");
            info.insert("dev_accuracy".to_string(), l.best_dev_accuracy.to_string());
            info.insert("best_epoch".to_string(), l.best_epoch.to_string());
            (Featurizer::None, classifier)
        }
        ModelKind::Constant => (Featurizer::None, Classifier::Constant(Label::Original)),
    };
    Ok((
        TrainedModel {
            kind,
            featurizer,
            classifier,
            vectors_digest: vectors.as_ref().map(|t| t.digest()),
            info,
            vectors,
        },
        log,
    ))
}

#[allow(clippy::too_many_arguments)]
fn fit_network<N: Network>(
    net: &mut N,
    tx: &[Vec<usize>],
    train: &[Paragraph],
    dx: &[Vec<usize>],
    dev: &[Paragraph],
    hyper: &Hyper,
    kind: ModelKind,
    seed: u64,
) -> Result<TrainLog> {
    let cfg = hyper.train_config(kind, seed);
    neural::train_network(net, (tx, &labels_idx(train)), (dx, &labels_idx(dev)), &cfg)
}

fn featurize(f: &Featurizer, vectors: Option<&EmbeddingTable>, ps: &[Paragraph]) -> Vec<Vec<f64>> {
    match f {
        Featurizer::Handcrafted(ctx) => ctx.extract_all(ps),
        Featurizer::Trigram(spec) => par::map(ps, |p| spec.extract(p)),
        Featurizer::MeanEmbedding => {
            let t = vectors.expect("mean-embedding pipelines carry their vectors");
            par::map(ps, |p| doc_mean(p, t))
        }
        Featurizer::None => Vec::new(),
    }
}

fn neural_proba<N: Network>(net: &N, ids: &[Vec<usize>]) -> Result<Vec<f64>> {
    Ok(neural::predict_proba(net, ids)?.into_iter().map(|p| p[1]).collect())
}

impl TrainedModel {
    pub fn predict(&self, ps: &[Paragraph]) -> Result<Vec<Label>> {
        match &self.classifier {
            Classifier::Linear(m) => Ok(featurize(&self.featurizer, self.vectors.as_deref(), ps)
                .iter()
                .map(|x| m.predict(x))
                .collect()),
            Classifier::Kernel { svm, alpha, train_docs } => {
                let table = self.vectors.as_deref().expect("kernel pipelines carry their vectors");
                let docs: Vec<GaussianDoc> = par::map(ps, |p| gaussian_doc(p, table));
                let k = gaussian_kernel(&docs, train_docs, *alpha);
                Ok(k.iter().map(|r| svm.predict(r)).collect())
            }
            Classifier::Constant(l) => Ok(vec![*l; ps.len()]),
            _ => Ok(self
                .predict_proba(ps)?
                .expect("neural classifiers give probabilities")
                .into_iter()
                .map(|p| if p > 0.5 { Label::Translated } else { Label::Original })
                .collect()),
        }
    }

    /// Probability of the translated class, for the neural classifiers.
    pub fn predict_proba(&self, ps: &[Paragraph]) -> Result<Option<Vec<f64>>> {
        Ok(Some(match &self.classifier {
            Classifier::FastText(v, m) => {
                let ids = ps.iter().map(|p| v.encode(&p.tokens)).collect::<Result<Vec<_>>>()?;
                neural_proba(m, &ids)?
            }
            Classifier::Lstm(v, m) => neural_proba(m, &ps.iter().map(|p| v.encode(&p.tokens)).collect::<Vec<_>>())?,
            Classifier::Transformer(v, m) => {
                neural_proba(m, &ps.iter().map(|p| v.encode(&p.tokens)).collect::<Vec<_>>())?
            }
            _ => return Ok(None),
        }))
    }

    pub fn accuracy(&self, ps: &[Paragraph]) -> Result<f64> {
        if ps.is_empty() {
            return Err(Error::EmptyInput("evaluation set"));
        }
        Ok(hits(&self.predict(ps)?, ps))
    }

    pub fn linear_svm(&self) -> Option<&LinearSvmModel> {
        match &self.classifier {
            Classifier::Linear(m) => Some(m),
            _ => None,
        }
    }

    pub fn feature_context(&self) -> Option<&FeatureContext> {
        match &self.featurizer {
            Featurizer::Handcrafted(c) => Some(c),
            _ => None,
        }
    }

    /// Writes the pipeline into `dir`, plus `pipeline.txt` listing every
    /// file with its sha-256.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<PathBuf> = Vec::new();
        let mut put = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            files.push(PathBuf::from(name));
            Ok(())
        };
        let mut meta = format!("kind {}\n", self.kind);
        if let Some(d) = &self.vectors_digest {
            meta.push_str(&format!("vectors {d}\n"));
        }
        for (k, v) in &self.info {
            meta.push_str(&format!("info {k} {v}\n"));
        }
        put("model.txt", meta)?;
        match &self.classifier {
            Classifier::Linear(m) => put("svm.txt", m.to_text())?,
            Classifier::Kernel { svm, alpha, train_docs } => {
                put("svm.txt", svm.to_text())?;
                put("kernel_docs.txt", docs_to_text(*alpha, train_docs))?;
            }
            Classifier::FastText(v, m) => {
                let mut buf = Vec::new();
                v.write(&mut buf).map_err(|e| Error::io(dir.join("vocab.txt"), e))?;
                put("vocab.txt", String::from_utf8(buf).expect("vocab is UTF-8"))?;
                save_checkpoint(dir.join("weights.ckpt"), &to_checkpoint(m))?;
                files.push("weights.ckpt".into());
            }
            Classifier::Lstm(v, m) => {
                v.save(dir.join("subword.txt"))?;
                files.push("subword.txt".into());
                save_checkpoint(dir.join("weights.ckpt"), &to_checkpoint(m))?;
                files.push("weights.ckpt".into());
            }
            Classifier::Transformer(v, m) => {
                v.save(dir.join("subword.txt"))?;
                files.push("subword.txt".into());
                save_checkpoint(dir.join("weights.ckpt"), &to_checkpoint(m))?;
                files.push("weights.ckpt".into());
            }
            Classifier::Constant(l) => put("constant.txt", format!("{}\n", l.as_str()))?,
        }
        match &self.featurizer {
            Featurizer::Handcrafted(ctx) => {
                ctx.save(dir.join("features"))?;
                let mut names: Vec<PathBuf> = std::fs::read_dir(dir.join("features"))
                    .map_err(|e| Error::io(dir.join("features"), e))?
                    .filter_map(|e| e.ok())
                    .map(|e| Path::new("features").join(e.file_name()))
                    .collect();
                names.sort();
                files.extend(names);
            }
            Featurizer::Trigram(spec) => {
                spec.save(dir.join("trigrams.txt"))?;
                files.push("trigrams.txt".into());
            }
            Featurizer::MeanEmbedding | Featurizer::None => {}
        }
        let mut listing = String::from("\\pipeline v1\n");
        for f in &files {
            listing.push_str(&format!("{} {}\n", file_digest(dir.join(f))?, f.display()));
        }
        let p = dir.join("pipeline.txt");
        std::fs::write(&p, listing).map_err(|e| Error::io(&p, e))
    }

    /// Loads a saved pipeline. Every listed file must still hash to its
    /// recorded digest and any word vectors must be the ones it was built
    /// with; otherwise the result is a pipeline-mismatch error.
    pub fn load(dir: impl AsRef<Path>, resources: &Resources) -> Result<Self> {
        let dir = dir.as_ref();
        let listing_path = dir.join("pipeline.txt");
        let listing = std::fs::read_to_string(&listing_path).map_err(|e| Error::io(&listing_path, e))?;
        let mut lines = listing.lines();
        if lines.next() != Some("\\pipeline v1") {
            return Err(Error::Format(format!("{}: not a pipeline listing", listing_path.display())));
        }
        for line in lines {
            let (digest, name) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("bad pipeline line {line:?}")))?;
            let got = file_digest(dir.join(name))?;
            if got != digest {
                return Err(Error::PipelineMismatch(format!(
                    "{} changed since the pipeline was saved",
                    dir.join(name).display()
                )));
            }
        }
        let meta_path = dir.join("model.txt");
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut kind = None;
        let mut vectors_digest = None;
        let mut info = BTreeMap::new();
        for line in meta.lines() {
            let mut it = line.splitn(3, ' ');
            match (it.next(), it.next(), it.next()) {
                (Some("kind"), Some(k), None) => kind = Some(k.parse::<ModelKind>()?),
                (Some("vectors"), Some(d), None) => vectors_digest = Some(d.to_string()),
                (Some("info"), Some(k), Some(v)) => {
                    info.insert(k.to_string(), v.to_string());
                }
                _ => return Err(Error::Format(format!("bad model.txt line {line:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::Format("model.txt lacks kind".into()))?;
        let vectors = match &vectors_digest {
            Some(want) => {
                let t = resources.vectors(kind)?;
                if &t.digest() != want {
                    return Err(Error::PipelineMismatch(format!(
                        "{kind} pipeline was built with different word vectors"
                    )));
                }
                Some(t.clone())
            }
            None => None,
        };
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let featurizer = match kind {
            ModelKind::Handcrafted => Featurizer::Handcrafted(Box::new(FeatureContext::load(dir.join("features"))?)),
            ModelKind::PosTrigram | ModelKind::CharTrigram => {
                let spec = TrigramBaselineSpec::load(dir.join("trigrams.txt"))?;
                let want = if kind == ModelKind::PosTrigram {
                    TrigramKind::Pos
                } else {
                    TrigramKind::Char
                };
                if spec.kind != want {
                    return Err(Error::PipelineMismatch(format!("{kind} pipeline holds another trigram kind")));
                }
                Featurizer::Trigram(spec)
            }
            ModelKind::MeanEmbedding => Featurizer::MeanEmbedding,
            _ => Featurizer::None,
        };
        let classifier = match kind {
            ModelKind::Handcrafted | ModelKind::PosTrigram | ModelKind::CharTrigram | ModelKind::MeanEmbedding => {
                Classifier::Linear(LinearSvmModel::from_text(&read("svm.txt")?)?)
            }
            ModelKind::GaussianKernel => {
                let svm = KernelSvmModel::from_text(&read("svm.txt")?)?;
                let (alpha, train_docs) = docs_from_text(&read("kernel_docs.txt")?)?;
                if train_docs.len() != svm.n_train {
                    return Err(Error::PipelineMismatch(format!(
                        "kernel model refers to {} training documents, {} stored",
                        svm.n_train,
                        train_docs.len()
                    )));
                }
                Classifier::Kernel { svm, alpha, train_docs }
            }
            ModelKind::FastText | ModelKind::FastTextPretrained => {
                let vocab = FastTextVocab::load(dir.join("vocab.txt"))?;
                let tensors = load_checkpoint(dir.join("weights.ckpt"))?;
                let (rows, dim) = tensors.first().map(|(_, t)| t.shape()).unwrap_or((0, 0));
                if rows != vocab.rows() {
                    return Err(Error::PipelineMismatch("fastText weights do not fit the vocabulary".into()));
                }
                let mut m = FastTextModel::new(rows, dim, 0);
                load_checkpoint_into(&mut m, tensors)?;
                Classifier::FastText(vocab, m)
            }
            ModelKind::Lstm | ModelKind::Transformer => {
                let vocab = SubwordVocab::load(dir.join("subword.txt"))?;
                let tensors = load_checkpoint(dir.join("weights.ckpt"))?;
                let (rows, dim) = tensors.first().map(|(_, t)| t.shape()).unwrap_or((0, 0));
                if rows != vocab.size() {
                    return Err(Error::PipelineMismatch("embedding does not fit the subword vocabulary".into()));
                }
                if kind == ModelKind::Lstm {
                    let mut m = LstmModel::with_dim(rows, dim, 0);
                    load_checkpoint_into(&mut m, tensors)?;
                    Classifier::Lstm(vocab, m)
                } else {
                    let mut m = SimplifiedTransformer::with_dim(rows, dim, 0);
                    load_checkpoint_into(&mut m, tensors)?;
                    Classifier::Transformer(vocab, m)
                }
            }
            ModelKind::Constant => Classifier::Constant(
                read("constant.txt")?
                    .trim()
                    .parse()
                    .map_err(|()| Error::Format("constant.txt: bad label".into()))?,
            ),
        };
        Ok(TrainedModel {
            kind,
            featurizer,
            classifier,
            vectors_digest,
            info,
            vectors,
        })
    }
}

fn docs_to_text(alpha: f64, docs: &[GaussianDoc]) -> String {
    let dim = docs.first().map_or(0, |d| d.mean.len());
    let mut s = format!("\\gaussian-docs v1\nalpha {alpha}\ndim {dim}\ncount {}\n", docs.len());
    for d in docs {
        let row: Vec<String> = d.mean.iter().chain(&d.var).map(|x| x.to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn docs_from_text(text: &str) -> Result<(f64, Vec<GaussianDoc>)> {
    let bad = |m: &str| Error::Format(format!("kernel_docs.txt: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("\\gaussian-docs v1") {
        return Err(bad("missing header"));
    }
    let mut keyed = |key: &str| -> Result<String> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected {key}")))
    };
    let alpha: f64 = keyed("alpha")?.parse().map_err(|_| bad("bad alpha"))?;
    let dim: usize = keyed("dim")?.parse().map_err(|_| bad("bad dim"))?;
    let count: usize = keyed("count")?.parse().map_err(|_| bad("bad count"))?;
    let mut docs = Vec::with_capacity(count.min(1 << 20));
    for line in lines {
        let v: Vec<f64> = line
            .split(' ')
            .map(|x| x.parse().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?;
        if v.len() != 2 * dim {
            return Err(bad("row length does not match dim"));
        }
        docs.push(GaussianDoc {
            mean: v[..dim].to_vec(),
            var: v[dim..].to_vec(),
        });
    }
    if docs.len() != count {
        return Err(bad("row count does not match header"));
    }
    Ok((alpha, docs))
}

/// Hex sha-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
