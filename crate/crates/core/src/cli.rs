//! Command-line interface. Every command that writes artifacts also writes
//! `manifest.txt` into its output directory: resolved arguments, a digest of
//! them, and sha-256 digests of every input and output file. No timestamps,
//! so identical runs give identical manifests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::analysis::analyze;
use crate::corpus::{assemble_dataset, load_corpus, DatasetBundle, DatasetSpec, Split};
use crate::embeddings::{doc_mean, gaussian_doc, write_gaussian_csv, EmbeddingTable};
use crate::error::{Error, Result};
use crate::features::{
    fit_feature_context, write_feature_csv, FeatureConfig, FeatureContext, TrigramBaselineSpec, TrigramKind,
    TRIGRAM_VOCAB,
};
use crate::harness::{cross_evaluate, run_experiment, stored_runs, EvalReport, RunConfig, TestSource};
use crate::par;
use crate::pipeline::{file_digest, Hyper, ModelKind, Resources, TrainedModel};

#[derive(Parser, Debug)]
#[command(name = "translationese", version, about = "Translationese classification experiments")]
pub struct Cli {
    /// TOML file supplying flag values; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug)]
pub struct VectorArgs {
    /// Word vectors in `.vec` text format.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Seed of the random vectors given to out-of-vocabulary words.
    #[arg(long, default_value_t = 0)]
    pub oov_seed: u64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and check a JSONL corpus.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Draw a balanced train/dev/test bundle from a corpus.
    Assemble {
        #[arg(long)]
        corpus: PathBuf,
        /// trg-src:de:en, trg-all:de:en,es or all-all:de,en,es
        #[arg(long)]
        dataset: String,
        /// Train, dev and test fractions.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a feature context (handcrafted) or trigram vocabulary on a
    /// bundle's training split.
    FitFeatures {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "handcrafted")]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write feature vectors of one split to `features.csv`.
    Extract {
        #[arg(long)]
        bundle: PathBuf,
        /// handcrafted, pos-trigram, char-trigram, mean-embedding or gaussian
        #[arg(long, default_value = "handcrafted")]
        kind: String,
        /// Output directory of `fit-features`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        vectors: VectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and test one model per seed; saves pipelines and reports.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Report name of the dataset; defaults to its dash notation.
        #[arg(long)]
        dataset_name: Option<String>,
        #[arg(long)]
        model: String,
        /// One seed or a comma-separated list.
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        #[command(flatten)]
        vectors: VectorArgs,
        #[arg(long, value_delimiter = ',')]
        c_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        #[arg(long)]
        crossfit_folds: Option<usize>,
        #[arg(long)]
        subword_size: Option<usize>,
        #[arg(long)]
        fasttext_dim: Option<usize>,
        #[arg(long)]
        fasttext_buckets: Option<usize>,
        #[arg(long)]
        neural_dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        /// Permute training and dev labels (null-task control).
        #[arg(long)]
        shuffle_labels: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved pipeline on one split of a bundle.
    Evaluate {
        /// A run's `model` directory.
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        vectors: VectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every stored run on other test domains.
    CrossEval {
        /// Output directory of earlier `train` commands.
        #[arg(long)]
        runs: PathBuf,
        /// Corpus for test sets that do not name their own.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// `[NAME=]SPEC[@CORPUS]`, repeatable.
        #[arg(long, required = true)]
        test_set: Vec<String>,
        /// Restrict to these model names.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[command(flatten)]
        vectors: VectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature importance of one handcrafted run against the neural runs on
    /// the same dataset and seed.
    Analyze {
        #[arg(long)]
        runs: PathBuf,
        /// Dataset name as reported, e.g. DE-EN.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        seed: u64,
        /// Restrict the neural runs to these model names.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Correlate only the top k of each ranking.
        #[arg(long)]
        top_k: Option<usize>,
        #[command(flatten)]
        vectors: VectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print mean and standard deviation per model and dataset pair.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{}", Cli::command().render_usage());
            return 2;
        }
        Err(ConfigError::Op(e)) => {
            report_error(&e);
            return 1;
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let args = match matches.subcommand() {
        Some((name, sub)) => {
            let root = Cli::command();
            let ids: Vec<String> = root
                .find_subcommand(name)
                .map(|c| c.get_arguments().map(|a| a.get_id().to_string()).collect())
                .unwrap_or_default();
            resolved_args(sub, &ids)
        }
        None => BTreeMap::new(),
    };
    match dispatch(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            1
        }
    }
}

fn report_error(e: &Error) {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error: code={} msg={msg}", e.code());
}

enum ConfigError {
    Usage(String),
    Op(Error),
}

/// Inserts flags from `--config` for every option the command accepts and
/// the command line does not already give. Top-level keys apply to every
/// command that has them; a `[command]` table applies to that command only
/// and must not contain unknown keys.
fn apply_config(argv: Vec<OsString>) -> std::result::Result<Vec<OsString>, ConfigError> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let Some(cmd_name) = strs.iter().skip(1).find(|a| !a.starts_with('-') && Some(*a) != Some(&path)).cloned() else {
        return Ok(argv);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&cmd_name) else {
        return Ok(argv);
    };
    let known: BTreeMap<String, bool> = sub
        .get_arguments()
        .filter_map(|a| {
            a.get_long()
                .map(|l| (l.to_string(), matches!(a.get_action(), clap::ArgAction::SetTrue)))
        })
        .collect();
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Op(Error::io(&path, e)))?;
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Op(Error::Format(format!("{path}: {}", e.message()))))?;
    let mut values: BTreeMap<String, toml::Value> = BTreeMap::new();
    for (k, v) in &doc {
        if !v.is_table() {
            let k = k.replace('_', "-");
            if known.contains_key(&k) {
                values.insert(k, v.clone());
            }
        }
    }
    if let Some(toml::Value::Table(t)) = doc.get(&cmd_name) {
        for (k, v) in t {
            let k = k.replace('_', "-");
            if !known.contains_key(&k) || k == "config" {
                return Err(ConfigError::Usage(format!("config key {k:?} is not a flag of {cmd_name}")));
            }
            values.insert(k, v.clone());
        }
    }
    let given = |flag: &str| {
        let long = format!("--{flag}");
        let eq = format!("--{flag}=");
        strs.iter().any(|a| *a == long || a.starts_with(&eq))
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (k, v) in values {
        if given(&k) {
            continue;
        }
        let flag = format!("--{k}");
        let scalar = |v: &toml::Value| -> std::result::Result<String, ConfigError> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                toml::Value::Boolean(b) => Ok(b.to_string()),
                _ => Err(ConfigError::Usage(format!("config key {k:?} has an unsupported value"))),
            }
        };
        match (&v, known[&k]) {
            (toml::Value::Boolean(b), true) => {
                if *b {
                    extra.push(flag.into());
                }
            }
            (_, true) => return Err(ConfigError::Usage(format!("config key {k:?} must be true or false"))),
            (toml::Value::Array(items), false) => {
                let repeatable = k == "test-set";
                let parts = items.iter().map(scalar).collect::<std::result::Result<Vec<_>, _>>()?;
                if repeatable {
                    for p in parts {
                        extra.push(flag.clone().into());
                        extra.push(p.into());
                    }
                } else {
                    extra.push(flag.into());
                    extra.push(parts.join(",").into());
                }
            }
            (v, false) => {
                extra.push(flag.into());
                extra.push(scalar(v)?.into());
            }
        }
    }
    let pos = strs.iter().position(|a| *a == cmd_name).expect("found above") + 1;
    let mut out = argv;
    out.splice(pos..pos, extra);
    Ok(out)
}

/// Final value of every argument the command received, defaults included;
/// `--out` and `--config` are left out so that the manifest does not depend
/// on where it is written.
fn resolved_args(m: &ArgMatches, arg_ids: &[String]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for id in m.ids() {
        let id = id.as_str();
        if id == "out" || id == "config" || !arg_ids.iter().any(|a| a == id) {
            continue;
        }
        if let Ok(Some(raw)) = m.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            out.insert(id.replace('_', "-"), vals.join(","));
        }
    }
    out
}

fn dispatch(cmd: Command, args: &BTreeMap<String, String>) -> Result<()> {
    match cmd {
        Command::Validate { corpus } => {
            let ps = load_corpus(&corpus)?;
            let mut ids = std::collections::HashSet::new();
            for (i, p) in ps.iter().enumerate() {
                p.validate(i + 1)?;
                if !ids.insert(p.id.as_str()) {
                    return Err(Error::Malformed {
                        line: i + 1,
                        msg: format!("duplicate id {:?}", p.id),
                    });
                }
            }
            println!("{} paragraphs OK", ps.len());
            Ok(())
        }
        Command::Assemble {
            corpus,
            dataset,
            fractions,
            seed,
            out,
        } => {
            let mut spec: DatasetSpec = dataset.parse()?;
            if let Some(f) = fractions {
                if f.len() != 3 {
                    return Err(Error::InvalidArgument("--fractions takes three values".into()));
                }
                spec = spec.with_fractions(f[0], f[1], f[2]);
                spec.validate()?;
            }
            let bundle = assemble_dataset(&load_corpus(&corpus)?, &spec, seed)?;
            bundle.save(&out)?;
            println!(
                "{}: train {} dev {} test {}",
                spec.name(),
                bundle.train.len(),
                bundle.dev.len(),
                bundle.test.len()
            );
            write_manifest(&out, "assemble", args, &[corpus])
        }
        Command::FitFeatures { bundle, kind, out } => {
            let b = DatasetBundle::load(&bundle)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            match kind.as_str() {
                "handcrafted" => fit_feature_context(&b.train, FeatureConfig::default())?.save(out.join("features"))?,
                "pos-trigram" => TrigramBaselineSpec::fit(&b.train, TrigramKind::Pos, TRIGRAM_VOCAB).save(out.join("trigrams.txt"))?,
                "char-trigram" => {
                    TrigramBaselineSpec::fit(&b.train, TrigramKind::Char, TRIGRAM_VOCAB).save(out.join("trigrams.txt"))?
                }
                _ => return Err(Error::InvalidArgument(format!("cannot fit features of kind {kind:?}"))),
            }
            write_manifest(&out, "fit-features", args, &[bundle])
        }
        Command::Extract {
            bundle,
            kind,
            features,
            split,
            vectors,
            out,
        } => {
            let b = DatasetBundle::load(&bundle)?;
            let ps = b.split(split.parse::<Split>()?);
            let res = resources(&vectors)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let path = out.join("features.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let need_features = || {
                features
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument(format!("{kind} extraction needs --features")))
            };
            let need_vectors = || {
                res.vectors
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument(format!("{kind} extraction needs --vectors")))
            };
            let mut inputs = vec![bundle.clone()];
            match kind.as_str() {
                "handcrafted" => {
                    let dir = need_features()?;
                    let ctx = FeatureContext::load(dir.join("features"))?;
                    write_feature_csv(file, ps, &ctx.extract_all(ps))?;
                    inputs.push(dir);
                }
                "pos-trigram" | "char-trigram" => {
                    let dir = need_features()?;
                    let spec = TrigramBaselineSpec::load(dir.join("trigrams.txt"))?;
                    let want = if kind == "pos-trigram" {
                        TrigramKind::Pos
                    } else {
                        TrigramKind::Char
                    };
                    if spec.kind != want {
                        return Err(Error::PipelineMismatch(format!("{} holds another trigram kind", dir.display())));
                    }
                    write_feature_csv(file, ps, &par::map(ps, |p| spec.extract(p)))?;
                    inputs.push(dir);
                }
                "mean-embedding" => {
                    let t = need_vectors()?;
                    write_feature_csv(file, ps, &par::map(ps, |p| doc_mean(p, &t)))?;
                }
                "gaussian" => {
                    let t = need_vectors()?;
                    write_gaussian_csv(file, ps, &par::map(ps, |p| gaussian_doc(p, &t)))?;
                }
                _ => return Err(Error::InvalidArgument(format!("unknown feature kind {kind:?}"))),
            }
            inputs.extend(vectors.vectors.clone());
            write_manifest(&out, "extract", args, &inputs)
        }
        Command::Train {
            corpus,
            dataset,
            dataset_name,
            model,
            seed,
            vectors,
            c_grid,
            alpha_grid,
            crossfit_folds,
            subword_size,
            fasttext_dim,
            fasttext_buckets,
            neural_dim,
            epochs,
            patience,
            batch_size,
            lr,
            dropout,
            shuffle_labels,
            out,
        } => {
            let d = Hyper::default();
            let hyper = Hyper {
                c_grid: c_grid.unwrap_or(d.c_grid),
                alpha_grid: alpha_grid.unwrap_or(d.alpha_grid),
                features: d.features,
                crossfit_folds: crossfit_folds.unwrap_or(d.crossfit_folds),
                subword_size: subword_size.unwrap_or(d.subword_size),
                fasttext_dim: fasttext_dim.unwrap_or(d.fasttext_dim),
                fasttext_buckets: fasttext_buckets.unwrap_or(d.fasttext_buckets),
                neural_dim: neural_dim.unwrap_or(d.neural_dim),
                epochs,
                patience,
                batch_size,
                lr,
                dropout,
                shuffle_labels,
            };
            let cfg = RunConfig {
                model: model.parse()?,
                spec: dataset.parse()?,
                seeds: seed,
                hyper,
                out_dir: out.clone(),
                dataset_name,
            };
            let res = resources(&vectors)?;
            let report = run_experiment(&load_corpus(&corpus)?, &cfg, &res)?;
            for r in &report.rows {
                println!(
                    "{} {} seed {}: accuracy {}",
                    r.model,
                    r.train_set,
                    r.seed,
                    r.accuracy.map_or("failed".to_string(), |a| format!("{a:.4}"))
                );
            }
            let mut inputs = vec![corpus];
            inputs.extend(vectors.vectors.clone());
            write_manifest(&out, "train", args, &inputs)
        }
        Command::Evaluate {
            model_dir,
            bundle,
            split,
            vectors,
            out,
        } => {
            let res = resources(&vectors)?;
            let model = TrainedModel::load(&model_dir, &res)?;
            let b = DatasetBundle::load(&bundle)?;
            let ps = b.split(split.parse::<Split>()?);
            if ps.is_empty() {
                return Err(Error::EmptyInput("evaluation split"));
            }
            let pred = model.predict(ps)?;
            let proba = model.predict_proba(ps)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
            w.write_record(["id", "label", "predicted", "p_translated"])?;
            for (i, (p, y)) in ps.iter().zip(&pred).enumerate() {
                let pt = proba.as_ref().map_or(String::new(), |v| v[i].to_string());
                w.write_record([p.id.as_str(), p.label.as_str(), y.as_str(), &pt])?;
            }
            w.flush().map_err(|e| Error::io(out.join("predictions.csv"), e))?;
            let correct = ps.iter().zip(&pred).filter(|(p, y)| p.label == **y).count();
            println!("accuracy {}", correct as f64 / ps.len() as f64);
            let mut inputs = vec![model_dir, bundle];
            inputs.extend(vectors.vectors.clone());
            write_manifest(&out, "evaluate", args, &inputs)
        }
        Command::CrossEval {
            runs,
            corpus,
            test_set,
            models,
            vectors,
            out,
        } => {
            let res = resources(&vectors)?;
            let mut stored = stored_runs(&runs)?;
            if let Some(m) = &models {
                stored.retain(|r| m.contains(&r.model));
            }
            if stored.is_empty() {
                return Err(Error::EmptyInput("no stored runs match"));
            }
            let mut corpora: BTreeMap<PathBuf, Vec<crate::corpus::Paragraph>> = BTreeMap::new();
            let mut parsed = Vec::new();
            for t in &test_set {
                let (name, rest) = match t.split_once('=') {
                    Some((n, r)) => (Some(n.to_string()), r),
                    None => (None, t.as_str()),
                };
                let (spec, path) = match rest.split_once('@') {
                    Some((s, p)) => (s, PathBuf::from(p)),
                    None => (
                        rest,
                        corpus
                            .clone()
                            .ok_or_else(|| Error::InvalidArgument(format!("test set {t:?} needs --corpus")))?,
                    ),
                };
                let spec: DatasetSpec = spec.parse()?;
                if !corpora.contains_key(&path) {
                    corpora.insert(path.clone(), load_corpus(&path)?);
                }
                parsed.push((name.unwrap_or_else(|| spec.name()), spec, path));
            }
            let sources: Vec<TestSource> = parsed
                .iter()
                .map(|(name, spec, path)| TestSource {
                    name: name.clone(),
                    corpus: &corpora[path],
                    spec: spec.clone(),
                })
                .collect();
            let report = cross_evaluate(&stored, &sources, &res)?;
            report.write(&out)?;
            print_aggregates(&report);
            let mut inputs: Vec<PathBuf> = corpora.keys().cloned().collect();
            inputs.push(runs.join("runs.csv"));
            for r in &stored {
                inputs.push(r.dir.join("model"));
            }
            inputs.extend(vectors.vectors.clone());
            write_manifest(&out, "cross-eval", args, &inputs)
        }
        Command::Analyze {
            runs,
            dataset,
            seed,
            models,
            top_k,
            vectors,
            out,
        } => {
            let res = resources(&vectors)?;
            let stored = stored_runs(&runs)?;
            let same: Vec<_> = stored.iter().filter(|r| r.train_set == dataset && r.seed == seed).collect();
            let hc = same
                .iter()
                .find(|r| r.model == ModelKind::Handcrafted.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("no handcrafted run for {dataset} seed {seed}")))?;
            let others: Vec<_> = same
                .iter()
                .filter(|r| r.model.parse::<ModelKind>().is_ok_and(ModelKind::is_neural))
                .filter(|r| models.as_ref().is_none_or(|m| m.contains(&r.model)))
                .map(|r| (*r).clone())
                .collect();
            let report = analyze(hc, &others, &res)?;
            report.write(&out, top_k)?;
            println!("analysed {} against {} neural runs", hc.model, others.len());
            let mut inputs = vec![hc.dir.clone()];
            inputs.extend(others.iter().map(|r| r.dir.join("model")));
            inputs.extend(vectors.vectors.clone());
            write_manifest(&out, "analyze", args, &inputs)
        }
        Command::Report { runs, out } => {
            let report = EvalReport::read_runs(runs.join("runs.csv"))?;
            print_aggregates(&report);
            if let Some(out) = out {
                report.write(&out)?;
                write_manifest(&out, "report", args, &[runs.join("runs.csv")])?;
            }
            Ok(())
        }
    }
}

fn print_aggregates(report: &EvalReport) {
    for a in report.aggregates() {
        println!(
            "{} {} -> {}: {:.4} +- {:.4} (n={})",
            a.model, a.train_set, a.test_set, a.mean, a.std, a.n
        );
    }
}

fn resources(v: &VectorArgs) -> Result<Resources> {
    Ok(Resources {
        vectors: match &v.vectors {
            Some(p) => Some(Arc::new(EmbeddingTable::load_vec(p, v.oov_seed)?)),
            None => None,
        },
    })
}

/// Files under `path` (or `path` itself), relative names sorted.
fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![PathBuf::new()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let dir = path.join(&rel);
        for e in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let e = e.map_err(|e| Error::io(&dir, e))?;
            let r = rel.join(e.file_name());
            if e.file_type().map_err(|err| Error::io(e.path(), err))?.is_dir() {
                stack.push(r);
            } else {
                out.push(r);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn write_manifest(out: &Path, command: &str, args: &BTreeMap<String, String>, inputs: &[PathBuf]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut canon = format!("command={command}\n");
    for (k, v) in args {
        let _ = writeln!(canon, "{k}={v}");
    }
    let mut m = String::from("\\manifest v1\n");
    let _ = writeln!(m, "command {command}");
    let _ = writeln!(m, "version {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "config-sha256 {}", hex::encode(Sha256::digest(canon.as_bytes())));
    for (k, v) in args {
        let _ = writeln!(m, "arg {k} {v}");
    }
    for input in inputs {
        for rel in files_under(input)? {
            let p = if rel.as_os_str().is_empty() { input.clone() } else { input.join(&rel) };
            let _ = writeln!(m, "input {} {}", p.display(), file_digest(&p)?);
        }
    }
    for rel in files_under(out)? {
        if rel == Path::new("manifest.txt") {
            continue;
        }
        let _ = writeln!(m, "output {} {}", rel.display(), file_digest(out.join(&rel))?);
    }
    let path = out.join("manifest.txt");
    std::fs::write(&path, m).map_err(|e| Error::io(&path, e))
}
