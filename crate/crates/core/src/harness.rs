//! Multi-seed experiments, in-domain reports and cross-data matrices.
//!
//! Layout under the output directory:
//! `runs/<model>/<dataset>/seed-<s>/{model/, bundle/, train_log.csv}` plus
//! `runs.csv` (one row per seed and test set) and `matrix.csv` (aggregates).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::{assemble_dataset, DatasetBundle, DatasetSpec, Label, Paragraph};
use crate::error::{Error, Result};
use crate::par;
use crate::pipeline::{train_model, Hyper, ModelKind, Resources, TrainedModel};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelKind,
    pub spec: DatasetSpec,
    /// Each seed drives both the data sample and the model initialization.
    pub seeds: Vec<u64>,
    pub hyper: Hyper,
    pub out_dir: PathBuf,
    /// Dataset name in reports; defaults to the dash notation of `spec`.
    pub dataset_name: Option<String>,
}

impl RunConfig {
    pub fn new(model: ModelKind, spec: DatasetSpec, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            model,
            spec,
            seeds: DEFAULT_SEEDS.to_vec(),
            hyper: Hyper::default(),
            out_dir: out_dir.into(),
            dataset_name: None,
        }
    }

    pub fn dataset_name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| self.spec.name())
    }

    /// Model name in reports; label-shuffled controls get their own name.
    pub fn model_name(&self) -> String {
        if self.hyper.shuffle_labels {
            format!("{}-shuffled", self.model)
        } else {
            self.model.to_string()
        }
    }

    pub fn validate(&self, resources: &Resources) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::InvalidArgument("seeds must be distinct".into()));
        }
        if self.model.needs_vectors() && resources.vectors.is_none() {
            return Err(Error::InvalidArgument(format!("{} needs word vectors", self.model)));
        }
        self.spec.validate()
    }
}

pub fn run_dir(out: &Path, model: &str, dataset: &str, seed: u64) -> PathBuf {
    out.join("runs").join(model).join(dataset).join(format!("seed-{seed}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub train_set: String,
    pub test_set: String,
    pub seed: u64,
    /// `None` marks a failed run.
    pub accuracy: Option<f64>,
    /// `ok`, or the error code of the failure.
    pub status: String,
    pub n_original: usize,
    pub n_translated: usize,
    pub correct_original: usize,
    pub correct_translated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: String,
    pub train_set: String,
    pub test_set: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn score(model: &TrainedModel, test: &[Paragraph]) -> Result<(f64, [usize; 4])> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let pred = model.predict(test)?;
    let mut c = [0usize; 4];
    for (p, g) in pred.iter().zip(test) {
        let i = g.label.index();
        c[i] += 1;
        if *p == g.label {
            c[2 + i] += 1;
        }
    }
    Ok(((c[2] + c[3]) as f64 / test.len() as f64, c))
}

fn ok_row(model: &str, train: &str, test: &str, seed: u64, acc: f64, c: [usize; 4]) -> EvalRow {
    debug_assert_eq!(Label::Original.index(), 0);
    EvalRow {
        model: model.to_string(),
        train_set: train.to_string(),
        test_set: test.to_string(),
        seed,
        accuracy: Some(acc),
        status: "ok".to_string(),
        n_original: c[0],
        n_translated: c[1],
        correct_original: c[2],
        correct_translated: c[3],
    }
}

fn failed_row(model: &str, train: &str, test: &str, seed: u64, e: &Error) -> EvalRow {
    EvalRow {
        model: model.to_string(),
        train_set: train.to_string(),
        test_set: test.to_string(),
        seed,
        accuracy: None,
        status: e.code().to_string(),
        n_original: 0,
        n_translated: 0,
        correct_original: 0,
        correct_translated: 0,
    }
}

fn run_seed(corpus: &[Paragraph], cfg: &RunConfig, seed: u64, resources: &Resources) -> Result<EvalRow> {
    let (model_name, dataset) = (cfg.model_name(), cfg.dataset_name());
    let dir = run_dir(&cfg.out_dir, &model_name, &dataset, seed);
    let bundle = assemble_dataset(corpus, &cfg.spec, seed)?;
    bundle.save(dir.join("bundle"))?;
    let (model, log) = train_model(cfg.model, &bundle, seed, &cfg.hyper, resources)?;
    model.save(dir.join("model"))?;
    if let Some(log) = log {
        let path = dir.join("train_log.csv");
        let mut buf = Vec::new();
        log.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    let (acc, counts) = score(&model, &bundle.test)?;
    Ok(ok_row(&model_name, &dataset, &dataset, seed, acc, counts))
}

/// Trains and tests one model per seed, saves every pipeline and merges the
/// seed rows into `runs.csv` / `matrix.csv`. If a seed fails, its row carries
/// the error code, the report is still written and the first error returned.
pub fn run_experiment(corpus: &[Paragraph], cfg: &RunConfig, resources: &Resources) -> Result<EvalReport> {
    cfg.validate(resources)?;
    let results = par::map(&cfg.seeds, |&s| run_seed(corpus, cfg, s, resources));
    let (model_name, dataset) = (cfg.model_name(), cfg.dataset_name());
    let mut report = EvalReport::default();
    let mut first_err = None;
    for (seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                report.rows.push(failed_row(&model_name, &dataset, &dataset, *seed, &e));
                first_err.get_or_insert(e);
            }
        }
    }
    report.merge_into_dir(&cfg.out_dir)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// A saved run that can be re-scored.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredRun {
    pub model: String,
    pub train_set: String,
    pub seed: u64,
    pub dir: PathBuf,
}

impl StoredRun {
    pub fn load_model(&self, resources: &Resources) -> Result<TrainedModel> {
        TrainedModel::load(self.dir.join("model"), resources)
    }

    pub fn load_bundle(&self) -> Result<DatasetBundle> {
        DatasetBundle::load(self.dir.join("bundle"))
    }
}

/// Successful runs recorded in `out/runs.csv`, each with its artifact dir.
/// Only in-domain rows count; cross-data rows in the same file are skipped.
pub fn stored_runs(out: &Path) -> Result<Vec<StoredRun>> {
    let report = EvalReport::read_runs(out.join("runs.csv"))?;
    Ok(report
        .rows
        .iter()
        .filter(|r| r.accuracy.is_some() && r.train_set == r.test_set)
        .map(|r| StoredRun {
            model: r.model.clone(),
            train_set: r.train_set.clone(),
            seed: r.seed,
            dir: run_dir(out, &r.model, &r.train_set, r.seed),
        })
        .collect())
}

/// A test domain: a corpus and the dataset spec to draw from it.
#[derive(Debug, Clone)]
pub struct TestSource<'a> {
    pub name: String,
    pub corpus: &'a [Paragraph],
    pub spec: DatasetSpec,
}

/// Scores every stored run on the test split of every source. The test
/// split is re-assembled under the run's own seed, so a run scored on its
/// own training domain sees exactly the test set it was evaluated on.
/// Pipelines are loaded from disk and never refitted.
pub fn cross_evaluate(runs: &[StoredRun], sources: &[TestSource<'_>], resources: &Resources) -> Result<EvalReport> {
    if runs.is_empty() || sources.is_empty() {
        return Err(Error::EmptyInput("cross-evaluation needs runs and test sources"));
    }
    let per_run = par::map(runs, |run| -> Result<Vec<EvalRow>> {
        let model = run.load_model(resources)?;
        sources
            .iter()
            .map(|src| {
                let bundle = assemble_dataset(src.corpus, &src.spec, run.seed)?;
                let (acc, c) = score(&model, &bundle.test)?;
                Ok(ok_row(&run.model, &run.train_set, &src.name, run.seed, acc, c))
            })
            .collect()
    });
    let mut report = EvalReport::default();
    for rows in per_run {
        report.rows.extend(rows?);
    }
    Ok(report)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

type Key = (String, String, String);

impl EvalReport {
    /// Mean and sample std per (model, train set, test set) over successful
    /// seeds, in key order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(a) = r.accuracy {
                groups
                    .entry((r.model.clone(), r.train_set.clone(), r.test_set.clone()))
                    .or_default()
                    .push(a);
            }
        }
        groups
            .into_iter()
            .map(|((model, train_set, test_set), xs)| {
                let (mean, std) = mean_std(&xs);
                Aggregate {
                    model,
                    train_set,
                    test_set,
                    n: xs.len(),
                    mean,
                    std,
                }
            })
            .collect()
    }

    pub fn get(&self, model: &str, train: &str, test: &str, seed: u64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.train_set == train && r.test_set == test && r.seed == seed)
    }

    /// Adds `other`'s rows, replacing rows with the same key and seed.
    pub fn merge(&mut self, other: &EvalReport) {
        for row in &other.rows {
            self.rows.retain(|r| {
                !(r.model == row.model && r.train_set == row.train_set && r.test_set == row.test_set && r.seed == row.seed)
            });
            self.rows.push(row.clone());
        }
        self.sort();
    }

    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.model, &a.train_set, &a.test_set, a.seed).cmp(&(&b.model, &b.train_set, &b.test_set, b.seed))
        });
    }

    /// Merges into the reports already in `dir` and rewrites both CSVs.
    pub fn merge_into_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("runs.csv");
        let mut all = if path.exists() {
            EvalReport::read_runs(&path)?
        } else {
            EvalReport::default()
        };
        all.merge(self);
        all.write(dir)
    }

    /// Writes `runs.csv` and `matrix.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_runs(dir.join("runs.csv"))?;
        self.write_matrix(dir.join("matrix.csv"))
    }

    pub fn write_runs(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record([
            "model",
            "train_set",
            "test_set",
            "seed",
            "accuracy",
            "status",
            "n_original",
            "n_translated",
            "correct_original",
            "correct_translated",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.train_set.clone(),
                r.test_set.clone(),
                r.seed.to_string(),
                r.accuracy.map_or(String::new(), |a| a.to_string()),
                r.status.clone(),
                r.n_original.to_string(),
                r.n_translated.to_string(),
                r.correct_original.to_string(),
                r.correct_translated.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn write_matrix(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["model", "train_set", "test_set", "n", "mean", "std"])?;
        for a in self.aggregates() {
            w.write_record([
                a.model,
                a.train_set,
                a.test_set,
                a.n.to_string(),
                a.mean.to_string(),
                a.std.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_runs(path: impl AsRef<Path>) -> Result<EvalReport> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let bad = |line: usize, msg: &str| Error::Malformed {
            line,
            msg: format!("{}: {msg}", path.display()),
        };
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            if rec.len() != 10 {
                return Err(bad(line, "expected 10 fields"));
            }
            let num = |j: usize| rec[j].parse::<usize>().map_err(|_| bad(line, "bad count"));
            let accuracy = if rec[4].is_empty() {
                None
            } else {
                Some(rec[4].parse::<f64>().map_err(|_| bad(line, "bad accuracy"))?)
            };
            rows.push(EvalRow {
                model: rec[0].to_string(),
                train_set: rec[1].to_string(),
                test_set: rec[2].to_string(),
                seed: rec[3].parse().map_err(|_| bad(line, "bad seed"))?,
                accuracy,
                status: rec[5].to_string(),
                n_original: num(6)?,
                n_translated: num(7)?,
                correct_original: num(8)?,
                correct_translated: num(9)?,
            });
        }
        Ok(EvalReport { rows })
    }
}
