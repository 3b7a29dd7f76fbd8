//! Feature importance: SVM weight rankings, per-feature OLS against gold
//! labels or model probabilities, rank correlation and set overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};
use crate::features::{feature_name, N_FEATURES};
use crate::harness::StoredRun;
use crate::par;
use crate::pipeline::Resources;
use crate::svm::LinearSvmModel;

pub const SIGNIFICANCE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    AbsWeight,
    R2,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::AbsWeight => "abs-weight",
            ScoreKind::R2 => "r2",
        }
    }
}

/// Feature ids with scores, descending by score, ties by id.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    pub kind: ScoreKind,
    pub entries: Vec<(usize, f64)>,
}

impl ImportanceRanking {
    pub fn from_scores(kind: ScoreKind, scores: &[f64]) -> Self {
        let mut entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ImportanceRanking { kind, entries }
    }

    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn top(&self, k: usize) -> &[(usize, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }
}

pub fn rank_svm_weights(model: &LinearSvmModel) -> Result<ImportanceRanking> {
    if model.weights.len() != N_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "feature ranking needs a {N_FEATURES}-dimensional model, got {}",
            model.weights.len()
        )));
    }
    Ok(rank_weights(&model.weights))
}

/// Ranking by |w| for a weight vector of any length.
pub fn rank_weights(w: &[f64]) -> ImportanceRanking {
    let abs: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    ImportanceRanking::from_scores(ScoreKind::AbsWeight, &abs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    pub feature_id: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub significant_999: bool,
}

/// Column-wise min-max scaling to [0, 1]; constant columns become 0.
pub fn minmax_normalize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x.first().map_or(0, Vec::len);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in x {
        for j in 0..d {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    x.iter()
        .map(|row| {
            (0..d)
                .map(|j| {
                    let span = hi[j] - lo[j];
                    if span > 0.0 {
                        (row[j] - lo[j]) / span
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Simple regression of `y` on one feature column.
pub fn ols(x: &[f64], y: &[f64], feature_id: usize) -> RegressionResult {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let flat = RegressionResult {
        feature_id,
        slope: 0.0,
        intercept: my,
        r2: 0.0,
        t_stat: 0.0,
        p_value: 1.0,
        significant_999: false,
    };
    if sxx <= 0.0 || syy <= 0.0 {
        return flat;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let r2 = (1.0 - sse / syy).clamp(0.0, 1.0);
    let df = n - 2.0;
    let se = (sse / df / sxx).sqrt();
    let t_stat = if se > 0.0 { slope / se } else { slope.signum() * f64::INFINITY };
    let p = if t_stat.is_finite() {
        let t = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * t.sf(t_stat.abs())).min(1.0)
    } else {
        0.0
    };
    // a perfect fit has p = 0 in the limit; keep it inside (0, 1]
    let p_value = p.max(f64::MIN_POSITIVE);
    RegressionResult {
        feature_id,
        slope,
        intercept,
        r2,
        t_stat,
        p_value,
        significant_999: p_value < SIGNIFICANCE,
    }
}

/// One OLS per feature column of `features` (rows are data points).
pub fn per_feature_regression(features: &[Vec<f64>], targets: &[f64]) -> Result<Vec<RegressionResult>> {
    let n = features.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("regression needs at least 3 points, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::InvalidArgument(format!("{n} feature rows but {} targets", targets.len())));
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged feature matrix".into()));
    }
    if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidArgument("targets must lie in [0, 1]".into()));
    }
    Ok(par::map_range(d, |j| {
        let col: Vec<f64> = features.iter().map(|r| r[j]).collect();
        ols(&col, targets, j)
    }))
}

pub fn rank_by_r2(results: &[RegressionResult]) -> ImportanceRanking {
    let mut scores = vec![0.0; results.len()];
    for r in results {
        scores[r.feature_id] = r.r2;
    }
    ImportanceRanking::from_scores(ScoreKind::R2, &scores)
}

pub fn significant_set(results: &[RegressionResult]) -> BTreeSet<usize> {
    results.iter().filter(|r| r.significant_999).map(|r| r.feature_id).collect()
}

/// Average ranks (1-based) of `v`, ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho between two rankings over the same ids. With `top_k`,
/// only ids in the top k of either ranking take part.
pub fn compare_rankings(a: &ImportanceRanking, b: &ImportanceRanking, top_k: Option<usize>) -> Result<f64> {
    let sa: BTreeMap<usize, f64> = a.entries.iter().copied().collect();
    let sb: BTreeMap<usize, f64> = b.entries.iter().copied().collect();
    if sa.len() != a.entries.len() || sb.len() != b.entries.len() {
        return Err(Error::InvalidArgument("ranking lists an id twice".into()));
    }
    if !sa.keys().eq(sb.keys()) {
        return Err(Error::InvalidArgument("rankings cover different feature ids".into()));
    }
    let ids: Vec<usize> = match top_k {
        None => sa.keys().copied().collect(),
        Some(k) => {
            let s: BTreeSet<usize> = a.top(k).iter().chain(b.top(k)).map(|e| e.0).collect();
            s.into_iter().collect()
        }
    };
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs at least two ids".into()));
    }
    let ra = average_ranks(&ids.iter().map(|i| sa[i]).collect::<Vec<_>>());
    let rb = average_ranks(&ids.iter().map(|i| sb[i]).collect::<Vec<_>>());
    pearson(&ra, &rb).ok_or_else(|| Error::InvalidArgument("rank correlation undefined for all-tied scores".into()))
}

/// F1 overlap `2|a & b| / (|a| + |b|)`; two empty sets overlap fully.
pub fn significance_overlap(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / (a.len() + b.len()) as f64
}

/// Exact central interval `[lo, hi]` of counts holding at least `level` of a
/// Binomial(n, p).
pub fn binomial_interval(n: u64, p: f64, level: f64) -> (u64, u64) {
    let dist = Binomial::new(p, n).expect("valid binomial");
    let tail = (1.0 - level) / 2.0;
    let lo = (0..=n).find(|&k| dist.cdf(k) > tail).unwrap_or(n);
    let hi = (0..=n).find(|&k| dist.cdf(k) >= 1.0 - tail).unwrap_or(n);
    (lo, hi)
}

/// Regression results for one target (gold labels or a model's predicted
/// probability of the translated class).
#[derive(Debug, Clone)]
pub struct TargetRegression {
    pub target: String,
    pub results: Vec<RegressionResult>,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub svm_ranking: ImportanceRanking,
    pub regressions: Vec<TargetRegression>,
}

/// Features come from the handcrafted run's own feature context applied to
/// its test split, min-max scaled on that split. Targets are the gold labels
/// and, for each other run, its probability of the translated class on the
/// same paragraphs.
pub fn analyze(handcrafted: &StoredRun, others: &[StoredRun], resources: &Resources) -> Result<AnalysisReport> {
    let model = handcrafted.load_model(resources)?;
    let ctx = model
        .feature_context()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a handcrafted-feature run", handcrafted.model)))?;
    let svm = model.linear_svm().expect("handcrafted runs use a linear SVM");
    let svm_ranking = rank_svm_weights(svm)?;
    let test = handcrafted.load_bundle()?.test;
    let x = minmax_normalize(&ctx.extract_all(&test));
    let gold: Vec<f64> = test.iter().map(|p| p.label.index() as f64).collect();
    let mut regressions = vec![TargetRegression {
        target: "gold".to_string(),
        results: per_feature_regression(&x, &gold)?,
    }];
    for run in others {
        let m = run.load_model(resources)?;
        let probs = m
            .predict_proba(&test)?
            .ok_or_else(|| Error::InvalidArgument(format!("{} gives no probabilities", run.model)))?;
        regressions.push(TargetRegression {
            target: run.model.clone(),
            results: per_feature_regression(&x, &probs)?,
        });
    }
    Ok(AnalysisReport { svm_ranking, regressions })
}

impl AnalysisReport {
    pub fn rankings(&self) -> Vec<(String, ImportanceRanking)> {
        let mut out = vec![("svm-weights".to_string(), self.svm_ranking.clone())];
        for r in &self.regressions {
            out.push((r.target.clone(), rank_by_r2(&r.results)));
        }
        out
    }

    /// Writes `regression.csv`, `rankings.csv`, `overlap.csv` and
    /// `top10.csv` into `dir`.
    pub fn write(&self, dir: &Path, top_k: Option<usize>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut w = csv::Writer::from_path(dir.join("regression.csv"))?;
        w.write_record([
            "target",
            "feature_id",
            "feature",
            "slope",
            "intercept",
            "r2",
            "t_stat",
            "p_value",
            "significant_999",
        ])?;
        for t in &self.regressions {
            for r in &t.results {
                w.write_record([
                    t.target.clone(),
                    r.feature_id.to_string(),
                    feature_name(r.feature_id),
                    r.slope.to_string(),
                    r.intercept.to_string(),
                    r.r2.to_string(),
                    r.t_stat.to_string(),
                    r.p_value.to_string(),
                    r.significant_999.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("regression.csv"), e))?;

        let rankings = self.rankings();
        let mut w = csv::Writer::from_path(dir.join("rankings.csv"))?;
        w.write_record(["ranking", "score_kind", "rank", "feature_id", "feature", "score"])?;
        let mut top = csv::Writer::from_path(dir.join("top10.csv"))?;
        top.write_record(["ranking", "rank", "feature", "score"])?;
        for (name, r) in &rankings {
            for (i, (id, s)) in r.entries.iter().enumerate() {
                let row = [
                    name.clone(),
                    r.kind.as_str().to_string(),
                    (i + 1).to_string(),
                    id.to_string(),
                    feature_name(*id),
                    s.to_string(),
                ];
                w.write_record(&row)?;
                if i < 10 {
                    top.write_record([&row[0], &row[2], &row[4], &row[5]])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("rankings.csv"), e))?;
        top.flush().map_err(|e| Error::io(dir.join("top10.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("overlap.csv"))?;
        w.write_record(["a", "b", "spearman", "f1_significant", "n_significant_a", "n_significant_b"])?;
        for i in 0..rankings.len() {
            for j in i + 1..rankings.len() {
                let rho = compare_rankings(&rankings[i].1, &rankings[j].1, top_k)
                    .map_or(String::new(), |r| r.to_string());
                // significance sets exist only for regression targets
                let (f1, na, nb) = if i == 0 {
                    (String::new(), String::new(), String::new())
                } else {
                    let a = significant_set(&self.regressions[i - 1].results);
                    let b = significant_set(&self.regressions[j - 1].results);
                    (significance_overlap(&a, &b).to_string(), a.len().to_string(), b.len().to_string())
                };
                w.write_record([rankings[i].0.clone(), rankings[j].0.clone(), rho, f1, na, nb])?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("overlap.csv"), e))
    }
}
