//! Cross-validated scoring of a selected feature subset, and report tables.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{DofsError, Result};
use crate::pipeline::{self, PipelineConfig, PipelineState};

/// Re-stratification attempts before giving up on a fold layout.
pub const STRATIFY_ATTEMPTS: usize = 5;
/// Probabilities are clipped to `[LOG_LOSS_EPS, 1 - LOG_LOSS_EPS]`.
pub const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub folds: usize,
    pub seed: u64,
    pub neighbors: usize,
    /// Inverse L2 strength of the logistic evaluator.
    pub c: f64,
    /// Rerun feature selection on each training fold.
    pub select_per_fold: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 1,
            neighbors: 3,
            c: 1.0,
            select_per_fold: false,
        }
    }
}

/// Fold id per instance. Each class is shuffled and dealt round-robin, so
/// fold class counts differ by at most one. Every training portion must
/// contain every class; otherwise the deal is retried with a new seed.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let n = labels.len();
    if folds < 2 || folds > n {
        return Err(DofsError::InvalidConfig(format!(
            "folds must lie in [2, {n}], got {folds}"
        )));
    }
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        classes.entry(y).or_default().push(i);
    }
    for attempt in 0..STRATIFY_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut assign = vec![0; n];
        let mut next = 0;
        for members in classes.values() {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            for i in m {
                assign[i] = next % folds;
                next += 1;
            }
        }
        let complete = (0..folds).all(|f| {
            classes
                .values()
                .all(|m| m.iter().any(|&i| assign[i] != f))
        });
        if complete {
            return Ok(assign);
        }
        log::debug!("fold layout {attempt} leaves a class out of training, retrying");
    }
    Err(DofsError::Stratification(STRATIFY_ATTEMPTS))
}

/// Standardizes `test` and `train` using the statistics of `train`.
fn standardize_pair(train: &mut DMatrix<f64>, test: &mut DMatrix<f64>) {
    let n = train.nrows() as f64;
    for j in 0..train.ncols() {
        let mean = train.column(j).sum() / n;
        let var = train.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { 1.0 / sd } else { 0.0 };
        for m in [&mut *train, &mut *test] {
            for v in m.column_mut(j).iter_mut() {
                *v = (*v - mean) * scale;
            }
        }
    }
}

/// k-nearest-neighbour majority vote. Tied votes go to the tied class with
/// the closest member.
fn knn_predict(train: &DMatrix<f64>, y: &[usize], test: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let k = k.min(train.nrows()).max(1);
    (0..test.nrows())
        .map(|t| {
            let mut d: Vec<(f64, usize)> = (0..train.nrows())
                .map(|i| {
                    let dist: f64 = (0..train.ncols())
                        .map(|j| (train[(i, j)] - test[(t, j)]).powi(2))
                        .sum();
                    (dist, i)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
            for (rank, &(_, i)) in d.iter().take(k).enumerate() {
                let e = votes.entry(y[i]).or_insert((0, rank));
                e.0 += 1;
            }
            votes
                .into_iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .map(|(c, _)| c)
                .expect("k >= 1")
        })
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic regression minimizing
/// `sum log-loss + ||beta||^2 / (2c)`, intercept unpenalized, by Newton's
/// method. Targets are 0/1. Returns `(intercept, beta)`.
pub fn fit_logistic_l2(x: &DMatrix<f64>, y: &[f64], c: f64) -> (f64, DVector<f64>) {
    let (n, p) = x.shape();
    let mut w = DVector::<f64>::zeros(p + 1);
    let reg = 1.0 / c;
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let penalized = |w: &DVector<f64>| -> f64 {
        let eta = &design * w;
        let loss: f64 = eta
            .iter()
            .zip(y)
            .map(|(&e, &t)| {
                let z = if t > 0.5 { -e } else { e };
                if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            })
            .sum();
        loss + 0.5 * reg * w.rows(1, p).norm_squared()
    };
    let mut obj = penalized(&w);
    for _ in 0..100 {
        let eta = &design * &w;
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_fn(n, |i, _| prob[i] - y[i]);
        let mut grad = design.tr_mul(&resid);
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= prob[i] * (1.0 - prob[i]);
        }
        let mut hess = design.tr_mul(&weighted);
        for j in 1..=p {
            grad[j] += reg * w[j];
            hess[(j, j)] += reg;
        }
        hess[(0, 0)] += 1e-10;
        let Some(step) = hess.clone().cholesky().map(|ch| ch.solve(&grad)) else {
            break;
        };
        // backtracking keeps every iterate a descent step
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &w - &step * t;
            let o = penalized(&cand);
            if o <= obj {
                w = cand;
                improved = obj - o > 1e-12 * obj.abs().max(1.0);
                obj = o;
                break;
            }
            t *= 0.5;
        }
        if !improved || grad.amax() < 1e-10 {
            break;
        }
    }
    (w[0], w.rows(1, p).into_owned())
}

/// Class probabilities (rows sum to one). Two classes use a single binary
/// model; more use normalized one-vs-rest scores.
fn logistic_proba(train: &DMatrix<f64>, y: &[usize], test: &DMatrix<f64>, classes: usize, c: f64) -> DMatrix<f64> {
    let score = |pos: usize| -> Vec<f64> {
        let t: Vec<f64> = y.iter().map(|&l| (l == pos) as u8 as f64).collect();
        let (b0, beta) = fit_logistic_l2(train, &t, c);
        let eta = test * &beta;
        eta.iter().map(|e| sigmoid(e + b0)).collect()
    };
    let m = test.nrows();
    if classes == 2 {
        let p1 = score(1);
        return DMatrix::from_fn(m, 2, |i, k| if k == 1 { p1[i] } else { 1.0 - p1[i] });
    }
    let cols: Vec<Vec<f64>> = (0..classes).map(score).collect();
    DMatrix::from_fn(m, classes, |i, k| {
        let s: f64 = cols.iter().map(|c| c[i]).sum();
        if s > 0.0 {
            cols[k][i] / s
        } else {
            1.0 / classes as f64
        }
    })
}

/// Mean negative log-likelihood of the true classes.
pub fn log_loss(proba: &DMatrix<f64>, truth: &[usize]) -> f64 {
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(i, &c)| -proba[(i, c)].clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS).ln())
        .sum();
    total / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_test: usize,
    pub n_selected: usize,
    /// Percent.
    pub logistic_accuracy: f64,
    pub knn_accuracy: f64,
    pub log_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Logistic evaluator, mean fold accuracy in percent.
    pub accuracy: f64,
    pub knn_accuracy: f64,
    pub log_loss: f64,
    pub folds: Vec<FoldMetrics>,
}

fn split(d: &Dataset, assign: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..d.n_instances()).partition(|&i| assign[i] != fold)
}

fn score_fold(
    d: &Dataset,
    y: &[usize],
    classes: usize,
    train_rows: &[usize],
    test_rows: &[usize],
    selected: &[usize],
    cfg: &EvalConfig,
    fold: usize,
) -> FoldMetrics {
    let cols = d.select_columns(selected);
    let mut train = cols.select_rows(train_rows);
    let mut test = cols.select_rows(test_rows);
    standardize_pair(&mut train, &mut test);
    let ytr: Vec<usize> = train_rows.iter().map(|&i| y[i]).collect();
    let yte: Vec<usize> = test_rows.iter().map(|&i| y[i]).collect();

    let proba = logistic_proba(&train, &ytr, &test, classes, cfg.c);
    let pred_lr: Vec<usize> = (0..test.nrows())
        .map(|i| {
            (0..classes)
                .max_by(|&a, &b| proba[(i, a)].total_cmp(&proba[(i, b)]).then(b.cmp(&a)))
                .expect("classes")
        })
        .collect();
    let pred_knn = knn_predict(&train, &ytr, &test, cfg.neighbors);
    let acc = |pred: &[usize]| {
        100.0 * pred.iter().zip(&yte).filter(|(a, b)| a == b).count() as f64 / yte.len() as f64
    };
    FoldMetrics {
        fold,
        n_test: yte.len(),
        n_selected: selected.len(),
        logistic_accuracy: acc(&pred_lr),
        knn_accuracy: acc(&pred_knn),
        log_loss: log_loss(&proba, &yte),
    }
}

fn summarize(folds: Vec<FoldMetrics>) -> Evaluation {
    let k = folds.len() as f64;
    Evaluation {
        accuracy: folds.iter().map(|f| f.logistic_accuracy).sum::<f64>() / k,
        knn_accuracy: folds.iter().map(|f| f.knn_accuracy).sum::<f64>() / k,
        log_loss: folds.iter().map(|f| f.log_loss).sum::<f64>() / k,
        folds,
    }
}

/// Stratified k-fold scores of the columns `selected`.
pub fn evaluate(d: &Dataset, selected: &[usize], cfg: &EvalConfig) -> Result<Evaluation> {
    if selected.is_empty() {
        return Err(DofsError::InvalidInput(
            "cannot evaluate an empty feature selection".into(),
        ));
    }
    if let Some(&bad) = selected.iter().find(|&&j| j >= d.n_features()) {
        return Err(DofsError::InvalidInput(format!(
            "feature {bad} out of range for {} features",
            d.n_features()
        )));
    }
    let y = d.require_supervised()?;
    let assign = stratified_folds(y, cfg.folds, cfg.seed)?;
    let classes = d.n_classes();
    let folds = (0..cfg.folds)
        .map(|f| {
            let (tr, te) = split(d, &assign, f);
            score_fold(d, y, classes, &tr, &te, selected, cfg, f)
        })
        .collect();
    Ok(summarize(folds))
}

/// Like [`evaluate`], but the pipeline selects features on each training
/// fold. A fold whose selection comes out empty is an error.
pub fn evaluate_per_fold(d: &Dataset, pcfg: &PipelineConfig, cfg: &EvalConfig) -> Result<Evaluation> {
    let y = d.require_supervised()?;
    let assign = stratified_folds(y, cfg.folds, cfg.seed)?;
    let classes = d.n_classes();
    let mut folds = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let (tr, te) = split(d, &assign, f);
        let selected = pipeline::run(&d.select_rows(&tr), pcfg)?.selected_indices();
        if selected.is_empty() {
            return Err(DofsError::InvalidInput(format!(
                "selection on training fold {f} is empty"
            )));
        }
        folds.push(score_fold(d, y, classes, &tr, &te, &selected, cfg, f));
    }
    Ok(summarize(folds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub dataset: String,
    pub mode: String,
    pub n_selected: usize,
    pub selected: Vec<usize>,
    pub feature_names: Vec<String>,
    pub accuracy: f64,
    pub knn_accuracy: f64,
    pub log_loss: f64,
    pub folds: Vec<FoldMetrics>,
    /// Wall-clock time of selection plus evaluation.
    pub seconds: f64,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl SelectionReport {
    /// Copy with the wall-clock time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| DofsError::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DofsError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Runs the pipeline on `d`, then evaluates its selection.
pub fn select_and_evaluate(
    d: &Dataset,
    pcfg: &PipelineConfig,
    ecfg: &EvalConfig,
) -> Result<(PipelineState, SelectionReport)> {
    let start = Instant::now();
    let state = pipeline::run(d, pcfg)?;
    let selected = state.selected_indices();
    let eval = if ecfg.select_per_fold {
        evaluate_per_fold(d, pcfg, ecfg)?
    } else {
        evaluate(d, &selected, ecfg)?
    };
    let report = SelectionReport {
        dataset: d.name().to_string(),
        mode: pcfg.mode.as_str().to_string(),
        n_selected: selected.len(),
        feature_names: selected.iter().map(|&j| d.feature_names()[j].clone()).collect(),
        selected,
        accuracy: eval.accuracy,
        knn_accuracy: eval.knn_accuracy,
        log_loss: eval.log_loss,
        folds: eval.folds,
        seconds: start.elapsed().as_secs_f64(),
        seed: pcfg.seed,
        config: serde_json::json!({ "pipeline": pcfg, "evaluation": ecfg }),
    };
    Ok((state, report))
}

/// Dataset x mode grid of `(n_selected, accuracy)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub modes: Vec<String>,
    pub rows: Vec<(String, Vec<Option<(usize, f64)>>)>,
}

/// Pivots reports into a table, modes in first-seen order. A second report
/// for an already filled (dataset, mode) cell starts a new row.
pub fn compare_runs(reports: &[SelectionReport]) -> ComparisonTable {
    let mut modes: Vec<String> = Vec::new();
    for r in reports {
        if !modes.contains(&r.mode) {
            modes.push(r.mode.clone());
        }
    }
    let mut rows: Vec<(String, Vec<Option<(usize, f64)>>)> = Vec::new();
    for r in reports {
        let m = modes.iter().position(|x| x == &r.mode).expect("mode");
        let slot = rows
            .iter()
            .rposition(|(name, cells)| name == &r.dataset && cells[m].is_none());
        let row = match slot {
            Some(i) => i,
            None => {
                rows.push((r.dataset.clone(), vec![None; modes.len()]));
                rows.len() - 1
            }
        };
        rows[row].1[m] = Some((r.n_selected, r.accuracy));
    }
    ComparisonTable { modes, rows }
}

impl ComparisonTable {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["dataset".to_string()];
        for m in &self.modes {
            h.push(format!("{m}_dim"));
            h.push(format!("{m}_acc"));
        }
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(name, cells)| {
                let mut r = vec![name.clone()];
                for c in cells {
                    match c {
                        Some((n, a)) => {
                            r.push(n.to_string());
                            r.push(format!("{a:.2}"));
                        }
                        None => {
                            r.push(String::new());
                            r.push(String::new());
                        }
                    }
                }
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for r in self.cells() {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let body = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| {
                body.iter()
                    .map(|r| r[j].len())
                    .chain(std::iter::once(header[j].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |r: &[String]| {
            r.iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&header);
        out.push('\n');
        for r in &body {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

pub const RESULTS_HEADER: [&str; 7] = ["dataset", "mode", "n_selected", "accuracy", "log_loss", "seconds", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub mode: String,
    pub n_selected: usize,
    pub accuracy: f64,
    pub log_loss: f64,
    pub seconds: f64,
    pub seed: u64,
}

impl From<&SelectionReport> for ResultRow {
    fn from(r: &SelectionReport) -> Self {
        Self {
            dataset: r.dataset.clone(),
            mode: r.mode.clone(),
            n_selected: r.n_selected,
            accuracy: r.accuracy,
            log_loss: r.log_loss,
            seconds: r.seconds,
            seed: r.seed,
        }
    }
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| DofsError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| DofsError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Merges `rows` into the results CSV at `path`, replacing rows with the same
/// (dataset, mode, seed) in place and appending the rest.
pub fn upsert_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    let path = path.as_ref();
    let mut all = if path.exists() { read_results(path)? } else { Vec::new() };
    for r in rows {
        match all
            .iter_mut()
            .find(|x| x.dataset == r.dataset && x.mode == r.mode && x.seed == r.seed)
        {
            Some(x) => *x = r.clone(),
            None => all.push(r.clone()),
        }
    }
    let csv_err = |e: csv::Error| DofsError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in &all {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DofsError::io(path, e))
}
