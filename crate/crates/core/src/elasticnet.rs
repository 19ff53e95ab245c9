//! Elastic-net regularized linear models fit by cyclic coordinate descent,
//! and coefficient-magnitude pruning.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DofsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean logistic loss on +-1 targets.
    #[default]
    Logistic,
    /// `(1/2n) * sum (y - yhat)^2`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetConfig {
    /// Penalty strength, also the default pruning threshold.
    pub lambda: f64,
    /// L1 share of the penalty; the L2 share is `1 - l1_ratio`.
    pub l1_ratio: f64,
    pub max_iter: usize,
    /// Convergence bound on the largest coefficient change in a sweep.
    pub tol: f64,
    pub loss: Loss,
    /// Pruning threshold when it should differ from `lambda`.
    pub prune_threshold: Option<f64>,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            l1_ratio: 0.5,
            max_iter: 10_000,
            tol: 1e-7,
            loss: Loss::Logistic,
            prune_threshold: None,
        }
    }
}

impl ElasticNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(DofsError::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(DofsError::InvalidConfig(format!(
                "l1 ratio must lie in [0, 1], got {}",
                self.l1_ratio
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(DofsError::InvalidConfig(
                "tol must be positive and max_iter at least 1".into(),
            ));
        }
        if let Some(t) = self.prune_threshold {
            if !(t >= 0.0) {
                return Err(DofsError::InvalidConfig(format!(
                    "prune threshold must be nonnegative, got {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        self.prune_threshold.unwrap_or(self.lambda)
    }

    fn l1(&self) -> f64 {
        self.lambda * self.l1_ratio
    }

    fn l2(&self) -> f64 {
        self.lambda * (1.0 - self.l1_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// For one-vs-rest fits, per feature the class coefficient of largest
    /// magnitude.
    pub coefficients: Vec<f64>,
    /// Zero for one-vs-rest fits; see `class_models`.
    pub intercept: f64,
    pub converged: bool,
    pub objective: f64,
    pub sweeps: usize,
    /// Objective before the first sweep and after each sweep.
    pub trace: Vec<f64>,
    /// Per-class binary models, empty for binary problems.
    pub class_models: Vec<FittedModel>,
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn log1p_exp(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn mean_loss(loss: Loss, y: &[f64], eta: &[f64]) -> f64 {
    let n = y.len() as f64;
    match loss {
        Loss::Squared => y.iter().zip(eta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * n),
        Loss::Logistic => y.iter().zip(eta).map(|(a, b)| log1p_exp(-a * b)).sum::<f64>() / n,
    }
}

fn penalty(cfg: &ElasticNetConfig, beta: &[f64]) -> f64 {
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    cfg.l1() * l1 + cfg.l2() * l2 / 2.0
}

/// Penalized objective at `(beta, intercept)`.
pub fn objective(x: &DMatrix<f64>, y: &[f64], beta: &[f64], intercept: f64, cfg: &ElasticNetConfig) -> f64 {
    let eta: Vec<f64> = (0..x.nrows())
        .map(|i| intercept + (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    mean_loss(cfg.loss, y, &eta) + penalty(cfg, beta)
}

/// Gradient of the mean loss with respect to each coefficient.
pub fn loss_gradient(x: &DMatrix<f64>, y: &[f64], beta: &[f64], intercept: f64, loss: Loss) -> Vec<f64> {
    let n = x.nrows() as f64;
    let eta: Vec<f64> = (0..x.nrows())
        .map(|i| intercept + (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let w: Vec<f64> = match loss {
        Loss::Squared => eta.iter().zip(y).map(|(e, t)| e - t).collect(),
        Loss::Logistic => eta.iter().zip(y).map(|(e, t)| -t * sigmoid(-t * e)).collect(),
    };
    (0..x.ncols())
        .map(|j| x.column(j).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / n)
        .collect()
}

/// Coordinate-descent state over a fixed design.
struct Solver<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    cfg: &'a ElasticNetConfig,
    beta: Vec<f64>,
    intercept: f64,
    eta: Vec<f64>,
    col_sq: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a [f64], cfg: &'a ElasticNetConfig) -> Self {
        let n = x.nrows() as f64;
        let col_sq = (0..x.ncols())
            .map(|j| x.column(j).iter().map(|v| v * v).sum::<f64>() / n)
            .collect();
        Self {
            x,
            y,
            cfg,
            beta: vec![0.0; x.ncols()],
            intercept: 0.0,
            eta: vec![0.0; x.nrows()],
            col_sq,
        }
    }

    fn objective(&self) -> f64 {
        mean_loss(self.cfg.loss, self.y, &self.eta) + penalty(self.cfg, &self.beta)
    }

    /// Loss value after moving coordinate `j` (None: intercept) by `delta`.
    fn moved_loss(&self, j: Option<usize>, delta: f64) -> f64 {
        let n = self.y.len() as f64;
        match j {
            Some(j) => {
                let col = self.x.column(j);
                self.y
                    .iter()
                    .zip(&self.eta)
                    .zip(col.iter())
                    .map(|((t, e), xv)| log1p_exp(-t * (e + delta * xv)))
                    .sum::<f64>()
                    / n
            }
            None => {
                self.y
                    .iter()
                    .zip(&self.eta)
                    .map(|(t, e)| log1p_exp(-t * (e + delta)))
                    .sum::<f64>()
                    / n
            }
        }
    }

    fn apply(&mut self, j: Option<usize>, delta: f64) {
        if delta == 0.0 {
            return;
        }
        match j {
            Some(j) => {
                self.beta[j] += delta;
                for (e, xv) in self.eta.iter_mut().zip(self.x.column(j).iter()) {
                    *e += delta * xv;
                }
            }
            None => {
                self.intercept += delta;
                self.eta.iter_mut().for_each(|e| *e += delta);
            }
        }
    }

    /// First and second derivative of the mean loss along coordinate `j`.
    fn derivatives(&self, j: Option<usize>) -> (f64, f64) {
        let n = self.y.len() as f64;
        let mut g = 0.0;
        let mut h = 0.0;
        for (i, (&t, &e)) in self.y.iter().zip(&self.eta).enumerate() {
            let xv = j.map_or(1.0, |j| self.x[(i, j)]);
            match self.cfg.loss {
                Loss::Squared => {
                    g += (e - t) * xv;
                    h += xv * xv;
                }
                Loss::Logistic => {
                    let p = sigmoid(t * e);
                    g += -t * (1.0 - p) * xv;
                    h += p * (1.0 - p) * xv * xv;
                }
            }
        }
        (g / n, h / n)
    }

    /// Penalized 1-D objective change of moving `j` from `old` to `new`,
    /// excluding the loss.
    fn penalty_at(&self, b: f64) -> f64 {
        self.cfg.l1() * b.abs() + self.cfg.l2() * b * b / 2.0
    }

    fn step_coefficient(&mut self, j: usize) -> f64 {
        let old = self.beta[j];
        let (g, h) = self.derivatives(Some(j));
        let (l1, l2) = (self.cfg.l1(), self.cfg.l2());
        let prox = |curv: f64| {
            if curv + l2 <= 0.0 {
                0.0
            } else {
                soft_threshold(curv * old - g, l1) / (curv + l2)
            }
        };
        let new = match self.cfg.loss {
            // the quadratic model is exact
            Loss::Squared => prox(h),
            Loss::Logistic => {
                let base = self.moved_loss(Some(j), 0.0) + self.penalty_at(old);
                let newton = prox(h);
                let trial = self.moved_loss(Some(j), newton - old) + self.penalty_at(newton);
                if h > 0.0 && trial <= base {
                    newton
                } else {
                    // logistic curvature is at most 1/4, so this majorizes
                    prox(0.25 * self.col_sq[j])
                }
            }
        };
        self.apply(Some(j), new - old);
        (new - old).abs()
    }

    fn step_intercept(&mut self) -> f64 {
        let (g, h) = self.derivatives(None);
        let delta = match self.cfg.loss {
            Loss::Squared => -g,
            Loss::Logistic => {
                let base = self.moved_loss(None, 0.0);
                let newton = if h > 0.0 { -g / h } else { 0.0 };
                if h > 0.0 && self.moved_loss(None, newton) <= base {
                    newton
                } else {
                    -g / 0.25
                }
            }
        };
        self.apply(None, delta);
        delta.abs()
    }
}

/// Fits against a real-valued response (`+-1` targets for logistic loss).
pub fn fit_elasticnet_response(x: &DMatrix<f64>, y: &[f64], cfg: &ElasticNetConfig) -> Result<FittedModel> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(DofsError::InvalidInput(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(DofsError::InvalidInput("no rows to fit".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(DofsError::NonFinite("elastic-net input"));
    }
    if cfg.loss == Loss::Logistic && y.iter().any(|&t| t != 1.0 && t != -1.0) {
        return Err(DofsError::InvalidInput("logistic targets must be +1 or -1".into()));
    }
    let mut s = Solver::new(x, y, cfg);
    let mut trace = vec![s.objective()];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_iter {
        sweeps += 1;
        let mut max_change = s.step_intercept();
        for j in 0..x.ncols() {
            max_change = max_change.max(s.step_coefficient(j));
        }
        trace.push(s.objective());
        if max_change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("elastic net did not converge in {} sweeps", cfg.max_iter);
    }
    Ok(FittedModel {
        coefficients: s.beta.clone(),
        intercept: s.intercept,
        converged,
        objective: *trace.last().expect("trace"),
        sweeps,
        trace,
        class_models: Vec::new(),
    })
}

/// Fits a classifier on class labels. Two classes map to -1/+1 (the larger
/// code is +1); more classes are fit one-vs-rest.
pub fn fit_elasticnet(x: &DMatrix<f64>, labels: &[usize], cfg: &ElasticNetConfig) -> Result<FittedModel> {
    if x.nrows() != labels.len() {
        return Err(DofsError::InvalidInput(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(DofsError::InvalidInput("elastic net needs at least 2 classes".into()));
    }
    let targets = |pos: usize| -> Vec<f64> {
        labels
            .iter()
            .map(|&l| if l == pos { 1.0 } else { -1.0 })
            .collect()
    };
    if classes.len() == 2 {
        return fit_elasticnet_response(x, &targets(classes[1]), cfg);
    }
    let models = classes
        .iter()
        .map(|&c| fit_elasticnet_response(x, &targets(c), cfg))
        .collect::<Result<Vec<_>>>()?;
    let coefficients = (0..x.ncols())
        .map(|j| {
            models
                .iter()
                .map(|m| m.coefficients[j])
                .fold(0.0f64, |acc, b| if b.abs() > acc.abs() { b } else { acc })
        })
        .collect();
    Ok(FittedModel {
        coefficients,
        intercept: 0.0,
        converged: models.iter().all(|m| m.converged),
        objective: models.iter().map(|m| m.objective).sum(),
        sweeps: models.iter().map(|m| m.sweeps).max().unwrap_or(0),
        trace: Vec::new(),
        class_models: models,
    })
}

/// Positions of the coefficients with `|beta| >= threshold`.
pub fn prune(model: &FittedModel, threshold: f64) -> Vec<usize> {
    model
        .coefficients
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() >= threshold)
        .map(|(j, _)| j)
        .collect()
}
