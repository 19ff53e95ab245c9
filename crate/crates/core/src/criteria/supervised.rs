//! Supervised acceptance: trace-ratio gain and a t-test on feature scores.

use serde::{Deserialize, Serialize};

use super::scatter::{feature_scatter, scatter_ratio, ClassLayout, FeatureScatter, ScatterVariant, LARGE_SCORE};
use crate::error::{DofsError, Result};
use crate::stats;

/// Direction of the score t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSign {
    /// Accept when `s(f)` exceeds the mean history score, one-sided p < alpha.
    #[default]
    Exceeds,
    /// Accept when `(mean - s(f)) / (sd / sqrt(|U|)) > alpha`, the formula
    /// taken literally.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub variant: ScatterVariant,
    pub sign: TestSign,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            alpha: 0.05,
            variant: ScatterVariant::Label,
            sign: TestSign::Exceeds,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DofsError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DofsError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Running trace sums and score history of a feature set.
#[derive(Debug, Clone, Default)]
pub struct ScoredSet {
    between: f64,
    within: f64,
    len: usize,
    /// Scores of members, sentinel scores left out.
    history: Vec<f64>,
}

impl ScoredSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_columns(cols: &[&[f64]], layout: &ClassLayout, variant: ScatterVariant) -> Self {
        let mut set = Self::new();
        for c in cols {
            set.push(feature_scatter(c, layout, variant));
        }
        set
    }

    pub fn push(&mut self, fs: FeatureScatter) {
        self.between += fs.between;
        self.within += fs.within;
        self.len += 1;
        let s = fs.ratio();
        if s < LARGE_SCORE {
            self.history.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `F(U)`, with `F(empty) = 0`.
    pub fn score(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            scatter_ratio(self.between, self.within)
        }
    }

    /// `F(U + f) - F(U)`.
    pub fn gain(&self, fs: FeatureScatter) -> f64 {
        scatter_ratio(self.between + fs.between, self.within + fs.within) - self.score()
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum TTestOutcome {
    /// Fewer than two history scores, or no spread among them.
    InsufficientHistory,
    Tested { t: f64, p_value: f64, accepted: bool },
}

impl TTestOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, TTestOutcome::Tested { accepted: true, .. })
    }
}

/// t-test of a candidate score against a score history.
pub fn score_t_test(history: &[f64], score: f64, alpha: f64, sign: TestSign) -> TTestOutcome {
    let m = history.len();
    let sd = stats::sample_std(history);
    if m < 2 || !(sd > 0.0) {
        return TTestOutcome::InsufficientHistory;
    }
    let mu = stats::mean(history);
    let se = sd / (m as f64).sqrt();
    let df = (m - 1) as f64;
    match sign {
        TestSign::Exceeds => {
            let t = (score - mu) / se;
            let p_value = stats::student_t_sf(t, df);
            TTestOutcome::Tested {
                t,
                p_value,
                accepted: p_value < alpha,
            }
        }
        TestSign::Literal => {
            let t = (mu - score) / se;
            TTestOutcome::Tested {
                t,
                p_value: stats::student_t_sf(t, df),
                accepted: t > alpha,
            }
        }
    }
}

fn layout_for(n: usize, labels: &[usize]) -> Result<ClassLayout> {
    if n != labels.len() {
        return Err(DofsError::InvalidInput(format!(
            "feature length {n} does not match {} labels",
            labels.len()
        )));
    }
    ClassLayout::new(labels)
}

/// Accept iff `F(U + f) - F(U) > epsilon`.
pub fn criterion1(
    current: &[&[f64]],
    f: &[f64],
    labels: &[usize],
    variant: ScatterVariant,
    epsilon: f64,
) -> Result<bool> {
    let layout = layout_for(f.len(), labels)?;
    let set = ScoredSet::from_columns(current, &layout, variant);
    Ok(set.gain(feature_scatter(f, &layout, variant)) > epsilon)
}

/// t-test of `s(f)` against the scores of the current set.
pub fn criterion2(
    current: &[&[f64]],
    f: &[f64],
    labels: &[usize],
    variant: ScatterVariant,
    alpha: f64,
    sign: TestSign,
) -> Result<TTestOutcome> {
    let layout = layout_for(f.len(), labels)?;
    let set = ScoredSet::from_columns(current, &layout, variant);
    let s = feature_scatter(f, &layout, variant).ratio();
    Ok(score_t_test(set.history(), s, alpha, sign))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedDecision {
    /// Index into the incoming set.
    pub index: usize,
    pub score: f64,
    pub gain: f64,
    pub gain_accepted: bool,
    pub t_test: TTestOutcome,
}

impl SupervisedDecision {
    pub fn accepted(&self) -> bool {
        self.gain_accepted || self.t_test.accepted()
    }
}

/// Walks `incoming` in descending score order (ties by index) and accepts a
/// feature when its gain exceeds epsilon or its score passes the t-test.
/// Accepted features join the set immediately. Returns one decision per
/// incoming feature, in evaluation order.
pub fn supervised_decisions(
    incoming: &[&[f64]],
    current: &[&[f64]],
    labels: &[usize],
    cfg: &SupervisedConfig,
) -> Result<Vec<SupervisedDecision>> {
    cfg.validate()?;
    if incoming.is_empty() {
        return Ok(Vec::new());
    }
    let layout = layout_for(labels.len(), labels)?;
    for f in incoming.iter().chain(current) {
        if f.len() != labels.len() {
            return Err(DofsError::InvalidInput(format!(
                "feature length {} does not match {} labels",
                f.len(),
                labels.len()
            )));
        }
    }
    let mut set = ScoredSet::from_columns(current, &layout, cfg.variant);
    let mut scored: Vec<(usize, FeatureScatter)> = incoming
        .iter()
        .enumerate()
        .map(|(i, f)| (i, feature_scatter(f, &layout, cfg.variant)))
        .collect();
    scored.sort_by(|a, b| b.1.ratio().total_cmp(&a.1.ratio()).then(a.0.cmp(&b.0)));

    let mut out = Vec::with_capacity(scored.len());
    for (index, fs) in scored {
        let score = fs.ratio();
        let gain = set.gain(fs);
        let gain_accepted = gain > cfg.epsilon;
        let t_test = score_t_test(set.history(), score, cfg.alpha, cfg.sign);
        let d = SupervisedDecision {
            index,
            score,
            gain,
            gain_accepted,
            t_test,
        };
        if d.accepted() {
            set.push(fs);
        }
        out.push(d);
    }
    Ok(out)
}

/// Indices into `incoming` of the accepted features, in acceptance order.
pub fn supervised_select(
    incoming: &[&[f64]],
    current: &[&[f64]],
    labels: &[usize],
    cfg: &SupervisedConfig,
) -> Result<Vec<usize>> {
    Ok(supervised_decisions(incoming, current, labels, cfg)?
        .into_iter()
        .filter(SupervisedDecision::accepted)
        .map(|d| d.index)
        .collect())
}
