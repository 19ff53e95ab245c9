//! Class-separability scatter pairs and the trace-ratio scores built on them.
//!
//! All three constructions decompose additively over features: the trace of
//! each scatter over a subset `U` is the sum of per-feature scalars. Scores are
//! therefore computed from [`FeatureScatter`] values in `O(n)` per feature,
//! and [`scatter`] materializes the full matrices only when asked.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DofsError, Result};

/// Score reported when the within-class scatter vanishes but the
/// between-class scatter does not.
pub const LARGE_SCORE: f64 = 1e12;
/// Within-class scatter at or below this counts as zero.
pub const ZERO_SCATTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterVariant {
    /// Prior-weighted class covariances against spread of class means.
    MeanVariance,
    /// Mean pairwise squared distances within and between classes.
    Kernel,
    /// Instance-level affinity matrices built from the labels alone.
    #[default]
    Label,
}

/// Dense class codes with their sizes. Construction fails with fewer than two
/// non-empty classes.
#[derive(Debug, Clone)]
pub struct ClassLayout {
    codes: Vec<usize>,
    counts: Vec<usize>,
}

impl ClassLayout {
    pub fn new(labels: &[usize]) -> Result<Self> {
        let mut present: Vec<usize> = labels.to_vec();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 {
            return Err(DofsError::InvalidInput(format!(
                "class separability needs at least 2 classes, got {}",
                present.len()
            )));
        }
        let codes: Vec<usize> = labels
            .iter()
            .map(|l| present.binary_search(l).expect("present"))
            .collect();
        let mut counts = vec![0; present.len()];
        for &c in &codes {
            counts[c] += 1;
        }
        Ok(Self { codes, counts })
    }

    pub fn n_instances(&self) -> usize {
        self.codes.len()
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    /// Per-class (mean, population variance) of one feature.
    fn moments(&self, f: &[f64]) -> Vec<(f64, f64)> {
        let c = self.n_classes();
        let mut sums = vec![0.0; c];
        for (&k, &v) in self.codes.iter().zip(f) {
            sums[k] += v;
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &n)| s / n as f64)
            .collect();
        let mut ss = vec![0.0; c];
        for (&k, &v) in self.codes.iter().zip(f) {
            ss[k] += (v - means[k]).powi(2);
        }
        means
            .into_iter()
            .zip(ss)
            .zip(&self.counts)
            .map(|((m, s), &n)| (m, s / n as f64))
            .collect()
    }
}

/// One feature's contribution to `tr(S_b)` and `tr(S_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureScatter {
    pub between: f64,
    pub within: f64,
}

impl FeatureScatter {
    pub fn ratio(&self) -> f64 {
        scatter_ratio(self.between, self.within)
    }
}

/// `between / within`, with [`LARGE_SCORE`] (or 0 when `between` is 0 too)
/// for vanishing within-class scatter.
pub fn scatter_ratio(between: f64, within: f64) -> f64 {
    if within.abs() <= ZERO_SCATTER {
        if between > 0.0 {
            LARGE_SCORE
        } else {
            0.0
        }
    } else {
        between / within
    }
}

/// Per-feature scatter scalars.
///
/// For the label variant the two affinity matrices are used through their
/// graph Laplacians: `f' Lap(S_w) f` is the between-class sum of squares and
/// `f' Lap(S_b) f` the within-class sum of squares. Used as raw quadratic
/// forms on a centered feature they would give `f' S_w f = -f' S_b f`, a
/// constant ratio of -1.
pub fn feature_scatter(f: &[f64], layout: &ClassLayout, variant: ScatterVariant) -> FeatureScatter {
    let m = layout.moments(f);
    let n = layout.n_instances() as f64;
    let c = layout.n_classes() as f64;
    match variant {
        ScatterVariant::MeanVariance => {
            let priors: Vec<f64> = layout.counts.iter().map(|&k| k as f64 / n).collect();
            let pooled: f64 = priors.iter().zip(&m).map(|(p, (mu, _))| p * mu).sum();
            FeatureScatter {
                within: priors.iter().zip(&m).map(|(p, (_, v))| p * v).sum(),
                between: m.iter().map(|(mu, _)| (mu - pooled).powi(2)).sum(),
            }
        }
        ScatterVariant::Kernel => {
            // sum over k,l in class j of (x_k - x_l)^2 equals 2 N_j^2 var_j
            let within = m.iter().map(|(_, v)| 2.0 * v).sum::<f64>() / c;
            let mut between = 0.0;
            for (i, (mi, vi)) in m.iter().enumerate() {
                for (j, (mj, vj)) in m.iter().enumerate() {
                    if i != j {
                        between += vi + vj + (mi - mj).powi(2);
                    }
                }
            }
            FeatureScatter {
                within,
                between: 2.0 * between / (c * (c - 1.0)),
            }
        }
        ScatterVariant::Label => {
            let total: f64 = layout
                .counts
                .iter()
                .zip(&m)
                .map(|(&k, (mu, _))| k as f64 * mu)
                .sum::<f64>()
                / n;
            FeatureScatter {
                between: layout
                    .counts
                    .iter()
                    .zip(&m)
                    .map(|(&k, (mu, _))| k as f64 * (mu - total).powi(2))
                    .sum(),
                within: layout
                    .counts
                    .iter()
                    .zip(&m)
                    .map(|(&k, (_, v))| k as f64 * v)
                    .sum(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scatter {
    Matrix(DMatrix<f64>),
    Scalar(f64),
}

impl Scatter {
    pub fn trace(&self) -> f64 {
        match self {
            Scatter::Matrix(m) => m.trace(),
            Scatter::Scalar(s) => *s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// Dense class index.
    pub class: usize,
    pub count: usize,
    pub prior: f64,
    pub mean: DVector<f64>,
    /// Population covariance (divides by the class count).
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPair {
    pub variant: ScatterVariant,
    pub within: Scatter,
    pub between: Scatter,
    pub class_stats: Vec<ClassStats>,
    pub pooled_mean: DVector<f64>,
    pub n_classes: usize,
}

fn class_stats(u: &DMatrix<f64>, layout: &ClassLayout) -> Vec<ClassStats> {
    let n = u.nrows() as f64;
    let k = u.ncols();
    (0..layout.n_classes())
        .map(|class| {
            let rows: Vec<usize> = (0..u.nrows()).filter(|&i| layout.codes[i] == class).collect();
            let sub = u.select_rows(&rows);
            let cnt = rows.len() as f64;
            let mean = DVector::from_fn(k, |j, _| sub.column(j).sum() / cnt);
            let centered = DMatrix::from_fn(rows.len(), k, |i, j| sub[(i, j)] - mean[j]);
            let covariance = centered.tr_mul(&centered) / cnt;
            ClassStats {
                class,
                count: rows.len(),
                prior: cnt / n,
                mean,
                covariance,
            }
        })
        .collect()
}

/// Materializes the scatter pair of the columns of `u` (`n x k`).
///
/// The label variant yields the `n x n` affinity matrices
/// `S_w[i,j] = 1/n - 1/n_c` and `S_b[i,j] = 1/n_c` when `y_i = y_j = c`,
/// and `1/n` resp. `0` otherwise.
pub fn scatter(u: &DMatrix<f64>, labels: &[usize], variant: ScatterVariant) -> Result<ScatterPair> {
    if u.nrows() != labels.len() {
        return Err(DofsError::InvalidInput(format!(
            "{} rows but {} labels",
            u.nrows(),
            labels.len()
        )));
    }
    let layout = ClassLayout::new(labels)?;
    let stats = class_stats(u, &layout);
    let k = u.ncols();
    let pooled_mean = stats
        .iter()
        .fold(DVector::zeros(k), |acc, s| acc + &s.mean * s.prior);
    let (within, between) = match variant {
        ScatterVariant::MeanVariance => {
            let sw = stats
                .iter()
                .fold(DMatrix::zeros(k, k), |acc, s| acc + &s.covariance * s.prior);
            let sb = stats.iter().fold(DMatrix::zeros(k, k), |acc, s| {
                let d = &s.mean - &pooled_mean;
                acc + &d * d.transpose()
            });
            (Scatter::Matrix(sw), Scatter::Matrix(sb))
        }
        ScatterVariant::Kernel => {
            let (w, b) = (0..k)
                .map(|j| feature_scatter(u.column(j).as_slice(), &layout, variant))
                .fold((0.0, 0.0), |(w, b), fs| (w + fs.within, b + fs.between));
            (Scatter::Scalar(w), Scatter::Scalar(b))
        }
        ScatterVariant::Label => {
            let n = labels.len();
            let nf = n as f64;
            let codes = layout.codes();
            let counts = layout.counts();
            let sw = DMatrix::from_fn(n, n, |i, j| {
                if codes[i] == codes[j] {
                    1.0 / nf - 1.0 / counts[codes[i]] as f64
                } else {
                    1.0 / nf
                }
            });
            let sb = DMatrix::from_fn(n, n, |i, j| {
                if codes[i] == codes[j] {
                    1.0 / counts[codes[i]] as f64
                } else {
                    0.0
                }
            });
            (Scatter::Matrix(sw), Scatter::Matrix(sb))
        }
    };
    Ok(ScatterPair {
        variant,
        within,
        between,
        class_stats: stats,
        pooled_mean,
        n_classes: layout.n_classes(),
    })
}

/// `s(f) = S_b(f) / S_w(f)`.
pub fn feature_score(f: &[f64], labels: &[usize], variant: ScatterVariant) -> Result<f64> {
    check_lengths(f.len(), labels.len())?;
    let layout = ClassLayout::new(labels)?;
    Ok(feature_scatter(f, &layout, variant).ratio())
}

/// `F(U) = tr(S_b(U)) / tr(S_w(U))` over the columns of `u`.
pub fn subset_score(u: &DMatrix<f64>, labels: &[usize], variant: ScatterVariant) -> Result<f64> {
    if u.ncols() == 0 {
        return Err(DofsError::InvalidInput("subset score needs a nonempty set".into()));
    }
    check_lengths(u.nrows(), labels.len())?;
    let layout = ClassLayout::new(labels)?;
    let (b, w) = (0..u.ncols())
        .map(|j| feature_scatter(u.column(j).as_slice(), &layout, variant))
        .fold((0.0, 0.0), |(b, w), fs| (b + fs.between, w + fs.within));
    Ok(scatter_ratio(b, w))
}

fn check_lengths(n: usize, labels: usize) -> Result<()> {
    if n != labels {
        return Err(DofsError::InvalidInput(format!(
            "feature length {n} does not match {labels} labels"
        )));
    }
    Ok(())
}
