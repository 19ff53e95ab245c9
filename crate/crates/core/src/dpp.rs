//! Determinantal point processes over feature vectors.
//!
//! An [`LEnsemble`] assigns every subset `Y` of its items the probability
//! `det(L_Y) / det(L + I)`. Items carry global feature ids so that an
//! ensemble built over "selected features plus arriving group" can be
//! conditioned on the selected ones and sampled over the group alone.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DofsError, Result};
use crate::stats;

/// Relative asymmetry tolerated before a matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_TOL, 0)` are clamped to zero; lower ones are errors.
pub const PSD_TOL: f64 = 1e-8;
/// Relative Frobenius error allowed when reconstructing `L` from its spectrum.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
/// Minors whose smallest eigenvalue is at or below this are singular.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Rejection attempts made by [`sample_truncated`] before switching to an
/// exact k-DPP draw.
pub const TRUNCATION_ATTEMPTS: usize = 50;

/// Similarity between two feature vectors, evaluated on z-scored columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-gamma * ||a - b||^2)`; `gamma = None` means `1 / n`.
    Rbf { gamma: Option<f64> },
    /// Inner product divided by `n`, i.e. the Pearson correlation.
    Linear,
    /// Squared Pearson correlation.
    Correlation,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::Rbf { gamma: None }
    }
}

/// Symmetric PSD similarity matrix with a cached eigendecomposition.
#[derive(Debug, Clone)]
pub struct LEnsemble {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    item_ids: Vec<usize>,
}

impl LEnsemble {
    /// Validates and decomposes `matrix`; row `i` corresponds to `item_ids[i]`.
    pub fn new(matrix: DMatrix<f64>, item_ids: Vec<usize>) -> Result<Self> {
        let m = matrix.nrows();
        if matrix.ncols() != m {
            return Err(DofsError::InvalidInput(format!(
                "L must be square, got {}x{}",
                m,
                matrix.ncols()
            )));
        }
        if item_ids.len() != m {
            return Err(DofsError::InvalidInput(format!(
                "{} item ids for a {m}x{m} matrix",
                item_ids.len()
            )));
        }
        let mut sorted = item_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != m {
            return Err(DofsError::InvalidInput("item ids must be distinct".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(DofsError::NonFinite("L-ensemble matrix"));
        }
        if m == 0 {
            return Ok(Self {
                matrix,
                eigenvalues: DVector::zeros(0),
                eigenvectors: DMatrix::zeros(0, 0),
                item_ids,
            });
        }

        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(DofsError::NotSymmetric(asym));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;

        let eig = SymmetricEigen::new(matrix.clone());
        let lmax = eig.eigenvalues.max().abs().max(1.0);
        let mut eigenvalues = eig.eigenvalues;
        for v in eigenvalues.iter_mut() {
            if *v < -PSD_TOL * lmax {
                return Err(DofsError::NotPsd(*v));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let eigenvectors = eig.eigenvectors;
        let rebuilt = &eigenvectors * DMatrix::from_diagonal(&eigenvalues) * eigenvectors.transpose();
        // same unit floor as the symmetry and PSD checks, so clamping the
        // rounding noise of a near-zero matrix is not reported as an error
        let denom = matrix.norm().max(1.0);
        let err = (&rebuilt - &matrix).norm() / denom;
        if err > RECONSTRUCTION_TOL {
            return Err(DofsError::Reconstruction(err));
        }
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
            item_ids,
        })
    }

    /// Ensemble whose item ids are `0..M`.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let ids = (0..matrix.nrows()).collect();
        Self::new(matrix, ids)
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }

    /// `log det(L + I)`.
    pub fn log_normalizer(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.ln_1p()).sum()
    }

    /// Expected sample cardinality, `sum(lambda / (1 + lambda))`.
    pub fn expected_size(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l / (1.0 + l)).sum()
    }

    fn local_index(&self, id: usize) -> Result<usize> {
        self.item_ids
            .iter()
            .position(|&x| x == id)
            .ok_or(DofsError::UnknownItem(id))
    }

    fn local_indices(&self, ids: &[usize]) -> Result<Vec<usize>> {
        let mut idx = ids
            .iter()
            .map(|&id| self.local_index(id))
            .collect::<Result<Vec<_>>>()?;
        idx.sort_unstable();
        idx.dedup();
        Ok(idx)
    }

    fn ids_of(&self, local: &[usize]) -> Vec<usize> {
        let mut ids: Vec<usize> = local.iter().map(|&i| self.item_ids[i]).collect();
        ids.sort_unstable();
        ids
    }

    /// Greedy pivoted-Cholesky pass over `candidates` (item ids, in order):
    /// keeps each item whose residual variance given the items kept so far
    /// exceeds `tol` times its diagonal entry. The kept set has a
    /// nonsingular minor, so conditioning on it is always possible.
    pub fn independent_items(&self, candidates: &[usize], tol: f64) -> Result<Vec<usize>> {
        let idx: Vec<usize> = candidates
            .iter()
            .map(|&id| self.local_index(id))
            .collect::<Result<_>>()?;
        let mut kept: Vec<usize> = Vec::new();
        // rows of the lower Cholesky factor restricted to kept items
        let mut factor: Vec<Vec<f64>> = Vec::new();
        for &i in &idx {
            let diag = self.matrix[(i, i)];
            if diag <= 0.0 {
                continue;
            }
            let mut row = Vec::with_capacity(kept.len() + 1);
            for (a, &k) in kept.iter().enumerate() {
                let dot: f64 = (0..a).map(|b| row[b] * factor[a][b]).sum();
                row.push((self.matrix[(i, k)] - dot) / factor[a][a]);
            }
            let resid = diag - row.iter().map(|v| v * v).sum::<f64>();
            if resid > tol * diag {
                row.push(resid.sqrt());
                factor.push(row);
                kept.push(i);
            }
        }
        Ok(kept.iter().map(|&i| self.item_ids[i]).collect())
    }

    /// Reusable sampler that avoids per-draw allocation of scratch space.
    pub fn sampler(&self) -> SpectralSampler<'_> {
        SpectralSampler::new(self)
    }
}

/// `K = (L + I)^{-1} L`, the inclusion-probability kernel.
#[derive(Debug, Clone)]
pub struct MarginalKernel {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub item_ids: Vec<usize>,
}

impl MarginalKernel {
    /// `P(id in Y) = K_ii`.
    pub fn inclusion_probability(&self, id: usize) -> Result<f64> {
        let i = self
            .item_ids
            .iter()
            .position(|&x| x == id)
            .ok_or(DofsError::UnknownItem(id))?;
        Ok(self.matrix[(i, i)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSample {
    /// Sorted item ids.
    pub items: Vec<usize>,
    pub log_prob: f64,
}

/// Builds an L-ensemble over the columns of `features` (`n x M`). Columns are
/// z-scored first; a constant column has unit self-similarity and zero
/// similarity to everything else.
pub fn build_similarity(
    features: &DMatrix<f64>,
    kernel: Kernel,
    item_ids: Vec<usize>,
) -> Result<LEnsemble> {
    let (n, m) = features.shape();
    if m == 0 {
        return Err(DofsError::InvalidInput(
            "similarity needs at least one feature".into(),
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(DofsError::NonFinite("feature matrix"));
    }
    let mut z = features.clone();
    let mut constant = vec![false; m];
    for (j, col) in z.as_mut_slice().chunks_mut(n).enumerate() {
        stats::standardize_in_place(col);
        constant[j] = col.iter().all(|&v| v == 0.0);
    }
    let gram = z.tr_mul(&z);
    let nf = n as f64;
    let gamma = match kernel {
        Kernel::Rbf { gamma: Some(g) } if g.is_finite() && g > 0.0 => g,
        Kernel::Rbf { gamma: Some(g) } => {
            return Err(DofsError::InvalidConfig(format!(
                "rbf gamma must be positive, got {g}"
            )))
        }
        Kernel::Rbf { gamma: None } => 1.0 / nf,
        _ => 0.0,
    };
    let l = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            return 1.0;
        }
        if constant[i] || constant[j] {
            return 0.0;
        }
        match kernel {
            Kernel::Rbf { .. } => {
                let d2 = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
                (-gamma * d2).exp()
            }
            Kernel::Linear => gram[(i, j)] / nf,
            Kernel::Correlation => {
                let r = gram[(i, j)] / nf;
                r * r
            }
        }
    });
    LEnsemble::new(l, item_ids)
}

/// Shares eigenvectors with `L`; each eigenvalue maps to `lambda / (1 + lambda)`.
pub fn marginal_kernel(e: &LEnsemble) -> MarginalKernel {
    let mapped = e.eigenvalues.map(|l| l / (1.0 + l));
    let matrix = &e.eigenvectors * DMatrix::from_diagonal(&mapped) * e.eigenvectors.transpose();
    MarginalKernel {
        matrix,
        eigenvalues: mapped,
        item_ids: e.item_ids.clone(),
    }
}

fn log_det_psd(minor: DMatrix<f64>) -> f64 {
    if minor.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(minor);
    if eig.eigenvalues.iter().any(|&v| v <= SINGULAR_TOL) {
        return f64::NEG_INFINITY;
    }
    eig.eigenvalues.iter().map(|v| v.ln()).sum()
}

/// `log det(L_Y) - log det(L + I)`; `-inf` when `L_Y` is singular.
pub fn subset_log_prob(e: &LEnsemble, items: &[usize]) -> Result<f64> {
    let idx = e.local_indices(items)?;
    let minor = e.matrix.select_rows(&idx).select_columns(&idx);
    Ok(log_det_psd(minor) - e.log_normalizer())
}

/// Ensemble over the items not in `included` whose subset probabilities are
/// `P(Y = included ∪ B | included ⊆ Y)`.
///
/// Computed as `([(L + I_c)^{-1}]_c)^{-1} - I`, where `c` is the complement
/// of `included` and `I_c` the identity restricted to it.
pub fn condition_on(e: &LEnsemble, included: &[usize]) -> Result<LEnsemble> {
    let inc = e.local_indices(included)?;
    if inc.is_empty() {
        return Ok(e.clone());
    }
    let inc_minor = e.matrix.select_rows(&inc).select_columns(&inc);
    let inc_eig = SymmetricEigen::new(inc_minor).eigenvalues;
    let inc_scale = inc_eig.max().max(1.0);
    if inc_eig.min() <= SINGULAR_TOL * inc_scale {
        return Err(DofsError::ZeroProbabilityCondition);
    }
    let m = e.len();
    let rest: Vec<usize> = (0..m).filter(|i| inc.binary_search(i).is_err()).collect();
    let rest_ids: Vec<usize> = rest.iter().map(|&i| e.item_ids[i]).collect();
    if rest.is_empty() {
        return LEnsemble::new(DMatrix::zeros(0, 0), rest_ids);
    }

    let mut shifted = e.matrix.clone();
    for &i in &rest {
        shifted[(i, i)] += 1.0;
    }
    let inv = shifted
        .cholesky()
        .ok_or(DofsError::ZeroProbabilityCondition)?
        .inverse();
    let block = inv.select_rows(&rest).select_columns(&rest);
    let block_inv = block
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| block.try_inverse())
        .ok_or(DofsError::ZeroProbabilityCondition)?;
    let k = rest.len();
    let cond = block_inv - DMatrix::<f64>::identity(k, k);
    let cond = (&cond + cond.transpose()) * 0.5;
    LEnsemble::new(cond, rest_ids)
}

/// Scratch space for repeated exact draws from one ensemble.
pub struct SpectralSampler<'a> {
    ens: &'a LEnsemble,
    inclusion: Vec<f64>,
    basis: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> SpectralSampler<'a> {
    fn new(ens: &'a LEnsemble) -> Self {
        let m = ens.len();
        Self {
            ens,
            inclusion: ens.eigenvalues.iter().map(|l| l / (1.0 + l)).collect(),
            basis: Vec::with_capacity(m * m),
            weights: vec![0.0; m],
        }
    }

    /// One exact DPP draw; returns sorted item ids.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let m = self.ens.len();
        self.basis.clear();
        let mut k = 0;
        for (c, &p) in self.inclusion.iter().enumerate() {
            if rng.random::<f64>() < p {
                self.basis
                    .extend_from_slice(self.ens.eigenvectors.column(c).as_slice());
                k += 1;
            }
        }
        let local = project_select(&mut self.basis, &mut self.weights, m, k, rng);
        self.ens.ids_of(&local)
    }

    /// Exact k-DPP draw (cardinality fixed at `k`, reduced to the rank of `L`
    /// when `k` exceeds it).
    pub fn draw_k<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Vec<usize> {
        let m = self.ens.len();
        let chosen = select_k_eigenvectors(self.ens.eigenvalues.as_slice(), k, rng);
        self.basis.clear();
        for &c in &chosen {
            self.basis
                .extend_from_slice(self.ens.eigenvectors.column(c).as_slice());
        }
        let local = project_select(&mut self.basis, &mut self.weights, m, chosen.len(), rng);
        self.ens.ids_of(&local)
    }
}

/// Second phase of spectral sampling. `basis` holds `k` orthonormal columns
/// of length `m` (column-major); one item is drawn per column, after which
/// the basis is projected onto the complement of that item's coordinate.
fn project_select<R: Rng + ?Sized>(
    basis: &mut Vec<f64>,
    weights: &mut [f64],
    m: usize,
    mut k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(k);
    while k > 0 {
        let mut total = 0.0;
        for (r, w) in weights.iter_mut().enumerate() {
            *w = if picked.contains(&r) {
                0.0
            } else {
                (0..k).map(|c| basis[c * m + r].powi(2)).sum()
            };
            total += *w;
        }
        let mut u = rng.random::<f64>() * total;
        let mut item = m;
        for (r, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                item = r;
                if u < w {
                    break;
                }
                u -= w;
            }
        }
        if item == m {
            break;
        }
        picked.push(item);

        let pivot = (0..k)
            .max_by(|&a, &b| {
                basis[a * m + item]
                    .abs()
                    .total_cmp(&basis[b * m + item].abs())
            })
            .expect("k > 0");
        let pv = basis[pivot * m + item];
        for c in 0..k {
            if c == pivot {
                continue;
            }
            let f = basis[c * m + item] / pv;
            for r in 0..m {
                basis[c * m + r] -= f * basis[pivot * m + r];
            }
        }
        // drop the pivot column by moving the last one into its slot
        if pivot != k - 1 {
            for r in 0..m {
                basis[pivot * m + r] = basis[(k - 1) * m + r];
            }
        }
        k -= 1;
        basis.truncate(k * m);

        for c in 0..k {
            for prev in 0..c {
                let dot: f64 = (0..m).map(|r| basis[c * m + r] * basis[prev * m + r]).sum();
                for r in 0..m {
                    basis[c * m + r] -= dot * basis[prev * m + r];
                }
            }
            let norm = (0..m).map(|r| basis[c * m + r].powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for r in 0..m {
                    basis[c * m + r] /= norm;
                }
            }
        }
    }
    picked.sort_unstable();
    picked
}

/// Elementary symmetric polynomial table: `e[l][j] = e_l(lambda_1..lambda_j)`.
pub fn elementary_symmetric(eigenvalues: &[f64], k: usize) -> Vec<Vec<f64>> {
    let m = eigenvalues.len();
    let mut e = vec![vec![0.0; m + 1]; k + 1];
    e[0].iter_mut().for_each(|v| *v = 1.0);
    for l in 1..=k {
        for j in 1..=m {
            e[l][j] = e[l][j - 1] + eigenvalues[j - 1] * e[l - 1][j - 1];
        }
    }
    e
}

fn select_k_eigenvectors<R: Rng + ?Sized>(eigenvalues: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let scale = eigenvalues.iter().cloned().fold(0.0, f64::max);
    if scale <= 0.0 || k == 0 {
        return Vec::new();
    }
    let rank = eigenvalues.iter().filter(|&&v| v > SINGULAR_TOL * scale).count();
    let k = k.min(rank);
    let lam: Vec<f64> = eigenvalues.iter().map(|v| v / scale).collect();
    let e = elementary_symmetric(&lam, k);
    let mut chosen = Vec::with_capacity(k);
    let mut l = k;
    for j in (1..=lam.len()).rev() {
        if l == 0 {
            break;
        }
        let p = if j == l {
            1.0
        } else {
            lam[j - 1] * e[l - 1][j - 1] / e[l][j]
        };
        if rng.random::<f64>() < p {
            chosen.push(j - 1);
            l -= 1;
        }
    }
    chosen
}

fn with_log_prob(e: &LEnsemble, items: Vec<usize>) -> SubsetSample {
    let log_prob = subset_log_prob(e, &items).expect("items come from the ensemble");
    SubsetSample { items, log_prob }
}

/// Exact DPP draw: each eigenvector is kept with probability
/// `lambda / (1 + lambda)`, then one item per kept eigenvector is chosen by
/// successive orthogonal projection.
pub fn sample<R: Rng + ?Sized>(e: &LEnsemble, rng: &mut R) -> SubsetSample {
    let items = e.sampler().draw(rng);
    with_log_prob(e, items)
}

/// Exact k-DPP draw (the DPP conditioned on `|Y| = k`).
pub fn sample_k<R: Rng + ?Sized>(e: &LEnsemble, k: usize, rng: &mut R) -> SubsetSample {
    let items = e.sampler().draw_k(k, rng);
    with_log_prob(e, items)
}

/// DPP draw restricted to `|Y| <= k_max`: rejection from [`sample`] for up to
/// [`TRUNCATION_ATTEMPTS`] tries, then an exact k-DPP draw at `k = k_max`.
pub fn sample_truncated<R: Rng + ?Sized>(e: &LEnsemble, k_max: usize, rng: &mut R) -> SubsetSample {
    if k_max == 0 {
        return with_log_prob(e, Vec::new());
    }
    let mut sampler = e.sampler();
    if k_max >= e.len() {
        let items = sampler.draw(rng);
        return with_log_prob(e, items);
    }
    for _ in 0..TRUNCATION_ATTEMPTS {
        let items = sampler.draw(rng);
        if items.len() <= k_max {
            return with_log_prob(e, items);
        }
    }
    let items = sampler.draw_k(k_max, rng);
    with_log_prob(e, items)
}

/// Writes a matrix as headerless CSV.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| DofsError::io(path, e))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(f, "{}", row.join(",")).map_err(|e| DofsError::io(path, e))?;
    }
    Ok(())
}

/// Reads a headerless square CSV matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DofsError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().map_err(|_| DofsError::Parse {
                    row: r + 1,
                    column: c.to_string(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(DofsError::InvalidInput(format!(
            "{} is not a square matrix",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
