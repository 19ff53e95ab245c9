//! Brute-force reference computations shared by the integration tests.
//! Everything here is deliberately written the slow, direct way and shares
//! no code with the library routines it checks.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;

/// Random PSD matrix `B B'` with `B` of size `m x rank`, entries in [-1, 1],
/// scaled by `scale`.
pub fn random_psd<R: Rng>(rng: &mut R, m: usize, rank: usize, scale: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, rank, |_, _| rng.random_range(-1.0..1.0));
    (&b * b.transpose()) * scale
}

/// All subsets of `0..m` as sorted index lists, ordered by bitmask.
pub fn subsets(m: usize) -> Vec<Vec<usize>> {
    (0..1usize << m)
        .map(|mask| (0..m).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

/// `det(L_Y)` by LU decomposition; 1 for the empty set.
pub fn minor_det(l: &DMatrix<f64>, items: &[usize]) -> f64 {
    if items.is_empty() {
        return 1.0;
    }
    l.select_rows(items).select_columns(items).determinant()
}

/// `P(Y)` for every subset, by explicit normalization over all minors.
pub fn enumerate_probs(l: &DMatrix<f64>) -> Vec<(Vec<usize>, f64)> {
    let all = subsets(l.nrows());
    let weights: Vec<f64> = all.iter().map(|s| minor_det(l, s).max(0.0)).collect();
    let z: f64 = weights.iter().sum();
    all.into_iter().zip(weights).map(|(s, w)| (s, w / z)).collect()
}

/// `P(i in Y)` for every item.
pub fn inclusion_probs(l: &DMatrix<f64>) -> Vec<f64> {
    let mut p = vec![0.0; l.nrows()];
    for (s, w) in enumerate_probs(l) {
        for i in s {
            p[i] += w;
        }
    }
    p
}

/// `P(i in Y | given in Y)` for every item outside `given`.
pub fn conditional_inclusion(l: &DMatrix<f64>, given: &[usize]) -> Vec<(usize, f64)> {
    let probs = enumerate_probs(l);
    let cond: Vec<&(Vec<usize>, f64)> = probs
        .iter()
        .filter(|(s, _)| given.iter().all(|g| s.contains(g)))
        .collect();
    let z: f64 = cond.iter().map(|(_, w)| w).sum();
    (0..l.nrows())
        .filter(|i| !given.contains(i))
        .map(|i| {
            let num: f64 = cond.iter().filter(|(s, _)| s.contains(&i)).map(|(_, w)| w).sum();
            (i, num / z)
        })
        .collect()
}

/// Exact two-sided signed-rank p-value by enumerating every sign pattern.
pub fn wilcoxon_enumeration_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // midranks: rank of |d_i| = (#smaller) + (#equal + 1) / 2
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let smaller = d.iter().filter(|u| u.abs() < v.abs()).count() as f64;
            let equal = d.iter().filter(|u| u.abs() == v.abs()).count() as f64;
            smaller + (equal + 1.0) / 2.0
        })
        .collect();
    let w_obs: f64 = d.iter().zip(&ranks).map(|(v, r)| v.signum() * r).sum();
    let mut hits = 0u64;
    for mask in 0..1u64 << n {
        let w: f64 = ranks
            .iter()
            .enumerate()
            .map(|(i, r)| if mask >> i & 1 == 1 { *r } else { -*r })
            .sum();
        if w.abs() >= w_obs.abs() - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Student t upper tail by Simpson integration of the density.
pub fn t_upper_tail(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let dens = |u: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + u * u / df).ln()).exp();
    // P(T > t) = 1/2 - integral_0^t density
    let steps = 20_000;
    let h = t / steps as f64;
    let mut s = dens(0.0) + dens(t);
    for k in 1..steps {
        let u = k as f64 * h;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * dens(u);
    }
    0.5 - s * h / 3.0
}

/// Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Per-class row index lists for dense labels.
fn class_rows(labels: &[usize]) -> Vec<Vec<usize>> {
    let c = labels.iter().max().unwrap() + 1;
    (0..c)
        .map(|k| (0..labels.len()).filter(|&i| labels[i] == k).collect())
        .collect()
}

/// Mean/variance scatter traces from class means and covariance matrices.
pub fn mean_variance_traces(u: &DMatrix<f64>, labels: &[usize]) -> (f64, f64) {
    let n = u.nrows() as f64;
    let k = u.ncols();
    let rows = class_rows(labels);
    let mut sw = DMatrix::<f64>::zeros(k, k);
    let mut means = Vec::new();
    for r in &rows {
        let nj = r.len() as f64;
        let mu: Vec<f64> = (0..k).map(|a| r.iter().map(|&i| u[(i, a)]).sum::<f64>() / nj).collect();
        for a in 0..k {
            for b in 0..k {
                let cov = r
                    .iter()
                    .map(|&i| (u[(i, a)] - mu[a]) * (u[(i, b)] - mu[b]))
                    .sum::<f64>()
                    / nj;
                sw[(a, b)] += nj / n * cov;
            }
        }
        means.push((nj / n, mu));
    }
    let pooled: Vec<f64> = (0..k).map(|a| means.iter().map(|(p, mu)| p * mu[a]).sum()).collect();
    let mut sb = DMatrix::<f64>::zeros(k, k);
    for (_, mu) in &means {
        for a in 0..k {
            for b in 0..k {
                sb[(a, b)] += (mu[a] - pooled[a]) * (mu[b] - pooled[b]);
            }
        }
    }
    (sb.trace(), sw.trace())
}

/// Kernel-variant scatters from explicit pairwise squared distances.
pub fn kernel_traces(u: &DMatrix<f64>, labels: &[usize]) -> (f64, f64) {
    let rows = class_rows(labels);
    let c = rows.len() as f64;
    let sq = |i: usize, j: usize| -> f64 {
        (0..u.ncols()).map(|a| (u[(i, a)] - u[(j, a)]).powi(2)).sum()
    };
    let mut sw = 0.0;
    for r in &rows {
        let nj = r.len() as f64;
        let s: f64 = r.iter().flat_map(|&k| r.iter().map(move |&l| (k, l))).map(|(k, l)| sq(k, l)).sum();
        sw += s / (nj * nj);
    }
    sw /= c;
    let mut sb = 0.0;
    for (i, ri) in rows.iter().enumerate() {
        for (j, rj) in rows.iter().enumerate() {
            if i == j {
                continue;
            }
            let s: f64 = ri.iter().flat_map(|&k| rj.iter().map(move |&l| (k, l))).map(|(k, l)| sq(k, l)).sum();
            sb += s / (ri.len() * rj.len()) as f64;
        }
    }
    sb *= 2.0 / (c * (c - 1.0));
    (sb, sw)
}

/// Label-variant scatters: the instance affinity matrices, taken through
/// their graph Laplacians `diag(A 1) - A` as quadratic forms.
pub fn label_traces(u: &DMatrix<f64>, labels: &[usize]) -> (f64, f64) {
    let n = labels.len();
    let nf = n as f64;
    let counts: Vec<f64> = class_rows(labels).iter().map(|r| r.len() as f64).collect();
    let sw = DMatrix::from_fn(n, n, |i, j| {
        if labels[i] == labels[j] {
            1.0 / nf - 1.0 / counts[labels[i]]
        } else {
            1.0 / nf
        }
    });
    let sb = DMatrix::from_fn(n, n, |i, j| {
        if labels[i] == labels[j] {
            1.0 / counts[labels[i]]
        } else {
            0.0
        }
    });
    let lap = |a: &DMatrix<f64>| {
        let deg = DMatrix::from_diagonal(&a.column_sum());
        deg - a
    };
    let (lw, lb) = (lap(&sw), lap(&sb));
    let mut between = 0.0;
    let mut within = 0.0;
    for j in 0..u.ncols() {
        let f = u.column(j);
        between += (f.transpose() * &lw * f)[(0, 0)];
        within += (f.transpose() * &lb * f)[(0, 0)];
    }
    (between, within)
}
