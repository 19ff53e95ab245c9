use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Z-scores a column with the population standard deviation. Constant
/// columns map to all zeros.
pub(crate) fn standardize_in_place(col: &mut [f64]) {
    let n = col.len();
    if n == 0 {
        return;
    }
    let m = mean(col);
    let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd <= 1e-12 * m.abs().max(1.0) {
        col.iter_mut().for_each(|x| *x = 0.0);
    } else {
        col.iter_mut().for_each(|x| *x = (*x - m) / sd);
    }
}

pub(crate) fn normal_two_sided_p(z: f64) -> f64 {
    let std_normal = Normal::standard();
    (2.0 * std_normal.sf(z.abs())).clamp(0.0, 1.0)
}

/// Upper-tail probability P(T > t) for Student's t with `df` degrees of freedom.
pub(crate) fn student_t_sf(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    dist.sf(t)
}

/// FNV-1a over the bit patterns of a float slice.
pub(crate) fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
