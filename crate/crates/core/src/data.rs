//! Dataset ingestion and feature-stream replay.
//!
//! A [`Dataset`] holds `n` instances over `D` features, stored column-major so
//! that each feature vector is a contiguous slice. [`stream_groups`] replays
//! the feature space as a sequence of [`FeatureGroup`]s of size `m`.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DofsError, Result};
use crate::stats;

/// Cell tokens treated as missing values.
const MISSING_TOKENS: &[&str] = &["", "?", "na", "n/a", "nan", "null", "none"];

/// Half the distance between the two class means of informative synthetic
/// features, in units of the noise standard deviation.
pub const SYNTHETIC_HALF_SHIFT: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    values: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from an `n x D` matrix. Labels must already be dense
    /// codes `0..c`; `class_names[k]` names code `k`.
    pub fn new(
        name: impl Into<String>,
        values: DMatrix<f64>,
        labels: Option<Vec<usize>>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = values.shape();
        if n < 2 {
            return Err(DofsError::InvalidDataset(format!(
                "need at least 2 instances, got {n}"
            )));
        }
        if d < 1 {
            return Err(DofsError::InvalidDataset("need at least 1 feature".into()));
        }
        if feature_names.len() != d {
            return Err(DofsError::InvalidDataset(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DofsError::NonFinite("dataset values"));
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(DofsError::InvalidDataset(format!(
                    "{} labels for {n} instances",
                    y.len()
                )));
            }
            let c = y.iter().max().map_or(0, |m| m + 1);
            if class_names.len() < c {
                return Err(DofsError::InvalidDataset(format!(
                    "label code {} has no class name",
                    c - 1
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            values,
            labels,
            class_names,
            feature_names,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_instances(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Feature vector `j` as a contiguous slice of length `n`.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.values.nrows();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct class codes, 0 when unlabeled.
    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |y| y.iter().collect::<BTreeSet<_>>().len())
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Errors unless labels are present with at least two classes.
    pub fn require_supervised(&self) -> Result<&[usize]> {
        match self.labels() {
            None => Err(DofsError::InvalidDataset(format!(
                "dataset '{}' has no labels",
                self.name
            ))),
            Some(_) if self.n_classes() < 2 => Err(DofsError::InvalidDataset(format!(
                "dataset '{}' has fewer than 2 classes",
                self.name
            ))),
            Some(y) => Ok(y),
        }
    }

    /// Copy with every column z-scored (population standard deviation);
    /// constant columns become zero.
    pub fn standardized(&self) -> Dataset {
        let mut values = self.values.clone();
        let n = values.nrows();
        for chunk in values.as_mut_slice().chunks_mut(n) {
            stats::standardize_in_place(chunk);
        }
        Dataset {
            values,
            ..self.clone()
        }
    }

    /// `n x |indices|` matrix of the given columns, in the order given.
    pub fn select_columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.values.select_columns(indices)
    }

    /// Copy restricted to the given instance rows.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            values: self.values.select_rows(rows),
            labels: self
                .labels
                .as_ref()
                .map(|y| rows.iter().map(|&r| y[r]).collect()),
            ..self.clone()
        }
    }

    /// Stable hash of shape and values, used to match checkpoints to data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = stats::fingerprint(self.values.as_slice());
        h ^= (self.n_instances() as u64).rotate_left(17) ^ (self.n_features() as u64);
        h
    }

    /// Writes the dataset as CSV with a header row. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| DofsError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        if self.labels.is_some() {
            header.push(label_column);
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n_instances() {
            let mut row: Vec<String> = (0..self.n_features())
                .map(|j| format!("{}", self.values[(i, j)]))
                .collect();
            if let Some(y) = &self.labels {
                row.push(self.class_names[y[i]].clone());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| DofsError::io(path, e))?;
        Ok(())
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    None,
    Name(String),
    Index(usize),
}

impl LabelColumn {
    /// `"none"` means unlabeled, a bare integer is a 0-based column index,
    /// anything else is a header name.
    pub fn parse(s: &str) -> Self {
        if s.eq_ignore_ascii_case("none") {
            LabelColumn::None
        } else if let Ok(i) = s.parse::<usize>() {
            LabelColumn::Index(i)
        } else {
            LabelColumn::Name(s.to_string())
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim().to_ascii_lowercase();
    MISSING_TOKENS.contains(&c.as_str())
}

/// Loads a comma-separated file with a mandatory header row.
///
/// Every non-label cell must parse as a finite real. Labels may be integers
/// or arbitrary strings; they are remapped to dense codes `0..c` in sorted
/// order (numeric order when every label is an integer).
pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| DofsError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(path).map_err(|e| DofsError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();

    let label_idx = match label {
        LabelColumn::None => None,
        LabelColumn::Index(i) if *i < header.len() => Some(*i),
        LabelColumn::Index(i) => {
            return Err(DofsError::InvalidDataset(format!(
                "label column index {i} out of range ({} columns)",
                header.len()
            )))
        }
        LabelColumn::Name(name) => Some(header.iter().position(|h| h == name).ok_or_else(
            || DofsError::InvalidDataset(format!("no column named '{name}'")),
        )?),
    };
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != label_idx).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row_no = r + 1;
        let mut row = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            if is_missing(cell) {
                return Err(DofsError::MissingValue {
                    row: row_no,
                    column: header[c].clone(),
                });
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DofsError::Parse {
                    row: row_no,
                    column: header[c].clone(),
                    value: cell.to_string(),
                })?;
            row.push(v);
        }
        if let Some(li) = label_idx {
            let cell = record.get(li).unwrap_or("");
            if is_missing(cell) {
                return Err(DofsError::MissingValue {
                    row: row_no,
                    column: header[li].clone(),
                });
            }
            raw_labels.push(cell.to_string());
        }
        rows.push(row);
    }

    let n = rows.len();
    let d = feature_cols.len();
    let values = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let (labels, class_names) = match label_idx {
        None => (None, Vec::new()),
        Some(_) => {
            let (codes, names) = encode_labels(&raw_labels);
            (Some(codes), names)
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, values, labels, class_names, feature_names)
}

fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = raw
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let numeric: Option<Vec<i64>> = names.iter().map(|s| s.parse().ok()).collect();
    if let Some(mut nums) = numeric {
        nums.sort_unstable();
        nums.dedup();
        names = nums.iter().map(|v| v.to_string()).collect();
        let codes = raw
            .iter()
            .map(|s| {
                let v: i64 = s.parse().expect("checked numeric");
                nums.binary_search(&v).expect("present")
            })
            .collect();
        return (codes, names);
    }
    let codes = raw
        .iter()
        .map(|s| names.binary_search(s).expect("present"))
        .collect();
    (codes, names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub group_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            seed: 1,
            shuffle: false,
        }
    }
}

/// A batch of newly arrived features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroup {
    /// Position of the group in its stream.
    pub id: usize,
    /// Global feature indices into the dataset.
    pub indices: Vec<usize>,
    /// `n x |indices|` feature values.
    pub columns: DMatrix<f64>,
}

/// Partitions the feature space into consecutive groups of `group_size`
/// (the last may be shorter). With `shuffle` the features are permuted by a
/// seeded generator first.
pub fn stream_groups(d: &Dataset, cfg: &StreamConfig) -> Result<Vec<FeatureGroup>> {
    if cfg.group_size == 0 {
        return Err(DofsError::InvalidConfig("group size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..d.n_features()).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        order.shuffle(&mut rng);
    }
    Ok(order
        .chunks(cfg.group_size)
        .enumerate()
        .map(|(id, idx)| FeatureGroup {
            id,
            indices: idx.to_vec(),
            columns: d.select_columns(idx),
        })
        .collect())
}

/// Binary-labeled Gaussian fixture. The first `informative` columns have
/// class means at `-SYNTHETIC_HALF_SHIFT` and `+SYNTHETIC_HALF_SHIFT` (unit
/// variance); the remaining `noise` columns ignore the label. Labels
/// alternate 0, 1, 0, ... so the classes are balanced.
pub fn make_synthetic(n: usize, informative: usize, noise: usize, seed: u64) -> Result<Dataset> {
    if informative < 1 {
        return Err(DofsError::InvalidConfig(
            "need at least one informative feature".into(),
        ));
    }
    if n < 4 {
        return Err(DofsError::InvalidConfig("need at least 4 instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let d = informative + noise;
    let mut values = DMatrix::zeros(n, d);
    for j in 0..d {
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shift = if j < informative {
                if labels[i] == 1 {
                    SYNTHETIC_HALF_SHIFT
                } else {
                    -SYNTHETIC_HALF_SHIFT
                }
            } else {
                0.0
            };
            values[(i, j)] = z + shift;
        }
    }
    let feature_names = (0..d)
        .map(|j| {
            if j < informative {
                format!("informative_{j}")
            } else {
                format!("noise_{}", j - informative)
            }
        })
        .collect();
    Dataset::new(
        format!("synthetic_{informative}_{noise}"),
        values,
        Some(labels),
        vec!["0".into(), "1".into()],
        feature_names,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_labeled_csv() {
        let f = write_tmp("a,b,y\n1.0,2.0,0\n3.5,-1,1\n0,0,1\n");
        let d = load_csv(f.path(), &LabelColumn::Name("y".into())).unwrap();
        assert_eq!(d.n_instances(), 3);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.labels().unwrap(), &[0, 1, 1]);
        assert_eq!(d.n_classes(), 2);
        assert_eq!(d.column(1), &[2.0, -1.0, 0.0]);
        assert_eq!(d.feature_names(), &["a", "b"]);
    }

    #[test]
    fn loads_without_label() {
        let f = write_tmp("a,b\n1,2\n3,4\n");
        let d = load_csv(f.path(), &LabelColumn::None).unwrap();
        assert!(d.labels().is_none());
        assert_eq!(d.n_features(), 2);
        assert!(d.require_supervised().is_err());
    }

    #[test]
    fn categorical_labels_are_sorted_codes() {
        let f = write_tmp("x,class\n1,g\n2,b\n3,g\n");
        let d = load_csv(f.path(), &LabelColumn::Index(1)).unwrap();
        assert_eq!(d.class_names(), &["b", "g"]);
        assert_eq!(d.labels().unwrap(), &[1, 0, 1]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let f = write_tmp("x,y\n1,10\n2,2\n3,-1\n");
        let d = load_csv(f.path(), &LabelColumn::Name("y".into())).unwrap();
        assert_eq!(d.class_names(), &["-1", "2", "10"]);
        assert_eq!(d.labels().unwrap(), &[2, 1, 0]);
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let f = write_tmp("a,b\n1,2\n3,abc\n");
        match load_csv(f.path(), &LabelColumn::None) {
            Err(DofsError::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_value_is_an_error() {
        let f = write_tmp("a,b\n1,?\n3,4\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::None),
            Err(DofsError::MissingValue { row: 1, .. })
        ));
        let f = write_tmp("a,b\n1,\n3,4\n");
        assert!(matches!(
            load_csv(f.path(), &LabelColumn::None),
            Err(DofsError::MissingValue { .. })
        ));
    }

    #[test]
    fn unknown_label_column_is_an_error() {
        let f = write_tmp("a,b\n1,2\n3,4\n");
        assert!(load_csv(f.path(), &LabelColumn::Name("zzz".into())).is_err());
    }

    #[test]
    fn groups_follow_file_order() {
        let d = make_synthetic(10, 2, 10, 3).unwrap();
        let cfg = StreamConfig {
            group_size: 5,
            seed: 0,
            shuffle: false,
        };
        let g = stream_groups(&d, &cfg).unwrap();
        let idx: Vec<Vec<usize>> = g.iter().map(|g| g.indices.clone()).collect();
        assert_eq!(
            idx,
            vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9], vec![10, 11]]
        );
        assert_eq!(g[2].columns.ncols(), 2);
        assert_eq!(g[1].columns.column(0).as_slice(), d.column(5));
    }

    #[test]
    fn shuffled_groups_are_seed_deterministic() {
        let d = make_synthetic(6, 3, 20, 3).unwrap();
        let cfg = StreamConfig {
            group_size: 4,
            seed: 11,
            shuffle: true,
        };
        let a = stream_groups(&d, &cfg).unwrap();
        let b = stream_groups(&d, &cfg).unwrap();
        assert_eq!(a, b);
        let natural: Vec<usize> = (0..23).collect();
        let flat: Vec<usize> = a.iter().flat_map(|g| g.indices.clone()).collect();
        assert_ne!(flat, natural);
    }

    #[test]
    fn zero_group_size_rejected() {
        let d = make_synthetic(6, 1, 1, 0).unwrap();
        let cfg = StreamConfig {
            group_size: 0,
            ..Default::default()
        };
        assert!(stream_groups(&d, &cfg).is_err());
    }

    #[test]
    fn synthetic_single_informative_is_separated() {
        let d = make_synthetic(400, 1, 0, 5).unwrap();
        let y = d.labels().unwrap();
        let col = d.column(0);
        let m = |c: usize| {
            let v: Vec<f64> = col
                .iter()
                .zip(y)
                .filter(|(_, &l)| l == c)
                .map(|(x, _)| *x)
                .collect();
            stats::mean(&v)
        };
        // population means are 2.5 sd apart; sample means stay above 2 sd
        assert!(m(1) - m(0) >= 2.0);
        assert_eq!(make_synthetic(400, 1, 0, 5).unwrap(), d);
    }

    #[test]
    fn synthetic_rejects_bad_shapes() {
        assert!(make_synthetic(10, 0, 5, 1).is_err());
        assert!(make_synthetic(3, 1, 5, 1).is_err());
    }

    #[test]
    fn standardized_columns_have_zero_mean() {
        let d = make_synthetic(50, 2, 3, 9).unwrap().standardized();
        for j in 0..d.n_features() {
            assert!(stats::mean(d.column(j)).abs() < 1e-12);
        }
    }
}
