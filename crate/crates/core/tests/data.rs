use std::path::PathBuf;

use dofs_core::data::{load_csv, make_synthetic, stream_groups, Dataset, LabelColumn, StreamConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn uci(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uci").join(format!("{name}.csv"))
}

#[test]
fn ionosphere_shape() {
    let d = load_csv(uci("ionosphere"), &LabelColumn::parse("class")).unwrap();
    assert_eq!((d.n_instances(), d.n_features()), (351, 34));
    assert_eq!(d.n_classes(), 2);
}

#[test]
fn csv_round_trip() {
    let d = make_synthetic(20, 2, 3, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.csv");
    d.write_csv(&path, "class").unwrap();
    let back = load_csv(&path, &LabelColumn::parse("class")).unwrap();
    assert_eq!(back.n_features(), 5);
    assert_eq!(back.labels(), d.labels());
    assert_eq!(back.feature_names(), d.feature_names());
    for (a, b) in back.values().iter().zip(d.values().iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn string_labels_become_sorted_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    std::fs::write(&path, "a,b,label\n1,2,g\n3,4,b\n5,6,g\n").unwrap();
    let d = load_csv(&path, &LabelColumn::parse("label")).unwrap();
    assert_eq!(d.class_names(), &["b".to_string(), "g".to_string()]);
    assert_eq!(d.labels().unwrap(), &[1, 0, 1]);
    let unlabeled = load_csv(&path, &LabelColumn::parse("none"));
    assert!(unlabeled.is_err(), "non-numeric cells are rejected without a label column");
}

#[test]
fn missing_file_is_an_error() {
    assert!(load_csv("/nonexistent/x.csv", &LabelColumn::None).is_err());
}

#[test]
fn synthetic_is_linearly_learnable() {
    // nearest class centroid on the informative columns, fit on the data itself
    let d = make_synthetic(200, 5, 95, 1).unwrap();
    let y = d.labels().unwrap();
    let x = d.values();
    let mut centroids = [[0.0; 5]; 2];
    let mut counts = [0.0; 2];
    for i in 0..200 {
        counts[y[i]] += 1.0;
        for j in 0..5 {
            centroids[y[i]][j] += x[(i, j)];
        }
    }
    for (c, k) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= k);
    }
    let correct = (0..200)
        .filter(|&i| {
            let dist = |c: &[f64; 5]| (0..5).map(|j| (x[(i, j)] - c[j]).powi(2)).sum::<f64>();
            usize::from(dist(&centroids[1]) < dist(&centroids[0])) == y[i]
        })
        .count();
    assert!(correct as f64 / 200.0 >= 0.9, "{correct}/200");
}

#[test]
fn constant_columns_standardize_to_zero() {
    let values = DMatrix::from_row_slice(3, 2, &[1.0, 7.0, 2.0, 7.0, 3.0, 7.0]);
    let names = vec!["a".into(), "b".into()];
    let d = Dataset::new("c", values, None, Vec::new(), names).unwrap().standardized();
    assert!(d.column(1).iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn groups_partition_the_features(d in 1usize..40, m in 1usize..12, seed in 0u64..100, shuffle: bool) {
        let ds = make_synthetic(6, 1, d - 1, seed).unwrap();
        let groups = stream_groups(&ds, &StreamConfig { group_size: m, seed, shuffle }).unwrap();
        let mut seen: Vec<usize> = groups.iter().flat_map(|g| g.indices.clone()).collect();
        prop_assert_eq!(groups.len(), d.div_ceil(m));
        for (k, g) in groups.iter().enumerate() {
            prop_assert_eq!(g.id, k);
            prop_assert!(g.indices.len() <= m && !g.indices.is_empty());
            prop_assert_eq!(g.columns.ncols(), g.indices.len());
        }
        seen.sort();
        prop_assert_eq!(seen, (0..d).collect::<Vec<_>>());
    }
}
