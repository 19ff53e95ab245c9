use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dofs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dofs"))
        .args(args)
        .env_remove("DOFS_OUTPUT_DIR")
        .output()
        .expect("spawn dofs")
}

fn uci(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/uci")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(dir: &Path, stem: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(format!("{stem}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Drops the `seconds` column so reruns can be compared.
fn without_seconds(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "seconds").unwrap();
    std::iter::once(header.clone())
        .chain(lines.map(|l| l.split(',').collect()))
        .map(|cells: Vec<&str>| {
            cells
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != col)
                .map(|(_, c)| *c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn missing_dataset_flag_is_a_usage_error() {
    let o = dofs(&["select"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_dataset_exits_nonzero() {
    let o = dofs(&["select", "--dataset", "/nonexistent/x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn help_lists_flags() {
    let o = dofs(&["select", "--help"]);
    let text = stdout(&o);
    for flag in ["--mode", "--m", "--alpha", "--epsilon", "--lambda", "--l1-ratio", "--kernel", "--k-max", "--folds", "--output"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn select_on_wdbc_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dofs(&[
        "select", "--dataset", &uci("wdbc.csv"), "--mode", "supervised", "--m", "5", "--seed", "1", "--output", out, "--log",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path(), "wdbc_supervised_seed1");
    let n = r["n_selected"].as_u64().unwrap();
    assert!((1..=30).contains(&n));
    let listed = fs::read_to_string(dir.path().join("wdbc_supervised_seed1_selected.txt")).unwrap();
    assert_eq!(listed.lines().count() as u64, n);
    assert!(dir.path().join("wdbc_supervised_seed1_log.jsonl").exists());
}

#[test]
fn select_on_synthetic_recovers_informative_features() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("synth.csv");
    let csv_s = csv.to_str().unwrap();
    assert!(dofs(&["synth", "--n", "200", "--informative", "5", "--noise", "95", "--out", csv_s]).status.success());
    let out = dir.path().join("out");
    let o = dofs(&["select", "--dataset", csv_s, "--m", "10", "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = report(&out, "synth_supervised_seed1");
    let hits = r["selected"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v.as_u64().unwrap() < 5)
        .count();
    assert!(hits as f64 / 5.0 >= 0.8, "recall {}/5: {}", hits, r["selected"]);
}

#[test]
fn synth_writes_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let o = dofs(&["synth", "--n", "30", "--informative", "2", "--noise", "3", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 31);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 6);
}

fn write_matrix(dir: &Path, name: &str, rows: &[&str]) -> String {
    let p = dir.join(name);
    fs::write(&p, rows.join("\n") + "\n").unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn sample_dpp_pair_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let l = write_matrix(dir.path(), "l.csv", &["2,0", "0,2"]);
    let o = dofs(&["sample-dpp", "--kernel-matrix", &l, "--n-samples", "100000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let total = text.lines().count();
    let pairs = text.lines().filter(|l| l.ends_with("[0, 1]")).count();
    assert_eq!(total, 100_000);
    assert!((pairs as f64 / total as f64 - 4.0 / 9.0).abs() < 0.01);
}

#[test]
fn sample_dpp_zero_kernel_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let l = write_matrix(dir.path(), "z.csv", &["0,0", "0,0"]);
    let o = dofs(&["sample-dpp", "--kernel-matrix", &l, "--n-samples", "200"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().all(|l| l.ends_with("[]")));
}

#[test]
fn sample_dpp_is_seeded() {
    let run = |seed: &str| {
        stdout(&dofs(&["sample-dpp", "--dataset", &uci("wdbc.csv"), "--n-samples", "20", "--seed", seed]))
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

#[test]
fn sample_dpp_dumps_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("k");
    let o = dofs(&[
        "sample-dpp", "--dataset", &uci("spectf.csv"), "--n-samples", "1", "--dump-kernels", dump.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let l = fs::read_to_string(dump.join("l_kernel.csv")).unwrap();
    assert_eq!(l.lines().count(), 44);
    assert!(dump.join("k_kernel.csv").exists());
}

#[test]
fn bench_single_dataset_three_rows_and_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(uci("wdbc.csv"), dir.path().join("wdbc.csv")).unwrap();
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "wdbc.csv class\n").unwrap();
    let out = dir.path().join("out");
    let args = ["bench", "--manifest", manifest.to_str().unwrap(), "--output", out.to_str().unwrap()];
    assert!(dofs(&args).status.success());
    let first = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(first.lines().count(), 4, "{first}");
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(dofs(&args).status.success());
    let second = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(without_seconds(&first), without_seconds(&second));
}

#[test]
fn bench_uci_manifest_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = dofs(&["bench", "--manifest", &uci("manifest.txt"), "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 13);
    let header: Vec<&str> = results.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let row: Vec<&str> = results
        .lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|c| c[col("dataset")] == "ionosphere" && c[col("mode")] == "supervised")
        .expect("ionosphere supervised row");
    let acc: f64 = row[col("accuracy")].parse().unwrap();
    assert!((acc - 86.47).abs() <= 6.0, "ionosphere supervised accuracy {acc}");
}

#[test]
fn bench_partial_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(uci("spectf.csv"), dir.path().join("spectf.csv")).unwrap();
    let manifest = dir.path().join("manifest.txt");
    fs::write(&manifest, "spectf.csv class\nmissing.csv class\n").unwrap();
    let out = dir.path().join("out");
    let o = dofs(&["bench", "--manifest", manifest.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 4);
}
