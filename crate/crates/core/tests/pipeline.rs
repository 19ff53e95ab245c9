use dofs_core::data::{make_synthetic, Dataset};
use dofs_core::pipeline::{run, Mode, PipelineConfig, PipelineState, Runner};
use nalgebra::DMatrix;
use proptest::prelude::*;

const MODES: [Mode; 4] = [Mode::DppOnly, Mode::Unsupervised, Mode::Supervised, Mode::Combined];

fn six_groups() -> Dataset {
    make_synthetic(80, 6, 24, 17).unwrap()
}

fn config(mode: Mode, seed: u64) -> PipelineConfig {
    PipelineConfig {
        mode,
        seed,
        group_size: 5,
        ..PipelineConfig::default()
    }
}

/// Copies of existing columns appended to a synthetic dataset.
fn with_duplicates(seed: u64) -> Dataset {
    let base = make_synthetic(60, 4, 8, seed).unwrap();
    let v = base.values();
    let dup = [0usize, 0, 5, 9];
    let total = v.ncols() + dup.len();
    let values = DMatrix::from_fn(v.nrows(), total, |i, j| {
        if j < v.ncols() {
            v[(i, j)]
        } else {
            v[(i, dup[j - v.ncols()])]
        }
    });
    let names = (0..total).map(|j| format!("f{j}")).collect();
    Dataset::new(
        "dups",
        values,
        base.labels().map(|l| l.to_vec()),
        base.class_names().to_vec(),
        names,
    )
    .unwrap()
}

#[test]
fn every_cut_point_matches_unsplit_run() {
    let d = six_groups();
    for mode in MODES {
        let runner = Runner::new(&d, config(mode, 3)).unwrap();
        let groups = runner.groups().unwrap();
        assert_eq!(groups.len(), 6);
        let full = runner.run().unwrap().without_timings();
        for cut in 0..=groups.len() {
            let head = runner.resume(runner.initial_state(), &groups[..cut]).unwrap();
            let tail = runner.resume(head, &groups[cut..]).unwrap();
            assert_eq!(tail.without_timings(), full, "{mode:?} cut {cut}");
        }
    }
}

#[test]
fn checkpoint_round_trip_resumes_identically() {
    let d = six_groups();
    let cfg = config(Mode::Combined, 5);
    let runner = Runner::new(&d, cfg.clone()).unwrap();
    let groups = runner.groups().unwrap();
    let full = runner.run().unwrap().without_timings();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    runner.resume(runner.initial_state(), &groups[..2]).unwrap().save(&path).unwrap();
    let loaded = PipelineState::load(&path).unwrap();
    let done = dofs_core::pipeline::resume(&d, loaded, &groups[2..], &cfg).unwrap();
    assert_eq!(done.without_timings(), full);
}

#[test]
fn resume_rejects_wrong_group_and_config() {
    let d = six_groups();
    let runner = Runner::new(&d, config(Mode::Supervised, 1)).unwrap();
    let groups = runner.groups().unwrap();
    assert!(runner.resume(runner.initial_state(), &groups[1..]).is_err());
    let other = Runner::new(&d, config(Mode::Supervised, 2)).unwrap();
    assert!(other.resume(runner.initial_state(), &groups).is_err());
}

#[test]
fn repeated_runs_are_identical() {
    let d = six_groups();
    for mode in MODES {
        let a = run(&d, &config(mode, 9)).unwrap().without_timings();
        let b = run(&d, &config(mode, 9)).unwrap().without_timings();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn stage_timings_are_logged_in_order() {
    let s = run(&six_groups(), &config(Mode::Combined, 1)).unwrap();
    for r in &s.log {
        let names: Vec<&str> = r.timings.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(names, ["sample", "local", "global"]);
    }
}

#[test]
fn unlabeled_unsupervised_skips_pruning() {
    let d = six_groups();
    let names = d.feature_names().to_vec();
    let bare = Dataset::new("bare", d.values().clone(), None, Vec::new(), names).unwrap();
    let s = run(&bare, &config(Mode::Unsupervised, 2)).unwrap();
    assert!(s.log.iter().all(|r| r.pruned.is_empty()));
    assert!(run(&bare, &config(Mode::Supervised, 2)).is_err());
}

#[test]
fn max_selected_stops_the_stream() {
    let cfg = PipelineConfig {
        max_selected: Some(2),
        ..config(Mode::DppOnly, 4)
    };
    let s = run(&six_groups(), &cfg).unwrap();
    assert!(s.selected.len() <= 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn structural_invariants(seed in 0u64..1000, mode_ix in 0usize..4, k in 1usize..4) {
        let d = six_groups();
        let cfg = PipelineConfig { k_max: Some(k), ..config(MODES[mode_ix], seed) };
        let s = run(&d, &cfg).unwrap();
        prop_assert!(s.selected.len() <= s.arrived());
        for r in &s.log {
            prop_assert!(r.sampled.len() <= k);
            prop_assert!(r.accepted.len() <= k);
            prop_assert!(r.sampled.iter().all(|f| r.arrived.contains(f)));
        }
        for f in &s.selected {
            prop_assert!(f.group < s.groups_processed);
            prop_assert!(s.log[f.group].arrived.contains(&f.index));
        }
    }

    #[test]
    fn no_identical_columns_selected(seed in 0u64..1000, combined: bool) {
        let d = with_duplicates(seed);
        let mode = if combined { Mode::Combined } else { Mode::Unsupervised };
        let cfg = PipelineConfig { kernel_scale: 4.0, ..config(mode, seed) };
        let s = run(&d, &cfg).unwrap();
        let idx = s.selected_indices();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                prop_assert_ne!(d.column(i), d.column(j));
            }
        }
    }
}

#[test]
fn synthetic_supervised_recovers_informative_features() {
    let d = make_synthetic(200, 5, 95, 1).unwrap();
    let cfg = PipelineConfig {
        group_size: 10,
        ..config(Mode::Supervised, 1)
    };
    let s = run(&d, &cfg).unwrap();
    let sel = s.selected_indices();
    let hits = sel.iter().filter(|&&j| j < 5).count();
    assert!(sel.len() < 30, "{sel:?}");
    assert!(hits >= 4, "informative kept {hits}/5, selected {sel:?}");
}
