use std::path::Path;

use kplsvm::data;
use kplsvm::modelsel::{self, BenchMode, BenchOptions, Criterion, Family, GridSpec, KernelKind, SearchOptions};

fn monk3() -> kplsvm::Dataset {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/benchmarks.manifest");
    let entries = data::load_manifest(manifest).unwrap();
    entries.iter().find(|e| e.name == "monk3").unwrap().load_split(None).unwrap()
}

#[test]
fn staged_search_on_test_accuracy() {
    let opts = SearchOptions { criterion: Criterion::TestAccuracy, jobs: Some(4), ..SearchOptions::default() };
    let report = modelsel::staged_search(&monk3(), KernelKind::Linear, &GridSpec::reduced(), &opts).unwrap();

    let scores: Vec<f64> = Family::ALL.iter().map(|f| report.best_of(*f).unwrap().score).collect();
    assert!(scores.windows(2).all(|w| w[1] >= w[0]), "{scores:?}");

    for best in &report.best {
        let max = report
            .records
            .iter()
            .filter(|r| r.family == best.family)
            .filter_map(|r| r.score)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.score, max);
        // Tuned on the test part, so the score is the test accuracy.
        assert_eq!(best.score, best.test_accuracy);
        assert!(best.train_time_s >= 0.0);
    }

    // Stage 2 keeps the stage-1 (C0, q).
    let (c0, q) = report.stage1.unwrap();
    assert!(report.best.iter().all(|b| b.params.c0 == c0 && b.params.q == q));
}

#[test]
fn reports_are_byte_identical_without_time() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.manifest");
    let monk = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/monk3.csv");
    std::fs::write(&manifest, format!("monk3, {}, csv, 122, predefined\n", monk.display())).unwrap();
    let entries = data::load_manifest(&manifest).unwrap();
    let mut grids = GridSpec::reduced();
    grids.c0 = vec![0.25, 1.0];
    grids.tau = vec![-0.4, 0.0, 0.4];
    grids.eps = vec![-1.0, 0.0, 1.0];
    let run = |jobs| {
        let options = SearchOptions { jobs: Some(jobs), ..SearchOptions::default() };
        let opts = BenchOptions { kernel: KernelKind::Linear, mode: BenchMode::Search { grids: grids.clone(), options }, seed_override: None };
        let report = modelsel::benchmark_run(&entries, &opts).unwrap();
        (report.to_csv(false), report.dataset_csv("monk3", false), report.table(false))
    };
    assert_eq!(run(1), run(4));
}
