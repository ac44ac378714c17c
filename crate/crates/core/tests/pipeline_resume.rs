use std::fs;
use std::path::Path;

use ratscope_core::pipeline::runner::RunManifest;
use ratscope_core::pipeline::sweeps::sweep_config;
use ratscope_core::pipeline::{run, run_sweep, PipelineConfig, RunOptions, SweepKind};

fn config() -> PipelineConfig {
    PipelineConfig::from_toml(
        r#"
        [run]
        workers = 4
        [sweep]
        replicates = 2
        [scene]
        span_s = 0.02
        "#,
    )
    .unwrap()
}

fn sweep(dir: &Path, workers: usize, max_tasks: Option<usize>) -> Option<Vec<u8>> {
    let out = run_sweep(SweepKind::Snr, &config(), dir, RunOptions { workers: Some(workers), max_tasks }).unwrap();
    out.csv.map(|p| fs::read(p).unwrap())
}

#[test]
fn interrupted_sweep_resumes_to_identical_csv() {
    let straight = tempfile::tempdir().unwrap();
    let reference = sweep(straight.path(), 8, None).unwrap();
    let text = String::from_utf8(reference.clone()).unwrap();
    assert!(text.starts_with("snr_db,detection_rate,precision\n"));
    assert_eq!(text.lines().count(), 6);

    let broken = tempfile::tempdir().unwrap();
    assert!(sweep(broken.path(), 3, Some(7)).is_none());
    assert!(sweep(broken.path(), 5, Some(25)).is_none());
    let resumed = sweep(broken.path(), 2, None).unwrap();
    assert_eq!(resumed, reference);

    let name = sweep_config(SweepKind::Snr, &config()).run.name;
    assert_eq!(
        RunManifest::read(broken.path(), &name).unwrap(),
        RunManifest::read(straight.path(), &name).unwrap()
    );
}

#[test]
fn worker_count_does_not_change_the_manifest() {
    let mut cfg = config();
    cfg.grid.insert("snr_db".into(), vec![0.into(), 15.into()]);
    cfg.grid.insert("threshold_db".into(), vec![2.into(), 4.into()]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = run(&cfg, a.path(), RunOptions { workers: Some(1), max_tasks: None }).unwrap();
    let eight = run(&cfg, b.path(), RunOptions { workers: Some(8), max_tasks: None }).unwrap();
    assert_eq!(one.executed, eight.executed);
    let (m1, m8) = (one.manifest.unwrap(), eight.manifest.unwrap());
    assert_eq!(m1.failed_chains(), 0);
    assert_eq!(m1, m8);
    assert_eq!(
        fs::read(RunManifest::path(a.path(), &cfg.run.name)).unwrap(),
        fs::read(RunManifest::path(b.path(), &cfg.run.name)).unwrap()
    );
}

#[test]
fn sweeps_share_completed_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.sweep.replicates = 1;
    let first = run_sweep(SweepKind::Snr, &cfg, dir.path(), RunOptions::default()).unwrap();
    assert!(first.summary.executed > 0);
    let again = run_sweep(SweepKind::Snr, &cfg, dir.path(), RunOptions::default()).unwrap();
    assert_eq!(again.summary.executed, 0);
    assert_eq!(again.report, first.report);
}

#[test]
fn interference_and_feature_sweeps_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.sweep.replicates = 1;
    let inter = run_sweep(SweepKind::Interference, &cfg, dir.path(), RunOptions::default()).unwrap();
    let text = fs::read_to_string(inter.csv.unwrap()).unwrap();
    assert!(text.starts_with("snr_db,detection_rate,precision\n"));
    assert_eq!(text.lines().count(), 6);

    cfg.grid.insert("bandwidth_hz".into(), vec![10e6.into()]);
    cfg.grid.insert("frame_duration_s".into(), vec![4e-3.into()]);
    let feats = run_sweep(SweepKind::Features, &cfg, dir.path(), RunOptions::default()).unwrap();
    let text = fs::read_to_string(feats.csv.unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("feature,n,median,q1,q3,whisker_low,whisker_high,min,max"));
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["bandwidth", "center", "duration", "interval"]);
}
