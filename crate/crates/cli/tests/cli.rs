use std::fs;
use std::path::Path;
use std::process::{Command as Proc, Output};

use nematiq::config::{parse_config, Command};
use proptest::prelude::*;

fn nematiq(args: &[&str], workers: &str) -> Output {
    Proc::new(env!("CARGO_BIN_EXE_nematiq")).args(args).env("NEMATIQ_WORKERS", workers).output().unwrap()
}

fn traces(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("trace_"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn verify_passes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let o = nematiq(&["verify", "--output_dir", dir], "2");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(tmp.path().join("verify_report.ndjson")).unwrap();
    let records: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(records.len() >= 12);
    assert!(records.iter().all(|r| r["pass"] == true));
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn convolution_test_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nematiq(&["convolution-test", "--output_dir", tmp.path().to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let o = nematiq(&["simulate", "T=0.05", "seed=3", &format!("output_dir={}", dir.display())], "1");
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        traces(&dir)
    };
    let a = run("a");
    assert_eq!(a.len(), 1);
    assert_eq!(a, run("b"));
}

#[test]
fn ensemble_is_independent_of_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let dir = tmp.path().join(name);
        let o = nematiq(&["ensemble", "--seeds", "4", "--T", "0.05", "--output_dir", dir.to_str().unwrap()], workers);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.join("summary.json").exists());
        traces(&dir)
    };
    let a = run("one", "1");
    assert_eq!(a.len(), 4);
    assert_eq!(a, run("three", "3"));
}

#[test]
fn bad_config_exits_two_and_names_key() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nematiq(&["simulate", "--dt", "0", "--output_dir", tmp.path().to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));

    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "nx = 32\nwindow = -1\n").unwrap();
    let o = nematiq(&["picard", "--config", conf.to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("window"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn canonical_text_round_trips(
        nx in prop::sample::select(vec![16usize, 32, 64]),
        steps in 10usize..100_000,
        seed in 0u64..1000,
        seeds in 1usize..50,
        stride in 1usize..20,
        gaps in prop::collection::vec(0.5f64..1e4, 1..4),
    ) {
        let levels: Vec<String> = gaps.iter().scan(0.0, |acc, g| { *acc += g; Some(acc.to_string()) }).collect();
        let overrides: Vec<(String, String)> = vec![
            ("nx".into(), nx.to_string()),
            ("dt".into(), (1.0 / steps as f64).to_string()),
            ("window".into(), (1.0 / steps as f64).to_string()),
            ("seed".into(), seed.to_string()),
            ("seeds".into(), seeds.to_string()),
            ("output_stride".into(), stride.to_string()),
            ("k_levels".into(), levels.join(",")),
        ];
        let a = parse_config(Command::Ensemble, "", &overrides).unwrap();
        let b = parse_config(Command::Ensemble, &a.canonical_text(), &[]).unwrap();
        prop_assert_eq!(a.canonical_text(), b.canonical_text());
        prop_assert_eq!(a.hash(), b.hash());
        prop_assert_eq!(a.seeds, b.seeds);
        prop_assert_eq!(a.solver.dt.to_bits(), b.solver.dt.to_bits());
    }
}
