use std::fs;
use std::path::{Path, PathBuf};

use intervene::cli::{main_with_args, BENCH_COLUMNS, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
use intervene::config::{RunConfig, FIXED_ABLATION_EPISODES};
use intervene::orchestrator::RunResult;
use intervene::stats;

fn run_cli(out: &Path, args: &[&str]) -> i32 {
    let mut full = vec!["intervene".to_string(), "--out".into(), out.display().to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    main_with_args(full)
}

/// The single subdirectory of `root` whose name starts with `prefix`.
fn only_dir(root: &Path, prefix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir() && p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn read_csv_header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

const QUICK: [&str; 4] = ["--warm-start", "3", "--episodes", "4"];

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let mut cfg = RunConfig::default();
    cfg.policy = "ppo".into();
    cfg.seeds = vec![1, 2];
    cfg.env.name = "duffing".into();
    cfg.orchestrator.episodes = Some(12);
    cfg.ablation.no_diversity = true;
    cfg.orchestrator.convergence.per_node = vec![0.1, 0.2, 0.3];
    let text = cfg.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    assert!(RunConfig::from_toml("[orchestrator]\nkk = 3").is_err());
    assert!(RunConfig::from_toml("seeds = []").is_err());
}

#[test]
fn run_writes_results_and_echoes_config() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--env", "scm5", "--policy", "random", "--seeds", "42"];
    args.extend(QUICK);
    assert_eq!(run_cli(out.path(), &args), EXIT_OK);
    let dir = only_dir(out.path(), "run-scm5-random");
    let cfg = RunConfig::load(dir.join("config.toml")).unwrap();
    assert_eq!(cfg.seeds, vec![42]);
    assert_eq!(cfg.orchestrator.episodes, Some(4));
    assert!(dir.join("summary.json").is_file());
    let seeds: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(seeds, vec![dir.join("seed-42")]);
    let sd = dir.join("seed-42");
    let result: RunResult = serde_json::from_str(&fs::read_to_string(sd.join("result.json")).unwrap()).unwrap();
    assert_eq!(result.seed, 42);
    assert_eq!(result.episodes, 4);
    assert!(sd.join("warm_start.json").is_file());
    assert_eq!(fs::read_to_string(sd.join("episodes.jsonl")).unwrap().lines().count(), 4);
    assert_eq!(read_csv_header(&sd.join("losses.csv")), ["episode", "X1", "X2", "X3", "X4", "X5"]);
}

#[test]
fn run_defaults_to_five_seeds() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--policy", "dpo", "--jobs", "5"];
    args.extend(QUICK);
    assert_eq!(run_cli(out.path(), &args), EXIT_OK);
    let dir = only_dir(out.path(), "run-scm5-dpo");
    for seed in [42, 123, 456, 789, 1011] {
        assert!(dir.join(format!("seed-{seed}/result.json")).is_file());
    }
}

#[test]
fn rerun_from_echoed_config_is_byte_identical() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--policy", "dpo", "--seeds", "5"];
    args.extend(QUICK);
    assert_eq!(run_cli(out.path(), &args), EXIT_OK);
    let first = only_dir(out.path(), "run-");
    let again = tempfile::tempdir().unwrap();
    let cfg = first.join("config.toml").display().to_string();
    assert_eq!(run_cli(again.path(), &["run", "--config", &cfg]), EXIT_OK);
    let second = only_dir(again.path(), "run-");
    for f in ["summary.json", "seed-5/result.json", "seed-5/episodes.jsonl", "seed-5/losses.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bench_table_schema() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["bench", "--policies", "random-lookahead,random,roundrobin", "--seeds", "1,2,3"];
    args.extend(QUICK);
    assert_eq!(run_cli(out.path(), &args), EXIT_OK);
    let dir = only_dir(out.path(), "bench-scm5");
    let csv = dir.join("bench.csv");
    assert_eq!(read_csv_header(&csv), BENCH_COLUMNS);
    assert_eq!(BENCH_COLUMNS.len(), 11);
    let rows = read_csv_rows(&csv);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] == "4"));
    // Improvement of the method's median over each baseline's median.
    for r in &rows[1..] {
        let base: f64 = r[6].parse().unwrap();
        let method: f64 = rows[0][6].parse().unwrap();
        let imp: f64 = r[7].parse().unwrap();
        assert!((imp - 100.0 * (base - method) / base).abs() < 1e-4 * imp.abs().max(1.0));
    }
    assert!(dir.join("bench.txt").is_file());
}

#[test]
fn bench_needs_two_policies() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_cli(out.path(), &["bench", "--policies", "random"]), EXIT_USAGE);
}

#[test]
fn degenerate_cohens_d_reported_as_inf() {
    let d = stats::cohens_d(&[2.0, 2.0, 2.0], &[0.0, 0.0, 0.0]);
    assert_eq!(d, f64::INFINITY);
    assert_eq!(stats::fmt_value(d), "inf");
    assert_eq!(stats::improvement_pct(2.0, 0.5), 75.0);
}

#[test]
fn ablate_emits_five_rows() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--seeds", "3"];
    args.extend(QUICK);
    assert_eq!(run_cli(out.path(), &args), EXIT_OK);
    let dir = only_dir(out.path(), "ablate-scm5-dpo");
    let rows = read_csv_rows(&dir.join("ablation.csv"));
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        labels,
        ["full", "no-pernode-convergence", "no-root-learner", "no-dpo", "no-diversity"]
    );
    let episodes = |r: &Vec<String>| r[1].parse::<f64>().unwrap();
    assert_eq!(episodes(&rows[1]), FIXED_ABLATION_EPISODES as f64);
    for r in rows.iter().filter(|r| r[0] != "no-pernode-convergence") {
        assert_eq!(episodes(r), 4.0);
    }
    let full: f64 = rows[0][2].parse().unwrap();
    for r in &rows[1..] {
        let m: f64 = r[2].parse().unwrap();
        let deg: f64 = r[5].parse().unwrap();
        assert!((deg - 100.0 * (m - full) / full).abs() < 1e-4 * deg.abs().max(1.0));
    }
}

#[test]
fn plotdata_is_consistent_and_idempotent() {
    let out = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--policy", "random-lookahead", "--seeds", "7,8"];
    args.extend(QUICK);
    assert_eq!(run_cli(out.path(), &args), EXIT_OK);
    let dir = only_dir(out.path(), "run-");
    let d = dir.display().to_string();
    assert_eq!(run_cli(out.path(), &["plotdata", &d]), EXIT_OK);
    let plots = dir.join("plots");
    let snapshot = |p: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let first = snapshot(&plots);

    let curve = plots.join("curve-seed-7.csv");
    assert_eq!(read_csv_header(&curve).len(), 6);
    assert_eq!(read_csv_rows(&curve).len(), 4);
    let hist = read_csv_rows(&plots.join("histogram.csv"));
    for seed in ["7", "8"] {
        let total: usize = hist.iter().filter(|r| r[0] == seed).map(|r| r[2].parse::<usize>().unwrap()).sum();
        assert_eq!(total, 4);
    }
    assert_eq!(read_csv_rows(&plots.join("rewards.csv")).len(), 2 * 4 * 3);

    assert_eq!(run_cli(out.path(), &["plotdata", &d]), EXIT_OK);
    assert_eq!(snapshot(&plots), first);
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(run_cli(out.path(), &["run", "--policy", "oracle"]), EXIT_USAGE);
    assert_eq!(run_cli(out.path(), &["run", "--env", "mars", "--seeds", "1"]), EXIT_USAGE);
    assert_eq!(run_cli(out.path(), &["run", "--bogus-flag"]), EXIT_USAGE);
    assert_eq!(run_cli(out.path(), &["frobnicate"]), EXIT_USAGE);
    assert_eq!(run_cli(out.path(), &["--help"]), EXIT_OK);
    let empty = tempfile::tempdir().unwrap();
    let e = empty.path().display().to_string();
    assert_eq!(run_cli(out.path(), &["plotdata", &e]), EXIT_RUNTIME);
    assert_eq!(
        run_cli(out.path(), &["run", "--env", "archive", "--policy", "maxvar", "--seeds", "1", "--warm-start", "0", "--episodes", "1"]),
        EXIT_RUNTIME
    );
    assert_eq!(run_cli(out.path(), &["selftest", "--instances", "5"]), EXIT_OK);
}
