//! Command-line front end: `run`, `bench`, `ablate`, `plotdata` and
//! `selftest`.
//!
//! Every result directory receives the resolved `config.toml`, so a run can
//! be repeated from its output alone.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, SelectBy};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::orchestrator::{run_experiment, EpisodeLog, Experiment, RunResult};
use crate::policy::PolicyKind;
use crate::reward::ProbeMode;
use crate::rng;
use crate::scm::{build_benchmark_5node, Intervention, ValueRange};
use crate::stats;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "INTERVENE_OUT";

/// Episode budget used by `bench` unless overridden.
pub const BENCH_EPISODES: usize = 171;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "intervene", version, about = "Learned causal experimental design simulator")]
pub struct Cli {
    /// Output root for result directories.
    #[arg(long, global = true, env = OUT_ENV, default_value = "results")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one policy on one environment over a list of seeds.
    Run(RunArgs),
    /// Compare several policies at an equal episode budget.
    Bench(BenchArgs),
    /// Run the full configuration and the four single-component ablations.
    Ablate(RunArgs),
    /// Turn a run directory into tidy plotting CSVs.
    Plotdata(PlotArgs),
    /// Run the gradient and intervention-semantics checks.
    Selftest(SelftestArgs),
}

/// Flags shared by the experiment commands. Flags override values from
/// `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment: scm5, scm15, duffing, archive or custom.
    #[arg(long)]
    pub env: Option<String>,
    /// Policy: random, roundrobin, maxvar, ppo, dpo or random-lookahead.
    #[arg(long)]
    pub policy: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Fixed episode budget (disables convergence stopping).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Seeds run in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Candidates per episode.
    #[arg(long)]
    pub k: Option<usize>,
    /// Warm-start interventions.
    #[arg(long)]
    pub warm_start: Option<usize>,
    /// Lookahead probe source: oracle or self.
    #[arg(long, value_parser = parse_probe_mode)]
    pub probe_mode: Option<ProbeMode>,
    /// Execute by total reward or by information gain.
    #[arg(long, value_parser = parse_select_by)]
    pub select_by: Option<SelectBy>,
    /// Fixed 100-episode budget.
    #[arg(long)]
    pub no_pernode_convergence: bool,
    /// Roots trained as zero-input predictors on every row.
    #[arg(long)]
    pub no_root_learner: bool,
    /// Freeze the policy after the warm start.
    #[arg(long)]
    pub no_dpo: bool,
    /// Drop the diversity term from the reward.
    #[arg(long)]
    pub no_diversity: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Policies to compare; the first is the method, the rest are baselines.
    #[arg(long, value_delimiter = ',', default_value = "dpo,random,roundrobin,maxvar")]
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// A directory written by `run`.
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_probe_mode(s: &str) -> std::result::Result<ProbeMode, String> {
    match s {
        "oracle" => Ok(ProbeMode::Oracle),
        "self" => Ok(ProbeMode::SelfModel),
        _ => Err(format!("expected 'oracle' or 'self', got '{s}'")),
    }
}

fn parse_select_by(s: &str) -> std::result::Result<SelectBy, String> {
    match s {
        "reward" => Ok(SelectBy::Reward),
        "gain" => Ok(SelectBy::Gain),
        _ => Err(format!("expected 'reward' or 'gain', got '{s}'")),
    }
}

impl RunArgs {
    /// Loads `--config` (or defaults) and applies the flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(e) = &self.env {
            cfg.env.name = e.clone();
        }
        if let Some(p) = &self.policy {
            cfg.policy = p.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(e) = self.episodes {
            cfg.orchestrator.episodes = Some(e);
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(k) = self.k {
            cfg.orchestrator.k = k;
        }
        if let Some(w) = self.warm_start {
            cfg.orchestrator.warm_start = w;
        }
        if let Some(m) = self.probe_mode {
            cfg.orchestrator.probe.mode = m;
        }
        if let Some(s) = self.select_by {
            cfg.orchestrator.select_by = s;
        }
        cfg.ablation.no_pernode_convergence |= self.no_pernode_convergence;
        cfg.ablation.no_root_learner |= self.no_root_learner;
        cfg.ablation.no_dpo |= self.no_dpo;
        cfg.ablation.no_diversity |= self.no_diversity;
        cfg.policy.parse::<PolicyKind>()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::UnknownPolicy(_) | Error::UnknownEnvironment(_) | Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => {
            let cfg = a.resolve()?;
            let dir = cmd_run(&cfg, &cli.out)?;
            println!("{}", dir.display());
        }
        Command::Bench(b) => {
            let mut cfg = b.run.resolve()?;
            if b.run.episodes.is_none() && cfg.orchestrator.episodes.is_none() {
                cfg.orchestrator.episodes = Some(BENCH_EPISODES);
            }
            let table = cmd_bench(&cfg, &b.policies, &cli.out)?;
            print!("{}", table.to_text());
        }
        Command::Ablate(a) => {
            let cfg = a.resolve()?;
            let table = cmd_ablate(&cfg, &cli.out)?;
            print!("{}", table.to_text());
        }
        Command::Plotdata(p) => {
            let files = cmd_plotdata(&p.run_dir)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Selftest(s) => {
            let report = cmd_selftest(s.instances, s.seed);
            for line in &report.lines {
                println!("{line}");
            }
            if !report.passed {
                let failed = report.lines.iter().filter(|l| l.starts_with("FAIL")).count();
                return Err(Error::SelftestFailed(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn timestamp() -> String {
    chrono::Local::now().format("%Y%m%d-%H%M%S%.3f").to_string()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, contents: &str) -> Result<()> {
    fs::write(p, contents).map_err(|e| Error::io(p, e))
}

fn out_root(cfg: &RunConfig, default: &Path) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| default.to_path_buf())
}

/// Writes one experiment into `dir`: `config.toml`, `summary.json` and per
/// seed `result.json`, `episodes.jsonl` and `losses.csv`.
pub fn write_experiment(dir: &Path, cfg: &RunConfig, exp: &Experiment) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)?;
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&exp.summary)?)?;
    for run in &exp.runs {
        let sd = dir.join(format!("seed-{}", run.result.seed));
        create_dir(&sd)?;
        write_file(&sd.join("result.json"), &serde_json::to_string_pretty(&run.result)?)?;
        write_file(&sd.join("warm_start.json"), &serde_json::to_string_pretty(&run.warm_start)?)?;
        let mut jsonl = String::new();
        for ep in &run.episodes {
            jsonl.push_str(&serde_json::to_string(ep)?);
            jsonl.push('\n');
        }
        write_file(&sd.join("episodes.jsonl"), &jsonl)?;
        write_losses_csv(&sd.join("losses.csv"), &run.result.node_names, &run.episodes)?;
    }
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_losses_csv(path: &Path, nodes: &[String], episodes: &[EpisodeLog]) -> Result<()> {
    let mut header = vec!["episode".to_string()];
    header.extend(nodes.iter().cloned());
    let rows: Vec<Vec<String>> = episodes
        .iter()
        .map(|e| {
            let mut r = vec![e.episode.to_string()];
            r.extend(e.ledger.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn cmd_run(cfg: &RunConfig, default_out: &Path) -> Result<PathBuf> {
    let exp = run_experiment(cfg)?;
    let dir = out_root(cfg, default_out).join(format!("run-{}-{}-{}", cfg.env.name, cfg.policy, timestamp()));
    write_experiment(&dir, cfg, &exp)?;
    Ok(dir)
}

/// A table with a fixed header, printable as CSV or aligned text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            format!("{}\n", parts.join("  ").trim_end())
        };
        let mut s = line(&self.header);
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.header, &self.rows)
    }
}

pub const BENCH_COLUMNS: [&str; 11] = [
    "method",
    "episodes",
    "mean",
    "std",
    "ci_lo",
    "ci_hi",
    "median",
    "improvement_pct",
    "p_value",
    "significant",
    "cohens_d",
];

/// Per-policy totals and the comparison of the first policy against each
/// other one.
pub fn bench_table(results: &[(String, Vec<RunResult>)], episodes: usize) -> Table {
    let totals: Vec<Vec<f64>> = results
        .iter()
        .map(|(_, rs)| rs.iter().map(|r| r.final_total).collect())
        .collect();
    let comparisons = results.len().saturating_sub(1).max(1);
    let threshold = stats::bonferroni_threshold(0.05, comparisons);
    let method = &totals[0];
    let mut rows = Vec::new();
    for (i, (name, _)) in results.iter().enumerate() {
        let xs = &totals[i];
        let (ci_lo, ci_hi) = match stats::confidence_interval(xs, 0.95) {
            Ok((lo, hi)) => (stats::fmt_value(lo), stats::fmt_value(hi)),
            Err(_) => ("-".into(), "-".into()),
        };
        let mut row = vec![
            name.clone(),
            episodes.to_string(),
            stats::fmt_value(stats::mean(xs)),
            stats::fmt_value(stats::sample_std(xs)),
            ci_lo,
            ci_hi,
            stats::fmt_value(stats::median(xs)),
        ];
        if i == 0 {
            row.extend(["-", "-", "-", "-"].map(String::from));
        } else {
            row.push(stats::fmt_value(stats::improvement_pct(
                stats::median(xs),
                stats::median(method),
            )));
            match stats::paired_t_test(method, xs) {
                Ok(t) => {
                    row.push(stats::fmt_value(t.p_two_sided));
                    row.push((t.p_two_sided < threshold).to_string());
                }
                Err(_) => {
                    row.push("-".into());
                    row.push("false".into());
                }
            }
            row.push(stats::fmt_value(stats::cohens_d(xs, method)));
        }
        rows.push(row);
    }
    Table {
        header: BENCH_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

pub fn cmd_bench(cfg: &RunConfig, policies: &[String], default_out: &Path) -> Result<Table> {
    if policies.len() < 2 {
        return Err(crate::config::ConfigError::Invalid("bench needs at least two policies".into()).into());
    }
    for p in policies {
        p.parse::<PolicyKind>()?;
    }
    let dir = out_root(cfg, default_out).join(format!("bench-{}-{}", cfg.env.name, timestamp()));
    let mut results = Vec::new();
    for p in policies {
        let mut c = cfg.clone();
        c.policy = p.clone();
        let exp = run_experiment(&c)?;
        write_experiment(&dir.join(p), &c, &exp)?;
        results.push((p.clone(), exp.runs.into_iter().map(|r| r.result).collect::<Vec<_>>()));
    }
    let episodes = cfg.fixed_episodes().unwrap_or(cfg.orchestrator.convergence.max_episodes);
    let table = bench_table(&results, episodes);
    table.write_csv(&dir.join("bench.csv"))?;
    write_file(&dir.join("bench.txt"), &table.to_text())?;
    Ok(table)
}

/// The full configuration followed by each single-component ablation.
pub fn ablation_variants(base: &RunConfig) -> Vec<RunConfig> {
    let mut full = base.clone();
    full.ablation = Default::default();
    let mut out = vec![full.clone()];
    for i in 0..4 {
        let mut c = full.clone();
        match i {
            0 => c.ablation.no_pernode_convergence = true,
            1 => c.ablation.no_root_learner = true,
            2 => c.ablation.no_dpo = true,
            _ => c.ablation.no_diversity = true,
        }
        out.push(c);
    }
    out
}

pub fn ablation_table(rows: &[(String, Vec<RunResult>)]) -> Table {
    let full_mean = stats::mean(&rows[0].1.iter().map(|r| r.final_total).collect::<Vec<_>>());
    let body = rows
        .iter()
        .enumerate()
        .map(|(i, (label, rs))| {
            let totals: Vec<f64> = rs.iter().map(|r| r.final_total).collect();
            let eps: Vec<f64> = rs.iter().map(|r| r.episodes as f64).collect();
            let m = stats::mean(&totals);
            vec![
                label.clone(),
                stats::fmt_value(stats::mean(&eps)),
                stats::fmt_value(m),
                stats::fmt_value(stats::sample_std(&totals)),
                stats::fmt_value(stats::median(&totals)),
                if i == 0 {
                    "-".into()
                } else {
                    stats::fmt_value(100.0 * (m - full_mean) / full_mean)
                },
            ]
        })
        .collect();
    Table {
        header: ["config", "episodes", "mean", "std", "median", "degradation_pct"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: body,
    }
}

pub fn cmd_ablate(cfg: &RunConfig, default_out: &Path) -> Result<Table> {
    let dir = out_root(cfg, default_out).join(format!("ablate-{}-{}-{}", cfg.env.name, cfg.policy, timestamp()));
    let mut rows = Vec::new();
    for c in ablation_variants(cfg) {
        let exp = run_experiment(&c)?;
        let label = c.ablation.label().to_string();
        write_experiment(&dir.join(&label), &c, &exp)?;
        rows.push((label, exp.runs.into_iter().map(|r| r.result).collect::<Vec<_>>()));
    }
    let table = ablation_table(&rows);
    table.write_csv(&dir.join("ablation.csv"))?;
    write_file(&dir.join("ablation.txt"), &table.to_text())?;
    Ok(table)
}

fn seed_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("episodes.jsonl").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingLogs(run_dir.display().to_string()));
    }
    Ok(dirs)
}

fn read_episodes(path: &Path) -> Result<Vec<EpisodeLog>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes `curves.csv`, `histogram.csv` and `rewards.csv` in tidy long form
/// under `run_dir/plots`, plus one wide `curve-seed-N.csv` per seed.
pub fn cmd_plotdata(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let dirs = seed_dirs(run_dir)?;
    let plots = run_dir.join("plots");
    create_dir(&plots)?;
    let mut curves = Vec::new();
    let mut hist: Vec<Vec<String>> = Vec::new();
    let mut rewards = Vec::new();
    let mut written = Vec::new();
    for d in &dirs {
        let result: RunResult = {
            let p = d.join("result.json");
            let s = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_str(&s)?
        };
        let episodes = read_episodes(&d.join("episodes.jsonl"))?;
        let seed = result.seed.to_string();
        let wide = plots.join(format!("curve-seed-{seed}.csv"));
        write_losses_csv(&wide, &result.node_names, &episodes)?;
        written.push(wide);
        let mut counts = vec![0usize; result.action_names.len()];
        for e in &episodes {
            counts[e.action] += 1;
            for (n, v) in result.node_names.iter().zip(&e.ledger) {
                curves.push(vec![seed.clone(), e.episode.to_string(), n.clone(), v.to_string()]);
            }
            if let Some(r) = e.candidates[e.executed].reward {
                for (comp, v) in [
                    ("info_gain", r.info_gain),
                    ("importance", r.importance),
                    ("diversity", r.diversity),
                ] {
                    rewards.push(vec![seed.clone(), e.episode.to_string(), comp.to_string(), v.to_string()]);
                }
            }
        }
        for (a, c) in result.action_names.iter().zip(&counts) {
            hist.push(vec![seed.clone(), a.clone(), c.to_string()]);
        }
    }
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    for (name, header, rows) in [
        ("curves.csv", s(&["seed", "episode", "node", "loss"]), curves),
        ("histogram.csv", s(&["seed", "action", "count"]), hist),
        ("rewards.csv", s(&["seed", "episode", "component", "value"]), rewards),
    ] {
        let p = plots.join(name);
        write_csv(&p, &header, &rows)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub lines: Vec<String>,
    pub passed: bool,
}

/// Gradient checks plus a do-operator check on the 5-node model.
pub fn cmd_selftest(instances: usize, seed: u64) -> SelftestReport {
    let mut lines = Vec::new();
    let mut passed = true;
    let mut r = rng::from_seed(seed);
    for c in gradcheck::run_all(instances, &mut r) {
        let ok = c.passed(1e-4);
        passed &= ok;
        lines.push(format!(
            "{} gradient {}: max relative error {:.3e} over {} instances",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.instances
        ));
    }
    let scm = build_benchmark_5node();
    let range = ValueRange::default();
    let mut ok = true;
    for node in 0..scm.graph().n_nodes() {
        for &v in &[-4.0, 0.0, 3.5] {
            match scm.sample(Some(Intervention::new(node, v)), 200, range, &mut r) {
                Ok(ds) => ok &= ds.column(node).iter().all(|&x| x == v),
                Err(_) => ok = false,
            }
        }
    }
    let zn = scm.zero_noise();
    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
    if let Ok(ds) = zn.sample(None, 50, range, &mut r) {
        for row in 0..ds.n_rows() {
            let full = ds.row(row);
            for node in 0..zn.graph().n_nodes() {
                if !zn.graph().is_root(node) {
                    *sums.entry(node).or_default() += (zn.eval_node(node, &full) - full[node]).abs();
                }
            }
        }
    } else {
        ok = false;
    }
    ok &= sums.values().all(|&s| s == 0.0);
    passed &= ok;
    lines.push(format!(
        "{} intervention semantics: clamped columns constant, zero-noise rows satisfy their mechanisms",
        if ok { "PASS" } else { "FAIL" }
    ));
    let _ = std::io::stdout().flush();
    SelftestReport { lines, passed }
}
