//! `bayesfed` command line: run experiments and sweeps, write CSV and JSON
//! artifacts.

mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use bayesfed::orchestrator::{
    load_data, run_federation, write_metrics_csv, write_retention_csv, write_timing_csv, DataSourceKind,
    ExperimentConfig, FederationOutcome, KEYS,
};
use bayesfed::uncertainty::default_fractions;
use bayesfed::{codec, ModelParams};
use clap::{Args, Parser, Subcommand};

use manifest::{InputDigest, RunManifest};

#[derive(Parser)]
#[command(name = "bayesfed", version, about = "Federated learning simulator for Bayesian neural classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (optionally repeated over consecutive seeds).
    Run {
        /// Config file, or a manifest.json written by an earlier run.
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        config: PathBuf,
        /// `key=v1,v2,...`; use `;` as separator when values contain commas.
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Override a config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Independent repeats with seeds seed, seed+1, ...
    #[arg(long)]
    repeats: Option<usize>,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

/// Failure classes mapped to exit codes: 2 for configuration problems,
/// 1 for failures while running.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// A fully resolved request: config, seeds and provenance.
struct Plan {
    config: ExperimentConfig,
    seeds: Vec<u64>,
    source: PathBuf,
    overrides: Vec<String>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Makes relative data paths relative to the config file's directory.
fn resolve_paths(cfg: &mut ExperimentConfig, base: &Path) {
    for p in [&mut cfg.data.train_path, &mut cfg.data.test_path].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

fn load_plan(path: &Path, common: &CommonArgs) -> Result<Plan, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let from_manifest = path.extension().is_some_and(|e| e == "json");
    let (mut config, mut seeds) = if from_manifest {
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: line {}: {e}", path.display(), e.line())))?;
        let cfg = ExperimentConfig::parse(&m.config)
            .map_err(|e| Failure::Config(format!("{} (embedded config): {e}", path.display())))?;
        (cfg, m.seeds)
    } else {
        let mut cfg =
            ExperimentConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        resolve_paths(&mut cfg, path.parent().unwrap_or(Path::new(".")));
        (cfg, Vec::new())
    };
    for o in &common.overrides {
        config.apply_override(o).map_err(|e| Failure::Config(e.to_string()))?;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = common.seed {
        config.seed = s;
        seeds.clear();
    }
    if common.repeats.is_some() || seeds.is_empty() {
        let n = common.repeats.unwrap_or(1);
        if n == 0 {
            return Err(Failure::Config("--repeats must be >= 1".into()));
        }
        seeds = (0..n as u64).map(|i| config.seed.wrapping_add(i)).collect();
    }
    Ok(Plan {
        config,
        seeds,
        source: path.to_path_buf(),
        overrides: common.overrides.clone(),
    })
}

fn input_digests(cfg: &ExperimentConfig) -> Result<Vec<InputDigest>, Failure> {
    let mut inputs = vec![InputDigest::of("config", cfg.to_text().as_bytes())];
    if cfg.data.source == DataSourceKind::Csv {
        for (name, p) in [("train", &cfg.data.train_path), ("test", &cfg.data.test_path)] {
            if let Some(p) = p {
                let bytes = fs::read(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
                inputs.push(InputDigest::of(name, &bytes));
            }
        }
    }
    Ok(inputs)
}

fn write_outcome(dir: &Path, out: &FederationOutcome) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let metrics = dir.join("metrics.csv");
    let retention = dir.join("retention.csv");
    let timing = dir.join("timing.csv");
    write_metrics_csv(&metrics, &out.rounds).map_err(runtime)?;
    write_retention_csv(&retention, &out.final_evaluation, &default_fractions()).map_err(runtime)?;
    write_timing_csv(&timing, &out.rounds).map_err(runtime)?;
    let mut written = vec![metrics, retention, timing];
    if let ModelParams::Posterior(post) = &out.global {
        let path = dir.join("global.bfps");
        let file = fs::File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let mut w = std::io::BufWriter::new(file);
        codec::write_binary(post, &mut w).map_err(runtime)?;
        w.flush().map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Final-round quantities summarised across repeats.
const SUMMARY_FIELDS: [&str; 5] = ["accuracy", "nll", "mean_entropy", "mean_aleatoric", "mean_epistemic"];

fn final_values(out: &FederationOutcome) -> [f64; 5] {
    let last = out.rounds.last().expect("rounds >= 1");
    [last.accuracy, last.nll, last.mean_entropy, last.mean_aleatoric, last.mean_epistemic]
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_summary(path: &Path, finals: &[[f64; 5]]) -> Result<(), Failure> {
    let mut text = String::from("metric,mean,std,n\n");
    for (j, name) in SUMMARY_FIELDS.iter().enumerate() {
        let xs: Vec<f64> = finals.iter().map(|f| f[j]).collect();
        let (m, s) = mean_std(&xs);
        text.push_str(&format!("{name},{m},{s},{}\n", xs.len()));
    }
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Runs every seed of `plan` into `out_dir`; returns the final-round values
/// per repeat.
fn execute(plan: &Plan, out_dir: &Path) -> Result<Vec<[f64; 5]>, Failure> {
    let started = unix_now();
    fs::create_dir_all(out_dir).map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    let inputs = input_digests(&plan.config)?;
    let mut artifacts = Vec::new();
    let mut finals = Vec::new();
    for (i, &seed) in plan.seeds.iter().enumerate() {
        let mut cfg = plan.config.clone();
        cfg.seed = seed;
        let (train, test) = load_data(&cfg).map_err(runtime)?;
        let out = run_federation(&cfg, &train, &test).map_err(runtime)?;
        let dir = if plan.seeds.len() == 1 {
            out_dir.to_path_buf()
        } else {
            out_dir.join(format!("repeat_{i}"))
        };
        artifacts.extend(write_outcome(&dir, &out)?);
        finals.push(final_values(&out));
        log::info!("seed {seed}: final accuracy {:.4}", out.rounds.last().map_or(0.0, |r| r.accuracy));
    }
    if plan.seeds.len() > 1 {
        let summary = out_dir.join("summary.csv");
        write_summary(&summary, &finals)?;
        artifacts.push(summary);
    }
    let manifest_path = out_dir.join("manifest.json");
    artifacts.push(manifest_path.clone());
    let manifest = RunManifest {
        tool: "bayesfed".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: plan.config.to_text(),
        config_source: plan.source.display().to_string(),
        overrides: plan.overrides.clone(),
        seeds: plan.seeds.clone(),
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(out_dir).unwrap_or(p).display().to_string())
            .collect(),
        input_hash: InputDigest::combined(&inputs),
        inputs,
        started_unix: started,
        finished_unix: unix_now(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    fs::write(&manifest_path, json + "\n").map_err(|e| runtime(format!("{}: {e}", manifest_path.display())))?;
    Ok(finals)
}

fn cmd_run(config: &Path, common: &CommonArgs) -> Result<(), Failure> {
    let plan = load_plan(config, common)?;
    let finals = execute(&plan, &common.out)?;
    let acc: Vec<f64> = finals.iter().map(|f| f[0]).collect();
    let (m, s) = mean_std(&acc);
    if acc.len() > 1 {
        println!("final accuracy {m:.4} ± {s:.4} over {} repeats -> {}", acc.len(), common.out.display());
    } else {
        println!("final accuracy {m:.4} -> {}", common.out.display());
    }
    Ok(())
}

/// Splits `key=v1,v2,...` (or `key=v1;v2;...`).
fn parse_axis(axis: &str) -> Result<(String, Vec<String>), Failure> {
    let (key, values) = axis
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("--axis `{axis}` is not key=v1,v2,...")))?;
    let key = key.trim().to_string();
    if !KEYS.contains(&key.as_str()) {
        return Err(Failure::Config(format!("--axis: unknown key `{key}`")));
    }
    let sep = if values.contains(';') { ';' } else { ',' };
    let values: Vec<String> = values
        .split(sep)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .collect();
    if values.is_empty() {
        return Err(Failure::Config(format!("--axis `{key}` has no values")));
    }
    Ok((key, values))
}

fn cell_dir_name(key: &str, value: &str) -> String {
    format!("{key}={value}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._=-".contains(c) { c } else { '_' })
        .collect()
}

fn cmd_sweep(config: &Path, axis: &str, common: &CommonArgs) -> Result<(), Failure> {
    let (key, values) = parse_axis(axis)?;
    // validate the base config once so a broken file fails fast
    load_plan(config, common)?;
    fs::create_dir_all(&common.out).map_err(|e| runtime(format!("{}: {e}", common.out.display())))?;
    let mut summary = String::from("value,status,final_accuracy,final_accuracy_std,final_nll,final_nll_std,dir\n");
    let mut worst: Option<Failure> = None;
    for value in &values {
        let dir_name = cell_dir_name(&key, value);
        let dir = common.out.join(&dir_name);
        let mut cell_args = CommonArgs {
            overrides: common.overrides.clone(),
            out: dir.clone(),
            repeats: common.repeats,
            seed: common.seed,
        };
        cell_args.overrides.push(format!("{key}={value}"));
        let result = load_plan(config, &cell_args).and_then(|plan| execute(&plan, &dir));
        let quoted = if value.contains(',') { format!("\"{value}\"") } else { value.clone() };
        match result {
            Ok(finals) => {
                let acc: Vec<f64> = finals.iter().map(|f| f[0]).collect();
                let nll: Vec<f64> = finals.iter().map(|f| f[1]).collect();
                let (am, asd) = mean_std(&acc);
                let (nm, nsd) = mean_std(&nll);
                summary.push_str(&format!("{quoted},ok,{am},{asd},{nm},{nsd},{dir_name}\n"));
                println!("{key}={value}: final accuracy {am:.4}");
            }
            Err(f) => {
                eprintln!("{key}={value}: {}", f.message());
                summary.push_str(&format!("{quoted},failed,,,,,{dir_name}\n"));
                if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                    worst = Some(f);
                }
            }
        }
    }
    let path = common.out.join("summary.csv");
    fs::write(&path, summary).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    match worst {
        Some(f) => Err(match f {
            Failure::Config(m) => Failure::Config(format!("sweep had failing cells; last config error: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("sweep had failing cells; last runtime error: {m}")),
        }),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, common } => cmd_run(config, common),
        Command::Sweep { config, axis, common } => cmd_sweep(config, axis, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
