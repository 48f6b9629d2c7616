use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use prunebench::harness::{self, ExperimentConfig, XMetric, YMetric, RESULTS_CSV};
use prunebench::meta;

#[derive(Parser)]
#[command(name = "prunebench", version, about = "Pruning experiments with reproducible, comparable results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the initial model of a config and save it as a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (strategy, compression, seed) of a config.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate results into tradeoff curves (mean and sample std over seeds).
    Curves {
        /// results.csv, or the directory containing it.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = XMetric::Compression)]
        x: XMetric,
        #[arg(long, value_enum, default_value_t = YMetric::Top1)]
        y: YMetric,
        /// Output directory; defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check results against the automatable evaluation checklist.
    Lint {
        #[arg(long)]
        results: PathBuf,
    },
    /// Normalize literature results and compute fragmentation statistics.
    Aggregate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default experiment config as JSON.
    DefaultConfig,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn results_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(RESULTS_CSV)
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let (log, acc) = harness::train_command(&cfg, &out)?;
            println!(
                "trained {} on {} for {} epochs (best epoch {}): test top-1 {:.4}, top-5 {:.4}",
                cfg.arch,
                cfg.dataset.id(),
                log.epochs.len(),
                log.best_epoch,
                acc.top1,
                acc.top5
            );
            println!("checkpoint written to {}", out.display());
        }
        Command::Run { config, seed, jobs, out } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let done = AtomicUsize::new(0);
            let outcome = harness::run_experiment_with(&cfg, jobs, &|run, total| {
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                let r = &run.record;
                let top1 = r.top1_after.map_or("-".to_string(), |a| format!("{a:.4}"));
                eprintln!(
                    "[{n}/{total}] {} c={} seed={} {} top1={top1} ({:.1}s)",
                    r.strategy, r.target_compression, r.seed, r.status, r.wall_seconds
                );
            })?;
            let failed = outcome.failed();
            println!(
                "{} runs, {} failed; fingerprint {}; results in {}",
                outcome.runs.len(),
                failed,
                outcome.fingerprint,
                outcome.out_dir.display()
            );
            for r in outcome.runs.iter().filter(|r| !r.record.is_ok()) {
                eprintln!(
                    "run {} ({} c={} seed={}): {} {}",
                    r.run_index,
                    r.record.strategy,
                    r.record.target_compression,
                    r.record.seed,
                    r.record.status,
                    r.failure.as_deref().unwrap_or("")
                );
            }
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Curves { results, x, y, out } => {
            let path = results_path(&results);
            let records = harness::read_results_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            let c = harness::curves(&records, x, y)?;
            let dir = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir)?;
            let file = dir.join(format!("curves_{x}_{y}.csv"));
            harness::write_curves_csv(&file, &c, x, y)?;
            for p in &c.points {
                let std = p.y_std.map_or("n/a (single run)".to_string(), |s| format!("{s:.4}"));
                println!("{:<20} c={:<6} {x}={:.3} {y}={:.4} std={std} n={}", p.strategy, p.target_compression, p.x, p.y_mean, p.n);
            }
            for g in &c.gaps {
                println!("{:<20} c={:<6} gap ({})", g.strategy, g.target_compression, g.statuses.join(","));
            }
            println!("wrote {}", file.display());
        }
        Command::Lint { results } => {
            let path = results_path(&results);
            let records = harness::read_results_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            let report = harness::lint(&records);
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Aggregate { records, edges, out } => {
            if !records.exists() {
                bail!("records file {} does not exist", records.display());
            }
            let s = meta::aggregate(&records, edges.as_deref(), &out)?;
            println!(
                "{} records from {} papers over {} (dataset, architecture) pairs; {} normalizable; outputs in {}",
                s.records,
                s.papers,
                s.pairs,
                s.normalizable,
                out.display()
            );
        }
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
