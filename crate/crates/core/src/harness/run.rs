use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{load_data, ExperimentConfig, LoadedData};
use crate::autograd::{Precision, Real};
use crate::error::{Error, Result};
use crate::metrics::{AccuracyReport, EfficiencyReport};
use crate::model::{self, ModelGraph};
use crate::prune::{self, IterationRecord, PruneAction, Splits, Strategy};
use crate::seed::{self, SeedLineage};
use crate::train::{self, TrainLog};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";

/// Run index used for the lineage of the initial (unpruned) model.
pub const INITIAL_RUN_INDEX: u64 = u64::MAX;

/// One row of `results.csv`. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub dataset: String,
    pub arch: String,
    pub strategy: String,
    pub target_compression: f64,
    pub achieved_compression: Option<f64>,
    pub speedup: Option<f64>,
    pub seed: u64,
    pub top1_before: f64,
    pub top1_after: Option<f64>,
    pub top5_before: f64,
    pub top5_after: Option<f64>,
    pub epochs_finetuned: usize,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub status: String,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "fingerprint",
    "dataset",
    "arch",
    "strategy",
    "target_compression",
    "achieved_compression",
    "speedup",
    "seed",
    "top1_before",
    "top1_after",
    "top5_before",
    "top5_after",
    "epochs_finetuned",
    "iterations",
    "wall_seconds",
    "status",
];

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// A [`RunRecord`] plus everything that only goes into `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    pub run_index: usize,
    pub record: RunRecord,
    pub failure: Option<String>,
    pub efficiency: Option<EfficiencyReport>,
    pub per_iteration: Vec<IterationRecord>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultsFile<'a> {
    pub schema_version: u32,
    pub crate_version: &'static str,
    pub fingerprint: &'a str,
    pub config: &'a ExperimentConfig,
    pub initial_checkpoint_id: Option<&'a str>,
    pub control: AccuracyReport,
    pub control_efficiency: &'a EfficiencyReport,
    pub madds_formula: &'static str,
    pub size_formula: &'static str,
    pub runs: &'a [RunDetail],
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub fingerprint: String,
    pub runs: Vec<RunDetail>,
    pub out_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| !r.record.is_ok()).count()
    }
}

/// The (strategy, compression, seed) of every run, seeds varying fastest.
pub fn run_grid(cfg: &ExperimentConfig) -> Vec<(Strategy, f64, u64)> {
    let mut grid = Vec::new();
    for &s in &cfg.strategies {
        for &c in &cfg.compressions {
            for &seed in &cfg.seeds {
                grid.push((s, c, seed));
            }
        }
    }
    grid
}

/// Fresh Glorot-initialised model trained with `cfg.initial_training`.
pub fn train_initial<T: Real>(cfg: &ExperimentConfig, data: &LoadedData<T>) -> Result<(ModelGraph<T>, TrainLog)> {
    let lineage = SeedLineage::new(cfg.master_seed, INITIAL_RUN_INDEX);
    let mut model = ModelGraph::<T>::build(cfg.arch, data.class_count())?;
    train::init_weights(&mut model, &mut lineage.stream(seed::INIT));
    let log = train::train_to_convergence(&mut model, &data.train, &data.val, &cfg.initial_training, &lineage)?;
    Ok((model, log))
}

fn initial_lineage_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "master_seed": cfg.master_seed,
        "run_index": INITIAL_RUN_INDEX,
        "role": "initial",
        "optimizer": cfg.initial_training,
    })
}

/// Train the initial model and save it as a checkpoint under `out`.
pub fn train_command(cfg: &ExperimentConfig, out: &Path) -> Result<(TrainLog, AccuracyReport)> {
    fn go<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<(TrainLog, AccuracyReport)> {
        let data = load_data::<T>(&cfg.dataset, cfg.arch, cfg.normalize)?;
        let (model, log) = train_initial(cfg, &data)?;
        let acc = train::evaluate(&model, &data.test)?;
        model::save(&model, out, Some(initial_lineage_json(cfg)))?;
        Ok((log, acc))
    }
    match cfg.precision {
        Precision::Bits32 => go::<f32>(cfg, out),
        Precision::Bits64 => go::<f64>(cfg, out),
    }
}

/// Execute every run of `cfg` on `jobs` worker threads and write
/// `results.csv` / `results.json` into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, jobs, &|_, _| {})
}

/// [`run_experiment`], calling `progress(run, total)` as each run finishes
/// (in completion order, from worker threads).
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    jobs: usize,
    progress: &(dyn Fn(&RunDetail, usize) + Sync),
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    match cfg.precision {
        Precision::Bits32 => run_typed::<f32>(cfg, jobs, progress),
        Precision::Bits64 => run_typed::<f64>(cfg, jobs, progress),
    }
}

fn run_typed<T: Real>(
    cfg: &ExperimentConfig,
    jobs: usize,
    progress: &(dyn Fn(&RunDetail, usize) + Sync),
) -> Result<ExperimentOutcome> {
    let out_dir = cfg.output_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let data = load_data::<T>(&cfg.dataset, cfg.arch, cfg.normalize)?;

    let (initial, checkpoint_id) = match &cfg.initial_checkpoint {
        Some(dir) => {
            let m = model::load::<T>(dir)?;
            if m.arch != Some(cfg.arch) || m.class_count != data.class_count() {
                return Err(Error::Config(format!(
                    "checkpoint {} does not match arch {} with {} classes",
                    dir.display(),
                    cfg.arch,
                    data.class_count()
                )));
            }
            (m, Some(model::checkpoint_id(dir)?))
        }
        None => {
            let (m, _) = train_initial(cfg, &data)?;
            if cfg.save_checkpoints {
                model::save(&m, &out_dir.join("initial"), Some(initial_lineage_json(cfg)))?;
            }
            (m, None)
        }
    };
    let fingerprint = cfg.fingerprint(checkpoint_id.as_deref())?;
    let control = train::evaluate(&initial, &data.test)?;
    let control_efficiency = EfficiencyReport::of(&initial)?;

    let grid = run_grid(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let ctx = RunContext { cfg, data: &data, initial: &initial, control, fingerprint: &fingerprint, out_dir: &out_dir };
    let runs: Vec<RunDetail> = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, &(s, c, seed))| {
                let run = ctx.run_one(i, s, c, seed);
                progress(&run, grid.len());
                run
            })
            .collect()
    });

    write_results_csv(&out_dir.join(RESULTS_CSV), runs.iter().map(|r| &r.record))?;
    let file = ResultsFile {
        schema_version: RESULTS_SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION"),
        fingerprint: &fingerprint,
        config: cfg,
        initial_checkpoint_id: checkpoint_id.as_deref(),
        control,
        control_efficiency: &control_efficiency,
        madds_formula: crate::metrics::MADDS_FORMULA,
        size_formula: crate::metrics::SIZE_FORMULA,
        runs: &runs,
    };
    let json_path = out_dir.join(RESULTS_JSON);
    fs::write(&json_path, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(&json_path, e))?;
    Ok(ExperimentOutcome { fingerprint, runs, out_dir })
}

struct RunContext<'a, T> {
    cfg: &'a ExperimentConfig,
    data: &'a LoadedData<T>,
    initial: &'a ModelGraph<T>,
    control: AccuracyReport,
    fingerprint: &'a str,
    out_dir: &'a Path,
}

impl<T: Real> RunContext<'_, T> {
    fn run_one(&self, index: usize, strategy: Strategy, compression: f64, seed: u64) -> RunDetail {
        let cfg = self.cfg;
        let started = Instant::now();
        let lineage = SeedLineage::new(cfg.master_seed, seed);
        let action = PruneAction {
            strategy,
            target_compression: compression,
            iterations: cfg.iterations,
            exclude_classifier: cfg.exclude_classifier,
            score_batch_size: cfg.score_batch_size,
        };
        let mut model = self.initial.clone();
        let splits = Splits { train: &self.data.train, val: &self.data.val, test: &self.data.test };
        let result = prune::prune_and_finetune(&mut model, &action, splits, &cfg.finetune, &lineage);

        let mut record = RunRecord {
            fingerprint: self.fingerprint.to_string(),
            dataset: cfg.dataset.id().to_string(),
            arch: cfg.arch.to_string(),
            strategy: strategy.to_string(),
            target_compression: compression,
            achieved_compression: None,
            speedup: None,
            seed,
            top1_before: self.control.top1,
            top1_after: None,
            top5_before: self.control.top5,
            top5_after: None,
            epochs_finetuned: 0,
            iterations: cfg.iterations,
            wall_seconds: 0.0,
            status: "ok".into(),
        };
        let mut detail = RunDetail {
            run_index: index,
            record: record.clone(),
            failure: None,
            efficiency: None,
            per_iteration: Vec::new(),
            checkpoint: None,
        };
        match result {
            Ok(outcome) => {
                record.achieved_compression = Some(outcome.final_efficiency.compression_ratio);
                record.speedup = Some(outcome.final_efficiency.theoretical_speedup);
                record.top1_after = outcome.final_accuracy.map(|a| a.top1);
                record.top5_after = outcome.final_accuracy.map(|a| a.top5);
                record.epochs_finetuned = outcome.epochs_finetuned;
                if let Some(f) = outcome.failure {
                    record.status = "diverged".into();
                    detail.failure = Some(f);
                }
                detail.efficiency = Some(outcome.final_efficiency);
                detail.per_iteration = outcome.iterations;
                if cfg.save_checkpoints && record.status == "ok" {
                    let dir = self
                        .out_dir
                        .join("runs")
                        .join(format!("{index:04}_{strategy}_c{compression}_s{seed}"));
                    let lineage_json = serde_json::json!({
                        "master_seed": cfg.master_seed,
                        "run_index": seed,
                        "grid_index": index,
                        "strategy": strategy,
                        "target_compression": compression,
                    });
                    match model::save(&model, &dir, Some(lineage_json)) {
                        Ok(()) => detail.checkpoint = Some(dir),
                        Err(e) => {
                            record.status = "error".into();
                            detail.failure = Some(format!("saving checkpoint: {e}"));
                        }
                    }
                }
            }
            Err(e) => {
                record.status = match e {
                    Error::InfeasibleCompression(_) => "infeasible",
                    _ => "error",
                }
                .into();
                detail.failure = Some(e.to_string());
            }
        }
        record.wall_seconds = started.elapsed().as_secs_f64();
        detail.record = record;
        detail
    }
}

pub fn write_results_csv<'a>(path: &Path, records: impl IntoIterator<Item = &'a RunRecord>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("unexpected columns {header:?}"),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format { path: path.into(), detail: format!("{other:?}") },
    }
}
