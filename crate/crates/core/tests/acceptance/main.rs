//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. MNIST criteria need the IDX files under `data/mnist` (see
//! `scripts/fetch_mnist.sh`).

#[path = "../common/mod.rs"]
mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use prunebench::autograd::ops::{self, ConvGeom};
use prunebench::data::synth_blobs;
use prunebench::harness::{
    self, curves, lint, ranking_at, run_experiment_with, write_curves_csv, CurvePoint, DatasetCfg, ExperimentConfig,
    RunDetail, RunRecord, XMetric, YMetric, CSV_COLUMNS,
};
use prunebench::meta::{normalize_metrics, standardize_baselines, ReportedResult, Unit, XKind, YKind};
use prunebench::metrics::{count_madds, EfficiencyReport};
use prunebench::model::LayerSpec;
use prunebench::prune::{self, prune_count, ScoreMap};
use prunebench::train::{self, Optimizer, OptimizerCfg, OptimizerKind};
use prunebench::{ArchId, ModelGraph, SeedLineage, Strategy};
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn run(&mut self, n: usize, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) {
        eprintln!("criterion {n}: {title} ...");
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = match (result, budget) {
            (Ok(d), Some(b)) if took > b => Err(format!("{d}; took {took:.1?}, budget {b:?}")),
            (r, _) => r,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failed.push(n);
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} [{tag}] {title}: {detail} ({:.1}s)", took.as_secs_f64());
    }
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Check {
    let cases = common::grad::all_cases(1000);
    ensure(cases.len() >= 100, || format!("only {} cases", cases.len()))?;
    let worst = cases.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).unwrap();
    ensure(worst.rel_err < 1e-5, || format!("{} has relative error {:e}", worst.name, worst.rel_err))?;
    Ok(format!("{} cases, worst relative error {:.2e} ({})", cases.len(), worst.rel_err, worst.name))
}

// ---------------------------------------------------------------- 2

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / (1.0 + y.abs())).fold(0.0, f64::max)
}

fn oracle_equivalence() -> Check {
    let mut r = common::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let (batch, inp, out) = (r.gen_range(1..5), r.gen_range(1..24), r.gen_range(1..24));
        let x = common::uniform(&mut r, batch * inp, -1.0, 1.0);
        let w = common::uniform(&mut r, inp * out, -1.0, 1.0);
        let b = common::uniform(&mut r, out, -1.0, 1.0);
        worst = worst.max(max_abs_diff(&ops::dense_forward(&x, batch, inp, &w, &b, out), &common::naive_dense(&x, batch, inp, &w, &b, out)));
    }
    let mut convs = 0;
    while convs < 60 {
        let g = ConvGeom {
            cin: r.gen_range(1..4),
            cout: r.gen_range(1..5),
            kh: r.gen_range(1..6),
            kw: r.gen_range(1..6),
            stride: r.gen_range(1..4),
            pad: r.gen_range(0..3),
            h: r.gen_range(1..12),
            w: r.gen_range(1..12),
        };
        if g.validate().is_err() {
            continue;
        }
        let batch = r.gen_range(1..3);
        let x = common::uniform(&mut r, batch * g.in_len(), -1.0, 1.0);
        let w = common::uniform(&mut r, g.weight_len(), -1.0, 1.0);
        let b = common::uniform(&mut r, g.cout, -1.0, 1.0);
        worst = worst.max(max_abs_diff(&ops::conv2d_forward(&x, batch, &g, &w, &b), &common::naive_conv(&x, batch, &g, &w, &b)));
        convs += 1;
    }
    ensure(worst <= 1e-12, || format!("forward differs from the naive oracle by {worst:e}"))?;

    let mut counted = vec![];
    for arch in ArchId::ALL {
        for (k, fraction) in [0.0, 0.3, 0.9].into_iter().enumerate() {
            let mut m = ModelGraph::<f64>::build(arch, 10).unwrap();
            train::init_weights(&mut m, &mut SeedLineage::new(k as u64, 0).stream("init"));
            for p in m.params_mut() {
                let mask = (0..p.numel()).map(|_| !r.gen_bool(fraction)).collect();
                p.set_mask(mask).unwrap();
            }
            let x = common::random_input(&m, 1, k as u64);
            let (logits, c) = common::instrumented_forward(&m, x.data());
            let d = max_abs_diff(m.predict(&x).unwrap().data(), &logits);
            ensure(d <= 1e-12, || format!("{arch} forward differs from instrumented oracle by {d:e}"))?;
            let got = count_madds(&m);
            ensure(got == (c.all, c.unmasked), || format!("{arch} at {fraction}: count_madds {got:?}, counter ({}, {})", c.all, c.unmasked))?;
            if k == 0 {
                counted.push(format!("{arch} {}", c.all));
            }
        }
    }
    Ok(format!("120 layer cases within {worst:.1e}; dense madds {}", counted.join(", ")))
}

// ---------------------------------------------------------------- 3

fn oracle_lowest(scores: &[Vec<f64>], f: f64) -> Vec<Vec<bool>> {
    let mut all: Vec<(f64, usize, usize)> =
        scores.iter().enumerate().flat_map(|(t, s)| s.iter().enumerate().map(move |(i, &v)| (v, t, i))).collect();
    let k = (f * all.len() as f64).round_ties_even() as usize;
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut m: Vec<Vec<bool>> = scores.iter().map(|s| vec![true; s.len()]).collect();
    for &(_, t, i) in &all[..k] {
        m[t][i] = false;
    }
    m
}

fn tiny_model(seed: u64) -> ModelGraph<f64> {
    let specs = [LayerSpec::Flatten, LayerSpec::dense("fc1", 12), LayerSpec::Relu, LayerSpec::dense("fc2", 3)];
    let mut m = ModelGraph::<f64>::sequential("tiny", vec![1, 1, 9], 3, &specs).unwrap();
    train::init_weights(&mut m, &mut SeedLineage::new(seed, 0).stream("init"));
    m
}

fn mask_semantics() -> Check {
    let mut r = common::rng(3);
    let cases = 300;
    for _ in 0..cases {
        let scores: Vec<Vec<f64>> = (0..r.gen_range(1..5))
            .map(|_| (0..r.gen_range(1..40)).map(|_| r.gen_range(0..6) as f64 * 0.25).collect())
            .collect();
        let map = ScoreMap::from_scores(scores.iter().enumerate().map(|(i, s)| (format!("t{i}"), s.clone())));
        let f = r.gen_range(0.0..0.99);
        let g = prune::select_global(&map, f).map_err(|e| e.to_string())?;
        let n: usize = scores.iter().map(Vec::len).sum();
        ensure(g.iter().flatten().filter(|m| !**m).count() == prune_count(f, n), || "global nnz mismatch".into())?;
        ensure(g == oracle_lowest(&scores, f), || format!("global selection differs from oracle on {scores:?} f={f}"))?;
        let l = prune::select_layerwise(&map, f).map_err(|e| e.to_string())?;
        for (t, s) in scores.iter().enumerate() {
            ensure(l[t] == oracle_lowest(std::slice::from_ref(s), f)[0], || format!("layerwise differs from oracle on {s:?} f={f}"))?;
        }
    }

    for seed in 0..40 {
        let mut m = tiny_model(seed);
        let x = common::random_input(&m, 3, seed);
        let mut f = 0.0;
        for step in 0..4 {
            f += r.gen_range(0.05..0.2);
            let before: Vec<Vec<bool>> = m.params().map(|p| p.mask().to_vec()).collect();
            let s = prune::score_magnitude(&m, false);
            let u = match step % 3 {
                0 => prune::select_global(&s, f),
                1 => prune::select_layerwise(&s, f),
                _ => prune::select_random(&s, f, &mut SeedLineage::new(seed, step).stream("random_prune")),
            }
            .map_err(|e| e.to_string())?;
            prune::apply_masks(&mut m, &s, u).map_err(|e| e.to_string())?;
            for (p, old) in m.params().zip(before) {
                ensure(p.mask().iter().zip(old).all(|(&n, o)| o || !n), || "a pruned weight came back".into())?;
            }
        }
        let y0 = m.predict(&x).unwrap();
        for p in m.params_mut() {
            let mask = p.mask().to_vec();
            for (w, keep) in p.weights.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *w = r.gen_range(-1e3..1e3);
                }
            }
        }
        ensure(y0.data() == m.predict(&x).unwrap().data(), || "forward depends on masked weights".into())?;
        let p = m.params_mut().next().unwrap();
        if let Some(i) = p.mask().iter().position(|&k| !k) {
            let mut revived = p.mask().to_vec();
            revived[i] = true;
            ensure(p.set_mask(revived).is_err(), || "mask revival accepted".into())?;
        }
    }

    let train_set = synth_blobs::<f64>(3, 30, 9, 1).unwrap().reshape_examples(&[1, 1, 9]).unwrap();
    let val = synth_blobs::<f64>(3, 10, 9, 2).unwrap().reshape_examples(&[1, 1, 9]).unwrap();
    for kind in [OptimizerKind::Adam, OptimizerKind::SgdNesterov] {
        let mut m = tiny_model(4);
        let s = prune::score_magnitude(&m, false);
        let u = prune::select_global(&s, 0.6).unwrap();
        prune::apply_masks(&mut m, &s, u).unwrap();
        let frozen: Vec<Vec<(u64, bool)>> =
            m.params().map(|p| p.weights.data().iter().map(|w| w.to_bits()).zip(p.mask().iter().copied()).collect()).collect();
        let cfg = OptimizerCfg { kind, lr: 0.05, batch_size: 8, max_epochs: 3, early_stop_patience: 10, ..OptimizerCfg::adam_recipe() };
        let mut opt = Optimizer::new(&cfg).unwrap();
        train::finetune(&mut m, &train_set, &val, &mut opt, SeedLineage::new(0, 0).stream("shuffle")).map_err(|e| e.to_string())?;
        for (p, was) in m.params().zip(&frozen) {
            for (w, &(bits, keep)) in p.weights.data().iter().zip(was) {
                ensure(keep || w.to_bits() == bits, || format!("masked weight moved under {kind:?}"))?;
            }
        }
    }

    let fixture = ScoreMap::from_scores([("layer1", vec![1.0, 0.5]), ("layer2", vec![0.4, 0.01])]);
    let g = prune::select_global(&fixture, 0.5).unwrap();
    let l = prune::select_layerwise(&fixture, 0.5).unwrap();
    ensure(g == vec![vec![true, true], vec![false, false]], || format!("global fixture gave {g:?}"))?;
    ensure(l == vec![vec![true, false], vec![true, false]], || format!("layerwise fixture gave {l:?}"))?;
    Ok(format!("{cases} selection cases match the k-lowest oracle; 40 prune sequences monotone and forward-invariant; immobile under adam and nesterov; fixture disagrees"))
}

// ---------------------------------------------------------------- 4, 5, 10

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn mnist_cfg(lr: f64, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetCfg::Mnist { path: mnist_dir(), val_fraction: 1.0 / 12.0 },
        arch: ArchId::Mlp300_100,
        initial_training: OptimizerCfg { lr, max_epochs: 30, early_stop_patience: 5, ..OptimizerCfg::adam_recipe() },
        strategies: vec![Strategy::GlobalMagnitude],
        finetune: OptimizerCfg::adam_recipe(),
        save_checkpoints: false,
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

struct Weights {
    dir: PathBuf,
    top1: f64,
}

struct Mnist {
    _tmp: tempfile::TempDir,
    a: Weights,
    b: Weights,
}

fn train_weights(lr: f64, dir: PathBuf) -> std::result::Result<Weights, String> {
    let cfg = mnist_cfg(lr, &dir);
    let (log, acc) = harness::train_command(&cfg, &dir).map_err(|e| e.to_string())?;
    eprintln!("  trained lr={lr}: {} epochs, test top-1 {:.4}", log.epochs.len(), acc.top1);
    Ok(Weights { dir, top1: acc.top1 })
}

fn prepare_mnist() -> std::result::Result<Mnist, String> {
    for f in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
        if !mnist_dir().join(f).exists() {
            return Err(format!("MNIST file {f} missing under {}; run scripts/fetch_mnist.sh", mnist_dir().display()));
        }
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = train_weights(1e-3, tmp.path().join("weights_a"))?;
    let b = train_weights(1e-4, tmp.path().join("weights_b"))?;
    Ok(Mnist { _tmp: tmp, a, b })
}

fn run_quiet(cfg: &ExperimentConfig) -> std::result::Result<Vec<RunRecord>, String> {
    let progress = |run: &RunDetail, total: usize| {
        let r = &run.record;
        eprintln!(
            "  [{}/{total}] {} c={} seed={} {} top1={}",
            run.run_index + 1,
            r.strategy,
            r.target_compression,
            r.seed,
            r.status,
            r.top1_after.map_or("-".into(), |a| format!("{a:.4}"))
        );
    };
    let out = run_experiment_with(cfg, 1, &progress).map_err(|e| e.to_string())?;
    Ok(out.runs.into_iter().map(|r| r.record).collect())
}

fn point(c: &[CurvePoint], strategy: Strategy, target: f64) -> std::result::Result<&CurvePoint, String> {
    c.iter()
        .find(|p| p.strategy == strategy.as_str() && p.target_compression == target)
        .ok_or_else(|| format!("no successful {strategy} runs at {target}x"))
}

/// Records for criteria 4 and 5: one-shot global magnitude and random
/// pruning of Weights A at 4x and 16x, full fine-tuning recipe, 3 seeds.
fn magnitude_vs_random(m: &Mnist, out: &Path) -> std::result::Result<Vec<CurvePoint>, String> {
    ensure(m.a.top1 >= 0.97, || format!("Weights A reach only {:.4} test top-1", m.a.top1))?;
    let cfg = ExperimentConfig {
        initial_checkpoint: Some(m.a.dir.clone()),
        strategies: vec![Strategy::GlobalMagnitude, Strategy::Random],
        compressions: vec![4.0, 16.0],
        ..mnist_cfg(1e-3, out)
    };
    let recs = run_quiet(&cfg)?;
    Ok(curves(&recs, XMetric::Compression, YMetric::Top1).map_err(|e| e.to_string())?.points)
}

fn pruning_works(m: &Mnist, pts: &[CurvePoint]) -> Check {
    let p = point(pts, Strategy::GlobalMagnitude, 4.0)?;
    ensure(p.n == 3, || format!("{} of 3 seeds succeeded", p.n))?;
    let gap = m.a.top1 - p.y_mean;
    ensure(gap <= 0.01, || format!("pruned mean {:.4} is {:.2} pp below control {:.4}", p.y_mean, gap * 100.0, m.a.top1))?;
    Ok(format!(
        "control {:.4}; global magnitude at 4x (achieved {:.2}x) {:.4} +/- {:.4}, {:+.2} pp",
        m.a.top1,
        p.x,
        p.y_mean,
        p.y_std.unwrap_or(f64::NAN),
        -gap * 100.0
    ))
}

fn magnitude_beats_random(pts: &[CurvePoint]) -> Check {
    let g = point(pts, Strategy::GlobalMagnitude, 16.0)?;
    let r = point(pts, Strategy::Random, 16.0)?;
    ensure(g.n == 3 && r.n == 3, || "not every seed succeeded".into())?;
    let lead = g.y_mean - r.y_mean;
    ensure(lead >= 0.05, || format!("magnitude {:.4} vs random {:.4}: lead {:.2} pp", g.y_mean, r.y_mean, lead * 100.0))?;
    Ok(format!("at 16x global magnitude {:.4}, random {:.4}, lead {:.2} pp", g.y_mean, r.y_mean, lead * 100.0))
}

/// Fine-tuning budget for the confounding study: one epoch per run.
fn confounding_cfg(weights: &Weights, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        initial_checkpoint: Some(weights.dir.clone()),
        strategies: vec![Strategy::GlobalMagnitude, Strategy::LayerwiseMagnitude],
        compressions: vec![2.0, 4.0, 8.0, 16.0, 32.0],
        finetune: OptimizerCfg { max_epochs: 1, ..OptimizerCfg::adam_recipe() },
        ..mnist_cfg(1e-3, out)
    }
}

fn initial_model_confounding(m: &Mnist, out: &Path) -> Check {
    let mut per_weights = vec![];
    for (label, w) in [("A", &m.a), ("B", &m.b)] {
        let dir = out.join(format!("weights_{label}"));
        let recs = run_quiet(&confounding_cfg(w, &dir))?;
        let raw = curves(&recs, XMetric::Compression, YMetric::Top1).map_err(|e| e.to_string())?;
        let delta = curves(&recs, XMetric::Compression, YMetric::DeltaTop1).map_err(|e| e.to_string())?;
        write_curves_csv(&dir.join("curves_compression_top1.csv"), &raw, XMetric::Compression, YMetric::Top1).map_err(|e| e.to_string())?;
        write_curves_csv(&dir.join("curves_compression_delta_top1.csv"), &delta, XMetric::Compression, YMetric::DeltaTop1)
            .map_err(|e| e.to_string())?;
        ensure(raw.points.len() == 10 && delta.points.len() == 10, || format!("weights {label}: {} curve points", raw.points.len()))?;
        per_weights.push(raw.points);
    }
    let mut differing = vec![];
    let mut rows = vec![];
    for a in &per_weights[0] {
        let b = per_weights[1]
            .iter()
            .find(|b| b.strategy == a.strategy && b.target_compression == a.target_compression)
            .ok_or("unpaired curve point")?;
        let std = a.y_std.unwrap_or(0.0).max(b.y_std.unwrap_or(0.0));
        let diff = (a.y_mean - b.y_mean).abs();
        rows.push(format!("{}@{}x A={:.4} B={:.4}", a.strategy, a.target_compression, a.y_mean, b.y_mean));
        if diff > std {
            differing.push((a.strategy.clone(), a.target_compression, diff, std));
        }
    }
    eprintln!("  {}", rows.join("; "));
    ensure(!differing.is_empty(), || "A and B curves agree within seed std everywhere".into())?;
    let (s, c, d, sd) = &differing[0];
    Ok(format!(
        "{} of 10 points differ by more than the seed std (e.g. {s} at {c}x: {:.2} pp vs std {:.2} pp); raw and delta curves written",
        differing.len(),
        d * 100.0,
        sd * 100.0
    ))
}

// ---------------------------------------------------------------- 6, 9

fn strip_wall(csv: &str) -> Vec<String> {
    let col = CSV_COLUMNS.iter().position(|c| *c == "wall_seconds").unwrap();
    csv.lines()
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != col).map(|(_, f)| f).collect::<Vec<_>>().join(","))
        .collect()
}

fn determinism(out: &Path) -> Check {
    let mut csvs = vec![];
    for (name, jobs) in [("first", 1), ("second", 2)] {
        let cfg = ExperimentConfig { output_dir: out.join(name), ..ExperimentConfig::default() };
        let o = harness::run_experiment(&cfg, jobs).map_err(|e| e.to_string())?;
        csvs.push(strip_wall(&fs::read_to_string(o.out_dir.join(harness::RESULTS_CSV)).map_err(|e| e.to_string())?));
    }
    ensure(csvs[0] == csvs[1], || {
        let i = csvs[0].iter().zip(&csvs[1]).position(|(a, b)| a != b).unwrap_or(0);
        format!("line {i} differs:\n  {}\n  {}", csvs[0].get(i).map_or("", String::as_str), csvs[1].get(i).map_or("", String::as_str))
    })?;
    Ok(format!("{} rows identical across two executions (1 and 2 worker threads), wall_seconds excluded", csvs[0].len() - 1))
}

fn fixture_record(strategy: &str, c: f64, seed: u64) -> RunRecord {
    RunRecord {
        fingerprint: "f".into(),
        dataset: "synth_blobs".into(),
        arch: "lenet_conv".into(),
        strategy: strategy.into(),
        target_compression: c,
        achieved_compression: Some(c),
        speedup: Some(c * 0.8),
        seed,
        top1_before: 0.9,
        top1_after: Some(0.85),
        top5_before: 0.99,
        top5_after: Some(0.98),
        epochs_finetuned: 3,
        iterations: 1,
        wall_seconds: 1.0,
        status: "ok".into(),
    }
}

fn checklist_linter(default_results: &Path) -> Check {
    let good: Vec<RunRecord> = ["global_magnitude", "random"]
        .iter()
        .flat_map(|s| [2.0, 4.0, 8.0, 16.0, 32.0].into_iter().flat_map(move |c| (0..3).map(move |seed| fixture_record(s, c, seed))))
        .collect();
    ensure(lint(&good).passed(), || format!("clean fixture fails:\n{}", lint(&good)))?;
    let breakers: Vec<(&str, fn(&mut Vec<RunRecord>))> = vec![
        ("operating_points", |v| v.retain(|r| r.target_compression != 4.0)),
        ("extreme_compression", |v| v.iter_mut().for_each(|r| r.target_compression = r.target_compression.min(8.0))),
        ("raw_accuracy", |v| v[0].top1_after = Some(1.5)),
        ("multiple_runs", |v| v.retain(|r| r.seed == 0)),
        ("error_bars", |v| v.retain(|r| r.seed == 0 || r.target_compression != 2.0)),
        ("flop_counts", |v| v[3].speedup = None),
        ("random_baseline", |v| v.retain(|r| r.strategy != "random")),
        ("magnitude_baseline", |v| v.retain(|r| r.strategy == "random")),
        ("control_metrics", |v| v[5].top1_before = f64::NAN),
    ];
    for (id, breaker) in &breakers {
        let mut v = good.clone();
        breaker(&mut v);
        let report = lint(&v);
        let item = report.item(id).ok_or_else(|| format!("no lint item {id}"))?;
        ensure(!item.passed, || format!("violation of {id} not flagged"))?;
    }
    let recs = harness::read_results_csv(&default_results.join(harness::RESULTS_CSV)).map_err(|e| e.to_string())?;
    let report = lint(&recs);
    ensure(report.passed(), || format!("default-config output fails:\n{report}"))?;
    Ok(format!("{} violation fixtures flagged; default config output passes all {} items", breakers.len(), report.items.len()))
}

// ---------------------------------------------------------------- 7

fn prune_first(m: &mut ModelGraph<f32>, tensor: usize, keep: usize) {
    let p = m.params_mut().nth(tensor).unwrap();
    let n = p.numel();
    p.set_mask((0..n).map(|i| i < keep).collect()).unwrap();
}

fn metric_disagreement() -> Check {
    // X prunes dense weights (1 madd each), Y prunes conv weights (one madd
    // per output position each).
    let mut x = ModelGraph::<f32>::build(ArchId::LenetConv, 10).unwrap();
    prune_first(&mut x, 2, 30_720 - 30_000);
    let mut y = ModelGraph::<f32>::build(ArchId::LenetConv, 10).unwrap();
    prune_first(&mut y, 0, 15);
    prune_first(&mut y, 1, 400);
    let ex = EfficiencyReport::of(&x).map_err(|e| e.to_string())?;
    let ey = EfficiencyReport::of(&y).map_err(|e| e.to_string())?;
    ensure(ex.compression_ratio > ey.compression_ratio && ex.theoretical_speedup < ey.theoretical_speedup, || {
        format!("fixture does not disagree: X {ex:?} Y {ey:?}")
    })?;

    let rec = |s: &str, e: &EfficiencyReport, top1: f64| RunRecord {
        achieved_compression: Some(e.compression_ratio),
        speedup: Some(e.theoretical_speedup),
        top1_after: Some(top1),
        target_compression: 2.0,
        ..fixture_record(s, 2.0, 0)
    };
    let recs = vec![rec("x_dense_heavy", &ex, 0.80), rec("y_conv_heavy", &ey, 0.82)];
    let order = |xm: XMetric| -> std::result::Result<Vec<String>, String> {
        let c = curves(&recs, xm, YMetric::Top1).map_err(|e| e.to_string())?;
        let mut pts = c.points.clone();
        pts.sort_by(|a, b| b.x.total_cmp(&a.x));
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        write_curves_csv(&dir.path().join("c.csv"), &c, xm, YMetric::Top1).map_err(|e| e.to_string())?;
        let ranked = ranking_at(&c, xm, 0.0, f64::INFINITY);
        ensure(ranked.len() == 2, || "ranking lost a strategy".into())?;
        Ok(pts.into_iter().map(|p| p.strategy).collect())
    };
    let by_c = order(XMetric::Compression)?;
    let by_s = order(XMetric::Speedup)?;
    ensure(by_c[0] == "x_dense_heavy" && by_s[0] == "y_conv_heavy", || format!("orderings {by_c:?} / {by_s:?}"))?;
    Ok(format!(
        "X compression {:.3} speedup {:.3}; Y compression {:.3} speedup {:.3}; curves order {by_c:?} by compression, {by_s:?} by speedup",
        ex.compression_ratio, ex.theoretical_speedup, ey.compression_ratio, ey.theoretical_speedup
    ))
}

// ---------------------------------------------------------------- 8

fn reported(paper: &str, arch: &str, xk: XKind, x: f64, xu: Unit, yk: YKind, y: f64, yu: Unit, flops: Option<f64>) -> ReportedResult {
    ReportedResult {
        paper_id: paper.into(),
        year: 2019,
        peer_reviewed: true,
        dataset: "ImageNet".into(),
        architecture: arch.into(),
        method: "m".into(),
        x_kind: xk,
        x_value: x,
        x_unit: Some(xu),
        y_kind: yk,
        y_value: y,
        y_unit: Some(yu),
        baseline_size: None,
        baseline_flops: flops,
    }
}

fn aggregator_exactness() -> Check {
    let close = |what: &str, got: f64, want: f64| ensure((got - want).abs() <= 1e-12 * want.abs().max(1.0), || format!("{what}: {got} != {want}"));
    let n = |r: &ReportedResult| normalize_metrics(r).map_err(|e| e.to_string());
    let err = n(&reported("p", "a", XKind::CompressionRatio, 2.0, Unit::Ratio, YKind::Top1Err, 43.4, Unit::Percent, None))?;
    close("top-1 error 43.4%", err.y, 0.566)?;
    let pruned = n(&reported("p", "a", XKind::FractionParamsPruned, 0.75, Unit::Fraction, YKind::Top1Acc, 0.7, Unit::Fraction, None))?;
    close("0.75 pruned", pruned.compression_ratio.unwrap_or(f64::NAN), 4.0)?;
    let remaining = n(&reported("p", "a", XKind::FractionParamsRemaining, 0.25, Unit::Fraction, YKind::Top1Acc, 0.7, Unit::Fraction, None))?;
    close("0.25 remaining", remaining.compression_ratio.unwrap_or(f64::NAN), 4.0)?;

    let std_of = |arch: &str, bases: &[f64], remaining: f64| -> std::result::Result<Vec<(f64, f64)>, String> {
        let rows = bases
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                n(&reported(&format!("p{i}"), arch, XKind::FractionFlopsRemaining, remaining, Unit::Fraction, YKind::Top1Acc, 0.7, Unit::Fraction, Some(b)))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(standardize_baselines(&rows)
            .into_iter()
            .map(|s| (s.standardized_baseline.unwrap_or(f64::NAN), s.absolute.unwrap_or(f64::NAN)))
            .collect())
    };
    for (b, abs) in std_of("VGG", &[100.0, 120.0, 90.0], 0.5)? {
        close("median of {100,120,90}", b, 100.0)?;
        close("0.5 of the standardized baseline", abs, 50.0)?;
    }
    let single = std_of("Solo", &[42.0], 0.5)?;
    close("single baseline", single[0].0, 42.0)?;
    for (b, _) in std_of("AlexNet", &[371.0, 724.0, 1500.0], 1.0)? {
        close("AlexNet {371,724,1500}", b, 724.0)?;
    }
    Ok("43.4% error -> 0.566; 0.75 pruned -> 4; 0.25 remaining -> 4; {100,120,90} -> 100 and 50; single -> 42; {371,724,1500} -> 724".into())
}

fn main() -> ExitCode {
    let mut report = Report { failed: vec![] };
    let work = tempfile::tempdir().expect("temp dir");

    report.run(1, "gradient correctness", Some(Duration::from_secs(120)), gradient_correctness);
    report.run(2, "oracle equivalence", Some(Duration::from_secs(60)), oracle_equivalence);
    report.run(3, "mask semantics", Some(Duration::from_secs(60)), mask_semantics);

    let mnist_start = Instant::now();
    eprintln!("training Weights A (lr 1e-3) and Weights B (lr 1e-4) on MNIST ...");
    let mnist = prepare_mnist();
    let train_time = mnist_start.elapsed();
    let pts = mnist.as_ref().map_err(Clone::clone).and_then(|m| magnitude_vs_random(m, &work.path().join("c45")));
    let budget_45 = Duration::from_secs(45 * 60).checked_sub(train_time).unwrap_or_default();
    match (&mnist, &pts) {
        (Ok(m), Ok(p)) => {
            report.run(4, "pruning keeps accuracy at 4x", Some(budget_45), || pruning_works(m, p));
            report.run(5, "magnitude beats random at 16x", None, || magnitude_beats_random(p));
        }
        (Err(e), _) | (_, Err(e)) => {
            report.run(4, "pruning keeps accuracy at 4x", None, || Err(e.clone()));
            report.run(5, "magnitude beats random at 16x", None, || Err(e.clone()));
        }
    }

    let default_out = work.path().join("default");
    report.run(6, "determinism of the default config", None, || determinism(&default_out));
    report.run(7, "metric non-interchangeability", Some(Duration::from_secs(1)), metric_disagreement);
    report.run(8, "aggregator exactness", None, aggregator_exactness);
    report.run(9, "checklist linter", None, || checklist_linter(&default_out.join("first")));
    report.run(10, "initial-model confounding", None, || match &mnist {
        Ok(m) => initial_model_confounding(m, &work.path().join("confounding")),
        Err(e) => Err(e.clone()),
    });

    if report.failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", report.failed);
        ExitCode::FAILURE
    }
}
