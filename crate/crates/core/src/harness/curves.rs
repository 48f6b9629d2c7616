use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum XMetric {
    Compression,
    Speedup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum YMetric {
    Top1,
    #[value(name = "delta_top1")]
    DeltaTop1,
}

impl fmt::Display for XMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            XMetric::Compression => "compression",
            XMetric::Speedup => "speedup",
        })
    }
}

impl fmt::Display for YMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YMetric::Top1 => "top1",
            YMetric::DeltaTop1 => "delta_top1",
        })
    }
}

impl FromStr for XMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compression" => Ok(XMetric::Compression),
            "speedup" => Ok(XMetric::Speedup),
            _ => Err(Error::InvalidArgument(format!("unknown x metric `{s}`"))),
        }
    }
}

impl FromStr for YMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(YMetric::Top1),
            "delta_top1" => Ok(YMetric::DeltaTop1),
            _ => Err(Error::InvalidArgument(format!("unknown y metric `{s}`"))),
        }
    }
}

/// One operating point of a tradeoff curve, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub dataset: String,
    pub arch: String,
    pub strategy: String,
    pub target_compression: f64,
    pub x_metric: XMetric,
    /// Mean of the selected x metric over the successful runs.
    pub x: f64,
    /// Both x metrics, so orderings under either can be read off one file.
    /// Literature points may carry only one of them.
    pub compression_mean: Option<f64>,
    pub speedup_mean: Option<f64>,
    pub y_metric: YMetric,
    pub y_mean: f64,
    /// Sample standard deviation; `None` when `n == 1`.
    pub y_std: Option<f64>,
    pub n: usize,
    pub n_failed: usize,
}

/// A group with no successful run, kept so plots can show the gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGap {
    pub dataset: String,
    pub arch: String,
    pub strategy: String,
    pub target_compression: f64,
    pub statuses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Curves {
    pub points: Vec<CurvePoint>,
    pub gaps: Vec<CurveGap>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample (n - 1) standard deviation; `None` below two values.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Group records by (dataset, arch, strategy, target compression) and
/// aggregate over seeds.
pub fn curves(records: &[RunRecord], x_metric: XMetric, y_metric: YMetric) -> Result<Curves> {
    if records.is_empty() {
        return Err(Error::EmptySelection("no run records to aggregate".into()));
    }
    type Key = (String, String, String, u64);
    let mut groups: BTreeMap<Key, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.dataset.clone(), r.arch.clone(), r.strategy.clone(), r.target_compression.to_bits());
        groups.entry(key).or_default().push(r);
    }
    let mut out = Curves::default();
    for ((dataset, arch, strategy, target), group) in groups {
        let target_compression = f64::from_bits(target);
        let ok: Vec<&RunRecord> = group
            .iter()
            .copied()
            .filter(|r| r.is_ok() && r.top1_after.is_some() && r.achieved_compression.is_some() && r.speedup.is_some())
            .collect();
        if ok.is_empty() {
            out.gaps.push(CurveGap {
                dataset,
                arch,
                strategy,
                target_compression,
                statuses: group.iter().map(|r| r.status.clone()).collect(),
            });
            continue;
        }
        let comp: Vec<f64> = ok.iter().map(|r| r.achieved_compression.unwrap()).collect();
        let speed: Vec<f64> = ok.iter().map(|r| r.speedup.unwrap()).collect();
        let ys: Vec<f64> = ok
            .iter()
            .map(|r| {
                let after = r.top1_after.unwrap();
                match y_metric {
                    YMetric::Top1 => after,
                    YMetric::DeltaTop1 => after - r.top1_before,
                }
            })
            .collect();
        let (compression_mean, speedup_mean) = (mean(&comp), mean(&speed));
        out.points.push(CurvePoint {
            dataset,
            arch,
            strategy,
            target_compression,
            x_metric,
            x: match x_metric {
                XMetric::Compression => compression_mean,
                XMetric::Speedup => speedup_mean,
            },
            compression_mean: Some(compression_mean),
            speedup_mean: Some(speedup_mean),
            y_metric,
            y_mean: mean(&ys),
            y_std: sample_std(&ys),
            n: ok.len(),
            n_failed: group.len() - ok.len(),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct CurveRow<'a> {
    dataset: &'a str,
    arch: &'a str,
    strategy: &'a str,
    target_compression: f64,
    x_metric: String,
    x: Option<f64>,
    compression_mean: Option<f64>,
    speedup_mean: Option<f64>,
    y_metric: String,
    y_mean: Option<f64>,
    y_std: Option<f64>,
    std_available: bool,
    n: usize,
    n_failed: usize,
    status: &'a str,
}

/// Plot-ready CSV: one row per point, gaps as rows with status `gap`.
pub fn write_curves_csv(path: &Path, curves: &Curves, x_metric: XMetric, y_metric: YMetric) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format { path: path.into(), detail: e.to_string() })?;
    for p in &curves.points {
        w.serialize(CurveRow {
            dataset: &p.dataset,
            arch: &p.arch,
            strategy: &p.strategy,
            target_compression: p.target_compression,
            x_metric: p.x_metric.to_string(),
            x: Some(p.x),
            compression_mean: p.compression_mean,
            speedup_mean: p.speedup_mean,
            y_metric: p.y_metric.to_string(),
            y_mean: Some(p.y_mean),
            y_std: p.y_std,
            std_available: p.y_std.is_some(),
            n: p.n,
            n_failed: p.n_failed,
            status: if p.n == 1 { "single_run" } else { "ok" },
        })?;
    }
    for g in &curves.gaps {
        w.serialize(CurveRow {
            dataset: &g.dataset,
            arch: &g.arch,
            strategy: &g.strategy,
            target_compression: g.target_compression,
            x_metric: x_metric.to_string(),
            x: None,
            compression_mean: None,
            speedup_mean: None,
            y_metric: y_metric.to_string(),
            y_mean: None,
            y_std: None,
            std_available: false,
            n: 0,
            n_failed: g.statuses.len(),
            status: "gap",
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Strategies ordered best-first by `y_mean` among points whose x metric
/// lies within `[lo, hi]`; used to compare orderings across x metrics.
pub fn ranking_at(curves: &Curves, x_metric: XMetric, lo: f64, hi: f64) -> Vec<(String, f64)> {
    let mut pts: Vec<(String, f64)> = curves
        .points
        .iter()
        .filter(|p| {
            let x = match x_metric {
                XMetric::Compression => p.compression_mean,
                XMetric::Speedup => p.speedup_mean,
            };
            x.is_some_and(|x| (lo..=hi).contains(&x))
        })
        .map(|p| (p.strategy.clone(), p.y_mean))
        .collect();
    pts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    pts
}
