//! Literature meta-analysis: unit normalization of reported results,
//! per-architecture baseline standardization, fragmentation counts and the
//! paper comparison graph.
//!
//! Reported results are read from a CSV with the header
//!
//! ```text
//! paper_id,year,peer_reviewed,dataset,architecture,method,x_kind,x_value,x_unit,y_kind,y_value,y_unit,baseline_size,baseline_flops
//! ```
//!
//! `x_unit` is one of `fraction`, `percent`, `ratio`, `count`; `y_unit` is
//! `fraction` or `percent`. Rows without units are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{write_curves_csv, CurvePoint, Curves, XMetric, YMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XKind {
    FractionParamsRemaining,
    FractionParamsPruned,
    CompressionRatio,
    FractionFlopsRemaining,
    FlopsAbsolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YKind {
    Top1Acc,
    Top1Err,
    Top5Acc,
    Top5Err,
    DeltaTop1,
    DeltaTop5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Fraction,
    Percent,
    Ratio,
    Count,
}

/// One operating point as reported by a paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedResult {
    pub paper_id: String,
    pub year: u16,
    pub peer_reviewed: bool,
    pub dataset: String,
    pub architecture: String,
    pub method: String,
    pub x_kind: XKind,
    pub x_value: f64,
    pub x_unit: Option<Unit>,
    pub y_kind: YKind,
    pub y_value: f64,
    pub y_unit: Option<Unit>,
    pub baseline_size: Option<f64>,
    pub baseline_flops: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Size,
    Flops,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YMeasure {
    Top1Acc,
    Top5Acc,
    DeltaTop1,
    DeltaTop5,
}

/// A reported result in canonical units. The raw values stay alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedResult {
    pub source: ReportedResult,
    pub basis: Basis,
    /// Fraction of parameters (basis `size`) or FLOPs (basis `flops`) left.
    /// Unknown for absolute FLOPs without a reported baseline.
    pub fraction_remaining: Option<f64>,
    /// Original / remaining parameters.
    pub compression_ratio: Option<f64>,
    /// Original / remaining FLOPs.
    pub speedup: Option<f64>,
    pub y_measure: YMeasure,
    /// Accuracy (or change in accuracy) as a fraction.
    pub y: f64,
}

fn bad(row: &ReportedResult, detail: impl fmt::Display) -> Error {
    Error::InvalidArgument(format!("{} / {} / {}: {detail}", row.paper_id, row.architecture, row.method))
}

fn as_fraction(row: &ReportedResult, v: f64, unit: Option<Unit>, what: &str) -> Result<f64> {
    match unit {
        Some(Unit::Fraction) => Ok(v),
        Some(Unit::Percent) => Ok(v / 100.0),
        Some(u) => Err(bad(row, format!("{what} unit {u:?} is not fraction or percent"))),
        None => Err(bad(row, format!("{what} has no unit"))),
    }
}

/// Convert to compression ratio / speedup and fractional accuracy:
/// error `e` becomes accuracy `1 - e`, fraction pruned `p` becomes
/// compression `1 / (1 - p)`, fraction remaining `r` becomes `1 / r`.
pub fn normalize_metrics(row: &ReportedResult) -> Result<NormalizedResult> {
    if !(row.x_value > 0.0) || !row.x_value.is_finite() {
        return Err(bad(row, format!("x_value {} must be > 0", row.x_value)));
    }
    let (basis, fraction_remaining) = match row.x_kind {
        XKind::FractionParamsRemaining | XKind::FractionFlopsRemaining => {
            let r = as_fraction(row, row.x_value, row.x_unit, "x")?;
            if r <= 0.0 || r > 1.0 {
                return Err(bad(row, format!("fraction remaining {r} not in (0,1]")));
            }
            let basis = if row.x_kind == XKind::FractionParamsRemaining { Basis::Size } else { Basis::Flops };
            (basis, Some(r))
        }
        XKind::FractionParamsPruned => {
            let p = as_fraction(row, row.x_value, row.x_unit, "x")?;
            if !(0.0..1.0).contains(&p) {
                return Err(bad(row, format!("fraction pruned {p} not in [0,1)")));
            }
            (Basis::Size, Some(1.0 - p))
        }
        XKind::CompressionRatio => {
            if row.x_unit != Some(Unit::Ratio) {
                return Err(bad(row, "compression_ratio needs x_unit `ratio`"));
            }
            if row.x_value < 1.0 {
                return Err(bad(row, format!("compression ratio {} < 1", row.x_value)));
            }
            (Basis::Size, Some(1.0 / row.x_value))
        }
        XKind::FlopsAbsolute => {
            if row.x_unit != Some(Unit::Count) {
                return Err(bad(row, "flops_absolute needs x_unit `count`"));
            }
            (Basis::Flops, row.baseline_flops.map(|b| row.x_value / b))
        }
    };
    let (compression_ratio, speedup) = match (basis, row.x_kind) {
        (Basis::Size, XKind::CompressionRatio) => (Some(row.x_value), None),
        (Basis::Size, XKind::FractionParamsPruned) => {
            let p = as_fraction(row, row.x_value, row.x_unit, "x")?;
            (Some(1.0 / (1.0 - p)), None)
        }
        (Basis::Size, _) => (fraction_remaining.map(|r| 1.0 / r), None),
        (Basis::Flops, _) => (None, fraction_remaining.map(|r| 1.0 / r)),
    };

    let v = as_fraction(row, row.y_value, row.y_unit, "y")?;
    let (y_measure, y) = match row.y_kind {
        YKind::Top1Acc => (YMeasure::Top1Acc, v),
        YKind::Top1Err => (YMeasure::Top1Acc, 1.0 - v),
        YKind::Top5Acc => (YMeasure::Top5Acc, v),
        YKind::Top5Err => (YMeasure::Top5Acc, 1.0 - v),
        YKind::DeltaTop1 => (YMeasure::DeltaTop1, v),
        YKind::DeltaTop5 => (YMeasure::DeltaTop5, v),
    };
    let range = match y_measure {
        YMeasure::Top1Acc | YMeasure::Top5Acc => 0.0..=1.0,
        YMeasure::DeltaTop1 | YMeasure::DeltaTop5 => -1.0..=1.0,
    };
    if !range.contains(&v) {
        return Err(bad(row, format!("y value {v} (as a fraction) out of range")));
    }
    Ok(NormalizedResult { source: row.clone(), basis, fraction_remaining, compression_ratio, speedup, y_measure, y })
}

/// Median; the mean of the middle two for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// A normalized result placed on the architecture's standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedResult {
    pub result: NormalizedResult,
    /// Median over papers of the baselines reported for this architecture
    /// (same basis); `None` when no paper reports one.
    pub standardized_baseline: Option<f64>,
    /// `fraction_remaining * standardized_baseline`.
    pub absolute: Option<f64>,
    pub normalizable: bool,
}

/// Per (architecture, basis): take each paper's median reported baseline,
/// then the median across papers.
pub fn standardized_baselines(records: &[NormalizedResult]) -> BTreeMap<(String, Basis), f64> {
    let mut per_paper: BTreeMap<(String, Basis), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let s = &r.source;
        for (basis, value) in [(Basis::Size, s.baseline_size), (Basis::Flops, s.baseline_flops)] {
            if let Some(v) = value {
                per_paper
                    .entry((s.architecture.clone(), basis))
                    .or_default()
                    .entry(&s.paper_id)
                    .or_default()
                    .push(v);
            }
        }
    }
    per_paper
        .into_iter()
        .filter_map(|(key, papers)| {
            let medians: Vec<f64> = papers.values().filter_map(|v| median(v)).collect();
            median(&medians).map(|m| (key, m))
        })
        .collect()
}

pub fn standardize_baselines(records: &[NormalizedResult]) -> Vec<StandardizedResult> {
    let table = standardized_baselines(records);
    records
        .iter()
        .map(|r| {
            let standardized_baseline = table.get(&(r.source.architecture.clone(), r.basis)).copied();
            let absolute = match (r.fraction_remaining, standardized_baseline) {
                (Some(f), Some(b)) => Some(f * b),
                _ => None,
            };
            StandardizedResult { result: r.clone(), standardized_baseline, absolute, normalizable: absolute.is_some() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub dataset: String,
    pub architecture: String,
    pub papers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperCount {
    pub paper_id: String,
    pub pairs_used: usize,
    pub curves: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fragmentation {
    /// Sorted by paper count descending, then dataset, then architecture.
    pub pairs: Vec<PairCount>,
    pub papers: Vec<PaperCount>,
    /// pairs used -> number of papers.
    pub pairs_used_histogram: BTreeMap<usize, usize>,
    /// points on a (paper, dataset, architecture, method) curve -> number of curves.
    pub points_per_curve_histogram: BTreeMap<usize, usize>,
}

pub fn fragmentation_stats(records: &[ReportedResult]) -> Fragmentation {
    let mut pair_papers: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    let mut paper_pairs: BTreeMap<&str, BTreeSet<(&str, &str)>> = BTreeMap::new();
    let mut curves: BTreeMap<(&str, &str, &str, &str), usize> = BTreeMap::new();
    for r in records {
        let pair = (r.dataset.as_str(), r.architecture.as_str());
        pair_papers.entry(pair).or_default().insert(&r.paper_id);
        paper_pairs.entry(&r.paper_id).or_default().insert(pair);
        *curves.entry((&r.paper_id, pair.0, pair.1, &r.method)).or_default() += 1;
    }
    let mut pairs: Vec<PairCount> = pair_papers
        .into_iter()
        .map(|((d, a), p)| PairCount { dataset: d.into(), architecture: a.into(), papers: p.len() })
        .collect();
    pairs.sort_by(|a, b| {
        b.papers.cmp(&a.papers).then_with(|| a.dataset.cmp(&b.dataset)).then_with(|| a.architecture.cmp(&b.architecture))
    });
    let papers: Vec<PaperCount> = paper_pairs
        .iter()
        .map(|(&p, used)| PaperCount {
            paper_id: p.into(),
            pairs_used: used.len(),
            curves: curves.keys().filter(|k| k.0 == p).count(),
            points: records.iter().filter(|r| r.paper_id == p).count(),
        })
        .collect();
    let mut out = Fragmentation { pairs, papers, ..Default::default() };
    for p in &out.papers {
        *out.pairs_used_histogram.entry(p.pairs_used).or_default() += 1;
    }
    for &n in curves.values() {
        *out.points_per_curve_histogram.entry(n).or_default() += 1;
    }
    out
}

/// `from_paper` compares against `to_paper`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonEdge {
    pub from_paper: String,
    pub to_paper: String,
}

impl ComparisonEdge {
    pub fn new(from: &str, to: &str) -> Result<Self> {
        let e = ComparisonEdge { from_paper: from.into(), to_paper: to.into() };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.from_paper == self.to_paper {
            return Err(Error::InvalidArgument(format!("self-comparison edge on `{}`", self.from_paper)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperDegree {
    pub paper_id: String,
    /// Number of papers comparing to this one.
    pub in_degree: usize,
    /// Number of papers this one compares to.
    pub out_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonStats {
    pub papers: Vec<PaperDegree>,
    pub in_degree_histogram: BTreeMap<usize, usize>,
    pub out_degree_histogram: BTreeMap<usize, usize>,
    pub never_compared_to: Vec<String>,
    pub compares_to_none: Vec<String>,
}

/// Degree statistics over `papers` plus every paper named by an edge.
/// Duplicate edges count once; cycles are allowed.
pub fn comparison_stats(papers: &[String], edges: &[ComparisonEdge]) -> ComparisonStats {
    let mut nodes: BTreeSet<&str> = papers.iter().map(String::as_str).collect();
    let unique: BTreeSet<(&str, &str)> =
        edges.iter().map(|e| (e.from_paper.as_str(), e.to_paper.as_str())).filter(|(a, b)| a != b).collect();
    for &(a, b) in &unique {
        nodes.insert(a);
        nodes.insert(b);
    }
    let mut out = ComparisonStats::default();
    for &p in &nodes {
        let in_degree = unique.iter().filter(|e| e.1 == p).count();
        let out_degree = unique.iter().filter(|e| e.0 == p).count();
        *out.in_degree_histogram.entry(in_degree).or_default() += 1;
        *out.out_degree_histogram.entry(out_degree).or_default() += 1;
        if in_degree == 0 {
            out.never_compared_to.push(p.into());
        }
        if out_degree == 0 {
            out.compares_to_none.push(p.into());
        }
        out.papers.push(PaperDegree { paper_id: p.into(), in_degree, out_degree });
    }
    out
}

pub fn read_reported(path: &Path) -> Result<Vec<ReportedResult>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format { path: path.into(), detail: e.to_string() })?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ReportedResult>().enumerate() {
        let row = row.map_err(|e| Error::Format { path: path.into(), detail: format!("row {}: {e}", i + 1) })?;
        if row.x_unit.is_none() || row.y_unit.is_none() {
            return Err(Error::Format {
                path: path.into(),
                detail: format!("row {}: x_unit and y_unit are required", i + 1),
            });
        }
        out.push(row);
    }
    Ok(out)
}

pub fn read_edges(path: &Path) -> Result<Vec<ComparisonEdge>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format { path: path.into(), detail: e.to_string() })?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ComparisonEdge>().enumerate() {
        let e = row.map_err(|e| Error::Format { path: path.into(), detail: format!("row {}: {e}", i + 1) })?;
        e.validate().map_err(|err| Error::Format { path: path.into(), detail: format!("row {}: {err}", i + 1) })?;
        out.push(e);
    }
    Ok(out)
}

#[derive(Serialize)]
struct NormalizedRow<'a> {
    paper_id: &'a str,
    year: u16,
    peer_reviewed: bool,
    dataset: &'a str,
    architecture: &'a str,
    method: &'a str,
    x_kind: XKind,
    x_value: f64,
    y_kind: YKind,
    y_value: f64,
    basis: Basis,
    fraction_remaining: Option<f64>,
    compression_ratio: Option<f64>,
    speedup: Option<f64>,
    y_measure: YMeasure,
    y: f64,
    standardized_baseline: Option<f64>,
    absolute: Option<f64>,
    normalizable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSummary {
    pub records: usize,
    pub normalizable: usize,
    pub pairs: usize,
    pub papers: usize,
}

/// Literature points in the harness curve layout (one point per reported
/// result with a top-1 measure and a known x).
pub fn literature_curves(rows: &[StandardizedResult], x_metric: XMetric, y_metric: YMetric) -> Curves {
    let points = rows
        .iter()
        .filter_map(|s| {
            let r = &s.result;
            let y = match (y_metric, r.y_measure) {
                (YMetric::Top1, YMeasure::Top1Acc) | (YMetric::DeltaTop1, YMeasure::DeltaTop1) => r.y,
                _ => return None,
            };
            let x = match x_metric {
                XMetric::Compression => r.compression_ratio?,
                XMetric::Speedup => r.speedup?,
            };
            Some(CurvePoint {
                dataset: r.source.dataset.clone(),
                arch: r.source.architecture.clone(),
                strategy: format!("{}:{}", r.source.paper_id, r.source.method),
                target_compression: x,
                x_metric,
                x,
                compression_mean: r.compression_ratio,
                speedup_mean: r.speedup,
                y_metric,
                y_mean: y,
                y_std: None,
                n: 1,
                n_failed: 0,
            })
        })
        .collect();
    Curves { points, gaps: Vec::new() }
}

fn write_csv<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format { path: path.into(), detail: e.to_string() })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read `records` (and optionally `edges`) and write `normalized.csv`,
/// `pairs.csv`, `papers.csv`, `comparisons.csv` and the curve files into `out`.
pub fn aggregate(records: &Path, edges: Option<&Path>, out: &Path) -> Result<AggregateSummary> {
    let reported = read_reported(records)?;
    let normalized: Vec<NormalizedResult> = reported.iter().map(normalize_metrics).collect::<Result<_>>()?;
    let standardized = standardize_baselines(&normalized);
    let frag = fragmentation_stats(&reported);
    let edges = match edges {
        Some(p) => read_edges(p)?,
        None => Vec::new(),
    };
    let paper_ids: Vec<String> = frag.papers.iter().map(|p| p.paper_id.clone()).collect();
    let comparisons = comparison_stats(&paper_ids, &edges);

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv(
        &out.join("normalized.csv"),
        standardized.iter().map(|s| {
            let (r, src) = (&s.result, &s.result.source);
            NormalizedRow {
                paper_id: &src.paper_id,
                year: src.year,
                peer_reviewed: src.peer_reviewed,
                dataset: &src.dataset,
                architecture: &src.architecture,
                method: &src.method,
                x_kind: src.x_kind,
                x_value: src.x_value,
                y_kind: src.y_kind,
                y_value: src.y_value,
                basis: r.basis,
                fraction_remaining: r.fraction_remaining,
                compression_ratio: r.compression_ratio,
                speedup: r.speedup,
                y_measure: r.y_measure,
                y: r.y,
                standardized_baseline: s.standardized_baseline,
                absolute: s.absolute,
                normalizable: s.normalizable,
            }
        }),
    )?;
    write_csv(&out.join("pairs.csv"), &frag.pairs)?;
    write_csv(&out.join("papers.csv"), &frag.papers)?;
    write_csv(&out.join("comparisons.csv"), &comparisons.papers)?;
    for x in [XMetric::Compression, XMetric::Speedup] {
        for y in [YMetric::Top1, YMetric::DeltaTop1] {
            let c = literature_curves(&standardized, x, y);
            write_curves_csv(&out.join(format!("curves_{x}_{y}.csv")), &c, x, y)?;
        }
    }
    Ok(AggregateSummary {
        records: reported.len(),
        normalizable: standardized.iter().filter(|s| s.normalizable).count(),
        pairs: frag.pairs.len(),
        papers: frag.papers.len(),
    })
}
