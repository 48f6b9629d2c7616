//! Machine-checkable items of the evaluation checklist, run against
//! harness result records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::run::RunRecord;
use crate::prune::Strategy;

pub const MIN_OPERATING_POINTS: usize = 5;
pub const MIN_EXTREME_COMPRESSION: f64 = 16.0;
pub const MIN_SEEDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LintItem {
    pub id: &'static str,
    pub description: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LintReport {
    pub records: usize,
    pub items: Vec<LintItem>,
}

impl LintReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn item(&self, id: &str) -> Option<&LintItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

impl fmt::Display for LintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.items {
            writeln!(f, "[{}] {:<22} {} ({})", if i.passed { "PASS" } else { "FAIL" }, i.id, i.description, i.detail)?;
        }
        let failed = self.items.iter().filter(|i| !i.passed).count();
        write!(f, "{} of {} items passed over {} records", self.items.len() - failed, self.items.len(), self.records)
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Check every automatable item. Never fails; problems show up as failed items.
pub fn lint(records: &[RunRecord]) -> LintReport {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let mut items = Vec::new();
    let mut push = |id, description, passed, detail: String| items.push(LintItem { id, description, passed, detail });

    let mut targets: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    let mut seeds: BTreeMap<(&str, u64), BTreeSet<u64>> = BTreeMap::new();
    for r in &ok {
        targets.entry(&r.strategy).or_default().insert(r.target_compression.to_bits());
        seeds.entry((&r.strategy, r.target_compression.to_bits())).or_default().insert(r.seed);
    }

    let fewest_points = targets.values().map(BTreeSet::len).min().unwrap_or(0);
    push(
        "operating_points",
        "Data is presented across a range of compression ratios.",
        fewest_points >= MIN_OPERATING_POINTS,
        format!("fewest operating points per strategy: {fewest_points}, need {MIN_OPERATING_POINTS}"),
    );

    let max_target = ok.iter().map(|r| r.target_compression).fold(f64::NAN, f64::max);
    push(
        "extreme_compression",
        "The range includes extreme compression ratios.",
        max_target >= MIN_EXTREME_COMPRESSION,
        format!("largest successful target compression: {max_target}, need >= {MIN_EXTREME_COMPRESSION}"),
    );

    let bad_acc = ok
        .iter()
        .filter(|r| !matches!((r.top1_after, r.top5_after), (Some(a), Some(b)) if in_unit(a) && in_unit(b)))
        .count();
    push(
        "raw_accuracy",
        "Data specifies the raw accuracy of the network at each point.",
        !ok.is_empty() && bad_acc == 0,
        format!("{bad_acc} of {} successful records lack top-1/top-5 accuracy in [0,1]", ok.len()),
    );

    let fewest_seeds = seeds.values().map(BTreeSet::len).min().unwrap_or(0);
    push(
        "multiple_runs",
        "Data includes multiple runs with separate initializations and random seeds.",
        fewest_seeds >= MIN_SEEDS,
        format!("fewest seeds per operating point: {fewest_seeds}, need {MIN_SEEDS}"),
    );
    push(
        "error_bars",
        "Data supports a mean and a standard deviation at every point.",
        fewest_seeds >= 2,
        format!("fewest successful runs per operating point: {fewest_seeds}, need 2"),
    );

    let bad_flops = ok.iter().filter(|r| !matches!(r.speedup, Some(s) if s.is_finite() && s >= 1.0)).count();
    push(
        "flop_counts",
        "Data includes FLOP counts.",
        !ok.is_empty() && bad_flops == 0,
        format!("{bad_flops} of {} successful records lack a theoretical speedup", ok.len()),
    );

    let has = |pred: fn(Strategy) -> bool| {
        ok.iter().any(|r| r.strategy.parse::<Strategy>().map(pred).unwrap_or(false))
    };
    push(
        "random_baseline",
        "A random pruning baseline.",
        has(|s| s == Strategy::Random),
        format!("strategies: {:?}", targets.keys().collect::<Vec<_>>()),
    );
    push(
        "magnitude_baseline",
        "A magnitude pruning baseline.",
        has(Strategy::is_magnitude),
        format!("strategies: {:?}", targets.keys().collect::<Vec<_>>()),
    );

    let bad_control = records.iter().filter(|r| !(in_unit(r.top1_before) && in_unit(r.top5_before))).count();
    push(
        "control_metrics",
        "Metrics are reported for the unpruned control.",
        !records.is_empty() && bad_control == 0,
        format!("{bad_control} of {} records lack control accuracy in [0,1]", records.len()),
    );

    LintReport { records: records.len(), items }
}
