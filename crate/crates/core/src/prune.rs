//! Saliency scoring, mask selection and the prune / fine-tune loop.
//!
//! Selection counts are measured against the original size of the scored
//! tensors: pruning a fraction `f` of `n` weights masks exactly
//! `round_half_even(f * n)` positions in total, previously masked ones
//! included. Ties are broken by `(tensor index, flat index)` ascending.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autograd::Real;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{AccuracyReport, EfficiencyReport};
use crate::model::ModelGraph;
use crate::seed::{self, SeedLineage, StreamRng};
use crate::train::{self, compute_gradients, Optimizer, OptimizerCfg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    GlobalMagnitude,
    LayerwiseMagnitude,
    GlobalGradient,
    LayerwiseGradient,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::GlobalMagnitude,
        Strategy::LayerwiseMagnitude,
        Strategy::GlobalGradient,
        Strategy::LayerwiseGradient,
        Strategy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::GlobalMagnitude => "global_magnitude",
            Strategy::LayerwiseMagnitude => "layerwise_magnitude",
            Strategy::GlobalGradient => "global_gradient",
            Strategy::LayerwiseGradient => "layerwise_gradient",
            Strategy::Random => "random",
        }
    }

    pub fn is_magnitude(self) -> bool {
        matches!(self, Strategy::GlobalMagnitude | Strategy::LayerwiseMagnitude)
    }

    pub fn is_gradient(self) -> bool {
        matches!(self, Strategy::GlobalGradient | Strategy::LayerwiseGradient)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneAction {
    pub strategy: Strategy,
    pub target_compression: f64,
    pub iterations: usize,
    pub exclude_classifier: bool,
    pub score_batch_size: usize,
}

impl PruneAction {
    pub fn one_shot(strategy: Strategy, target_compression: f64) -> Self {
        PruneAction {
            strategy,
            target_compression,
            iterations: 1,
            exclude_classifier: true,
            score_batch_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_compression > 1.0 && self.target_compression.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "target compression must be > 1, got {}",
                self.target_compression
            )));
        }
        if self.iterations == 0 || self.score_batch_size == 0 {
            return Err(Error::InvalidArgument("iterations and score_batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Saliencies for one weight tensor. Masked positions hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub name: String,
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Saliencies for every candidate weight tensor, in layer order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreMap {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreMap {
    /// Unmasked score map from raw per-tensor scores (fixtures, FFI).
    pub fn from_scores<S: Into<String>>(tensors: impl IntoIterator<Item = (S, Vec<f64>)>) -> Self {
        ScoreMap {
            entries: tensors
                .into_iter()
                .map(|(name, scores)| {
                    let mask = vec![true; scores.len()];
                    ScoreEntry { name: name.into(), scores, mask }
                })
                .collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.scores.len()).sum()
    }
}

/// New masks, aligned with the [`ScoreMap`] entries they were selected from.
pub type MaskUpdate = Vec<Vec<bool>>;

fn candidates<T: Real>(model: &ModelGraph<T>, exclude_classifier: bool) -> Vec<usize> {
    model
        .indexed_params()
        .filter(|(i, p)| p.prunable && !(exclude_classifier && model.layers[*i].classifier))
        .map(|(i, _)| i)
        .collect()
}

fn build_scores<T: Real>(
    model: &ModelGraph<T>,
    exclude_classifier: bool,
    score: impl Fn(T, Option<T>) -> f64,
) -> ScoreMap {
    let entries = candidates(model, exclude_classifier)
        .into_iter()
        .map(|i| {
            let p = model.layers[i].weight().expect("candidate has weights");
            let grad = p.weights.grad();
            let scores = p
                .weights
                .data()
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    if p.mask()[j] {
                        score(w, grad.map(|g| g[j]))
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            ScoreEntry { name: p.name.clone(), scores, mask: p.mask().to_vec() }
        })
        .collect();
    ScoreMap { entries }
}

/// `|w|` at every unmasked candidate position.
pub fn score_magnitude<T: Real>(model: &ModelGraph<T>, exclude_classifier: bool) -> ScoreMap {
    build_scores(model, exclude_classifier, |w, _| w.abs().as_f64())
}

/// `|w · ∂loss/∂w|` from one forward + backward pass on exactly `batch`.
pub fn score_gradient_magnitude<T: Real>(
    model: &mut ModelGraph<T>,
    data: &Dataset<T>,
    batch: &[usize],
    exclude_classifier: bool,
) -> Result<ScoreMap> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient scoring needs a non-empty batch".into()));
    }
    let (x, labels) = data.gather(batch)?;
    compute_gradients(model, &x, &labels)?;
    let scores = build_scores(model, exclude_classifier, |w, g| {
        (w * g.expect("gradient populated")).abs().as_f64()
    });
    model.zero_grad();
    Ok(scores)
}

/// `k = round_half_even(fraction * n)`.
pub fn prune_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round_ties_even() as usize
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction.is_nan() || fraction < 0.0 {
        return Err(Error::InvalidArgument(format!("prune fraction {fraction} < 0")));
    }
    if fraction >= 1.0 {
        return Err(Error::InfeasibleCompression(format!(
            "prune fraction {fraction} would remove every candidate weight"
        )));
    }
    Ok(())
}

/// Mask the `k - already_masked` lowest-scored unmasked positions among
/// `pool` (entry, flat index) pairs.
fn mask_lowest(scores: &ScoreMap, pool: Vec<(usize, usize)>, k: usize, update: &mut MaskUpdate) -> Result<()> {
    let n = pool.len();
    let already = pool.iter().filter(|&&(e, j)| !update[e][j]).count();
    if k > n {
        return Err(Error::InfeasibleCompression(format!("need to prune {k} of {n} weights")));
    }
    if k <= already {
        return Ok(());
    }
    let mut live: Vec<(usize, usize)> = pool.into_iter().filter(|&(e, j)| update[e][j]).collect();
    let key = |&(e, j): &(usize, usize)| (scores.entries[e].scores[j], e, j);
    live.sort_unstable_by(|a, b| {
        let (sa, ea, ja) = key(a);
        let (sb, eb, jb) = key(b);
        sa.total_cmp(&sb).then(ea.cmp(&eb)).then(ja.cmp(&jb))
    });
    for &(e, j) in &live[..k - already] {
        update[e][j] = false;
    }
    Ok(())
}

/// Rank every candidate weight against every other one.
pub fn select_global(scores: &ScoreMap, fraction: f64) -> Result<MaskUpdate> {
    check_fraction(fraction)?;
    let mut update: MaskUpdate = scores.entries.iter().map(|e| e.mask.clone()).collect();
    let pool: Vec<(usize, usize)> = scores
        .entries
        .iter()
        .enumerate()
        .flat_map(|(e, entry)| (0..entry.scores.len()).map(move |j| (e, j)))
        .collect();
    let k = prune_count(fraction, pool.len());
    mask_lowest(scores, pool, k, &mut update)?;
    Ok(update)
}

/// Rank weights within each tensor independently.
pub fn select_layerwise(scores: &ScoreMap, fraction: f64) -> Result<MaskUpdate> {
    check_fraction(fraction)?;
    let mut update: MaskUpdate = scores.entries.iter().map(|e| e.mask.clone()).collect();
    for (e, entry) in scores.entries.iter().enumerate() {
        let pool: Vec<(usize, usize)> = (0..entry.scores.len()).map(|j| (e, j)).collect();
        let k = prune_count(fraction, pool.len());
        mask_lowest(scores, pool, k, &mut update).map_err(|err| match err {
            Error::InfeasibleCompression(m) => Error::InfeasibleCompression(format!("{}: {m}", entry.name)),
            other => other,
        })?;
    }
    Ok(update)
}

/// Mask every unmasked position independently with probability `fraction`.
/// One uniform draw per unmasked position, in (tensor, flat index) order.
pub fn select_random(scores: &ScoreMap, fraction: f64, rng: &mut StreamRng) -> Result<MaskUpdate> {
    check_fraction(fraction)?;
    let mut update: MaskUpdate = scores.entries.iter().map(|e| e.mask.clone()).collect();
    if fraction == 0.0 {
        return Ok(update);
    }
    for mask in &mut update {
        for m in mask.iter_mut().filter(|m| **m) {
            if rng.gen::<f64>() < fraction {
                *m = false;
            }
        }
    }
    Ok(update)
}

/// Write selected masks back into the model (monotone: never revives).
pub fn apply_masks<T: Real>(model: &mut ModelGraph<T>, scores: &ScoreMap, update: MaskUpdate) -> Result<()> {
    for (entry, mask) in scores.entries.iter().zip(update) {
        let p = model
            .param_by_name_mut(&entry.name)
            .ok_or_else(|| Error::InvalidArgument(format!("no weight tensor `{}`", entry.name)))?;
        p.set_mask(mask)?;
    }
    Ok(())
}

/// Cumulative remaining fractions after each of `iterations` prune steps:
/// geometric, `compression^(-i/N)`, ending exactly at `1/compression`.
pub fn keep_schedule(target_compression: f64, iterations: usize) -> Vec<f64> {
    (1..=iterations)
        .map(|i| {
            if i == iterations {
                1.0 / target_compression
            } else {
                target_compression.powf(-(i as f64) / iterations as f64)
            }
        })
        .collect()
}

/// Fraction of the candidate tensors to prune so the whole model keeps
/// `remaining` of its weights; weights outside the candidates stay.
pub fn candidate_fraction<T: Real>(model: &ModelGraph<T>, scores: &ScoreMap, remaining: f64) -> Result<f64> {
    let total = model.param_count() as f64;
    let candidate_total = scores.numel() as f64;
    let fixed = total - candidate_total;
    let candidate_keep = remaining * total - fixed;
    if candidate_keep <= 0.0 || candidate_total == 0.0 {
        return Err(Error::InfeasibleCompression(format!(
            "keeping {:.1} of {total} weights is impossible with {fixed} non-prunable weights",
            remaining * total
        )));
    }
    Ok((1.0 - candidate_keep / candidate_total).max(0.0))
}

/// Train / validation / test splits for one run.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a, T> {
    pub train: &'a Dataset<T>,
    pub val: &'a Dataset<T>,
    pub test: &'a Dataset<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Fraction of all weights meant to remain after this step.
    pub target_remaining: f64,
    /// Fraction of the candidate tensors pruned after this step.
    pub candidate_fraction_pruned: f64,
    pub efficiency: EfficiencyReport,
    pub pruned: AccuracyReport,
    pub finetuned: AccuracyReport,
    pub epochs: usize,
    pub best_val_top1: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub control: AccuracyReport,
    pub control_efficiency: EfficiencyReport,
    pub final_accuracy: Option<AccuracyReport>,
    pub final_efficiency: EfficiencyReport,
    pub iterations: Vec<IterationRecord>,
    pub epochs_finetuned: usize,
    pub failure: Option<String>,
}

/// Prune `model` in `action.iterations` steps, fine-tuning after each.
///
/// Divergence during fine-tuning aborts the run and is reported in
/// [`PruneOutcome::failure`]; an unreachable target is an error.
pub fn prune_and_finetune<T: Real>(
    model: &mut ModelGraph<T>,
    action: &PruneAction,
    data: Splits<'_, T>,
    finetune_cfg: &OptimizerCfg,
    lineage: &SeedLineage,
) -> Result<PruneOutcome> {
    action.validate()?;
    let control = train::evaluate(model, data.test)?;
    let control_efficiency = EfficiencyReport::of(model)?;
    let mut optimizer = Optimizer::new(finetune_cfg)?;
    let mut shuffle = lineage.stream(seed::SHUFFLE);
    let mut score_rng = lineage.stream(seed::SCORE_BATCH);
    let mut random_rng = lineage.stream(seed::RANDOM_PRUNE);

    let mut outcome = PruneOutcome {
        control,
        control_efficiency: control_efficiency.clone(),
        final_accuracy: None,
        final_efficiency: control_efficiency,
        iterations: Vec::new(),
        epochs_finetuned: 0,
        failure: None,
    };

    for (i, remaining) in keep_schedule(action.target_compression, action.iterations).into_iter().enumerate() {
        let scores = match action.strategy {
            Strategy::GlobalMagnitude | Strategy::LayerwiseMagnitude | Strategy::Random => {
                score_magnitude(model, action.exclude_classifier)
            }
            Strategy::GlobalGradient | Strategy::LayerwiseGradient => {
                let n = data.train.len();
                let amount = action.score_batch_size.min(n);
                let mut batch = rand::seq::index::sample(&mut score_rng, n, amount).into_vec();
                batch.sort_unstable();
                score_gradient_magnitude(model, data.train, &batch, action.exclude_classifier)?
            }
        };
        let fraction = candidate_fraction(model, &scores, remaining)?;
        let update = match action.strategy {
            Strategy::GlobalMagnitude | Strategy::GlobalGradient => select_global(&scores, fraction)?,
            Strategy::LayerwiseMagnitude | Strategy::LayerwiseGradient => select_layerwise(&scores, fraction)?,
            Strategy::Random => {
                // Bernoulli over the weights still alive, so the expected
                // cumulative fraction matches the schedule.
                let alive = scores.entries.iter().map(|e| e.mask.iter().filter(|&&m| m).count()).sum::<usize>();
                let keep_target = (1.0 - fraction) * scores.numel() as f64;
                let p = if alive == 0 { 0.0 } else { (1.0 - keep_target / alive as f64).max(0.0) };
                select_random(&scores, p, &mut random_rng)?
            }
        };
        apply_masks(model, &scores, update)?;
        optimizer.zero_masked_state(model);

        let efficiency = EfficiencyReport::of(model)?;
        let pruned = train::evaluate(model, data.test)?;
        let shuffle_rng = StreamRng::seed_from_u64(shuffle.next_u64());
        let log = match train::finetune(model, data.train, data.val, &mut optimizer, shuffle_rng) {
            Ok(log) => log,
            Err(e @ Error::Diverged { .. }) => {
                outcome.failure = Some(format!("iteration {}: {e}", i + 1));
                outcome.final_efficiency = efficiency;
                return Ok(outcome);
            }
            Err(e) => return Err(e),
        };
        let finetuned = train::evaluate(model, data.test)?;
        outcome.epochs_finetuned += log.epochs.len();
        outcome.iterations.push(IterationRecord {
            iteration: i + 1,
            target_remaining: remaining,
            candidate_fraction_pruned: fraction,
            efficiency: efficiency.clone(),
            pruned,
            finetuned,
            epochs: log.epochs.len(),
            best_val_top1: log.best_val_top1,
            stopped_early: log.stopped_early,
        });
        outcome.final_efficiency = efficiency;
        outcome.final_accuracy = Some(finetuned);
    }
    Ok(outcome)
}
