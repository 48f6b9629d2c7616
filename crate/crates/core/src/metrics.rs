//! Size and compute accounting, compression ratio, theoretical speedup and
//! top-k accuracy.
//!
//! Compute is counted in multiply-adds (one multiply-accumulate = 1) per
//! example, see [`MADDS_FORMULA`]. Sizes count weight tensors only; biases,
//! activations and pooling are free. The mask is the ground truth for
//! whether a weight is present.

use serde::{Deserialize, Serialize};

use crate::autograd::{Real, Tensor};
use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph};

pub const MADDS_FORMULA: &str = "madds per example; dense: in*out; conv2d: out_h*out_w*kh*kw*cin*cout; \
pruned counts replace the weight count with nnz(mask) (dense: nnz, conv2d: nnz*out_h*out_w); \
bias, relu, pooling, flatten: 0; one multiply-accumulate counts once";

pub const SIZE_FORMULA: &str = "weights only (biases excluded); pruned size = nnz(mask)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMadds {
    pub layer: String,
    pub dense: u64,
    pub pruned: u64,
}

/// Dense and pruned multiply-add counts for one example.
pub fn count_madds<T: Real>(model: &ModelGraph<T>) -> (u64, u64) {
    let per_layer = layer_madds(model);
    (per_layer.iter().map(|l| l.dense).sum(), per_layer.iter().map(|l| l.pruned).sum())
}

pub fn layer_madds<T: Real>(model: &ModelGraph<T>) -> Vec<LayerMadds> {
    model
        .layers
        .iter()
        .filter_map(|layer| {
            let (dense, pruned) = match &layer.kind {
                LayerKind::Dense { weight, inp, out, .. } => ((inp * out) as u64, weight.nnz() as u64),
                LayerKind::Conv2d { weight, geom, .. } => {
                    let positions = (geom.out_h() * geom.out_w()) as u64;
                    (positions * geom.weight_len() as u64, positions * weight.nnz() as u64)
                }
                _ => return None,
            };
            Some(LayerMadds { layer: layer.name.clone(), dense, pruned })
        })
        .collect()
}

/// Original size divided by the new size.
pub fn compression_ratio(params_total: usize, params_nnz: usize) -> Result<f64> {
    if params_nnz == 0 {
        return Err(Error::InvalidArgument("compression ratio undefined for nnz = 0".into()));
    }
    Ok(params_total as f64 / params_nnz as f64)
}

/// Original multiply-adds divided by the new number.
pub fn theoretical_speedup(dense_madds: u64, pruned_madds: u64) -> Result<f64> {
    if pruned_madds == 0 {
        return Err(Error::InvalidArgument("speedup undefined for zero remaining multiply-adds".into()));
    }
    Ok(dense_madds as f64 / pruned_madds as f64)
}

pub fn fraction_pruned_to_compression(fraction_pruned: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&fraction_pruned) {
        return Err(Error::InvalidArgument(format!("fraction pruned {fraction_pruned} not in [0,1)")));
    }
    Ok(1.0 / (1.0 - fraction_pruned))
}

pub fn compression_to_fraction_pruned(compression: f64) -> Result<f64> {
    if compression.is_nan() || compression < 1.0 {
        return Err(Error::InvalidArgument(format!("compression {compression} < 1")));
    }
    Ok(1.0 - 1.0 / compression)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub params_total: usize,
    pub params_nnz: usize,
    pub madds_dense_model: u64,
    pub madds_pruned_model: u64,
    pub compression_ratio: f64,
    pub theoretical_speedup: f64,
    pub fraction_pruned: f64,
}

impl EfficiencyReport {
    /// Recompute every field from the model's shapes and masks.
    pub fn of<T: Real>(model: &ModelGraph<T>) -> Result<Self> {
        let params_total = model.param_count();
        let params_nnz = model.nnz();
        let (dense, pruned) = count_madds(model);
        Ok(EfficiencyReport {
            params_total,
            params_nnz,
            madds_dense_model: dense,
            madds_pruned_model: pruned,
            compression_ratio: compression_ratio(params_total, params_nnz)?,
            theoretical_speedup: theoretical_speedup(dense, pruned)?,
            fraction_pruned: 1.0 - params_nnz as f64 / params_total as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub top1: f64,
    pub top5: f64,
    pub n_examples: usize,
}

/// Whether `label` ranks among the `k` largest of `row`. Ties rank the lower
/// class index first.
pub fn in_top_k<T: Real>(row: &[T], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > target || (v == target && c < label))
        .count();
    ahead < k
}

/// Number of rows of `logits` (`[n, classes]`, flat) whose label is in the top k.
pub fn top_k_hits<T: Real>(logits: &[T], classes: usize, labels: &[usize], k: usize) -> usize {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| in_top_k(row, l, k))
        .count()
}

pub fn topk_accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize], k: usize) -> Result<f64> {
    let [n, classes] = logits.shape() else {
        return Err(Error::dim("topk", format!("logits shape {:?} is not 2-D", logits.shape())));
    };
    if *n != labels.len() {
        return Err(Error::dim("topk", format!("{} labels for {n} rows", labels.len())));
    }
    if k == 0 || k > *classes {
        return Err(Error::InvalidArgument(format!("k = {k} not in [1, {classes}]")));
    }
    if labels.iter().any(|&l| l >= *classes) {
        return Err(Error::InvalidArgument("label out of range".into()));
    }
    Ok(top_k_hits(logits.data(), *classes, labels, k) as f64 / *n as f64)
}
