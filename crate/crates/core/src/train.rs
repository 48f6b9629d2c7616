//! Initial training and fine-tuning: optimizers, early stopping, evaluation.
//!
//! Every update is multiplied by the mask, so pruned weights never move.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Real, Tensor};
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{top_k_hits, AccuracyReport};
use crate::model::{softmax_cross_entropy, LayerKind, ModelGraph};
use crate::seed::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdNesterov,
}

/// Optimizer and schedule for one training phase. The learning rate is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerCfg {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_patience() -> usize {
    5
}

impl Default for OptimizerCfg {
    fn default() -> Self {
        Self::adam_recipe()
    }
}

impl OptimizerCfg {
    /// Adam, batch 64, lr 3e-4, 30 epochs, fixed schedule.
    pub fn adam_recipe() -> Self {
        OptimizerCfg {
            kind: OptimizerKind::Adam,
            lr: 3e-4,
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size: 64,
            max_epochs: 30,
            early_stop_patience: default_patience(),
        }
    }

    /// SGD with Nesterov momentum 0.9, batch 256, lr 1e-3, 20 epochs.
    pub fn sgd_nesterov_recipe() -> Self {
        OptimizerCfg {
            kind: OptimizerKind::SgdNesterov,
            lr: 1e-3,
            batch_size: 256,
            max_epochs: 20,
            ..Self::adam_recipe()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must be in [0,1) and eps > 0".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-slot optimizer state (first/second moments or momentum buffer).
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    cfg: OptimizerCfg,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(cfg: &OptimizerCfg) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer { cfg: cfg.clone(), step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn cfg(&self) -> &OptimizerCfg {
        &self.cfg
    }

    /// Apply one update from the gradients currently stored on `model`.
    pub fn step(&mut self, model: &mut ModelGraph<T>) {
        self.step += 1;
        let lr = T::from_f64(self.cfg.lr);
        let c = &self.cfg;
        let (b1, b2, eps, mu) = (T::from_f64(c.beta1), T::from_f64(c.beta2), T::from_f64(c.eps), T::from_f64(c.momentum));
        let bc1 = T::one() - b1.powi(self.step);
        let bc2 = T::one() - b2.powi(self.step);
        let kind = c.kind;
        let (first, second) = (&mut self.first, &mut self.second);
        model.for_each_trainable_mut(|slot, tensor, mask| {
            if first.len() <= slot {
                first.resize_with(slot + 1, Vec::new);
                second.resize_with(slot + 1, Vec::new);
            }
            let n = tensor.numel();
            if first[slot].len() != n {
                first[slot] = vec![T::zero(); n];
                if kind == OptimizerKind::Adam {
                    second[slot] = vec![T::zero(); n];
                }
            }
            let (data, Some(grad)) = tensor.data_and_grad() else { return };
            let (m, v) = (&mut first[slot], &mut second[slot]);
            for i in 0..n {
                if let Some(mask) = mask {
                    if !mask[i] {
                        continue;
                    }
                }
                let g = grad[i];
                match kind {
                    OptimizerKind::Adam => {
                        m[i] = b1 * m[i] + (T::one() - b1) * g;
                        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                    OptimizerKind::SgdNesterov => {
                        m[i] = mu * m[i] + g;
                        data[i] = data[i] - lr * (g + mu * m[i]);
                    }
                }
            }
        });
    }

    /// Zero the state of every masked-off position.
    pub fn zero_masked_state(&mut self, model: &mut ModelGraph<T>) {
        let (first, second) = (&mut self.first, &mut self.second);
        model.for_each_trainable_mut(|slot, _, mask| {
            let Some(mask) = mask else { return };
            for buf in [first.get_mut(slot), second.get_mut(slot)].into_iter().flatten() {
                for (s, &keep) in buf.iter_mut().zip(mask) {
                    if !keep {
                        *s = T::zero();
                    }
                }
            }
        });
    }
}

/// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
/// drawn layer by layer in row-major order; biases zero.
pub fn init_weights<T: Real>(model: &mut ModelGraph<T>, rng: &mut StreamRng) {
    for layer in &mut model.layers {
        let (fan_in, fan_out) = match &layer.kind {
            LayerKind::Dense { inp, out, .. } => (*inp, *out),
            LayerKind::Conv2d { geom, .. } => {
                let k = geom.kh * geom.kw;
                (geom.cin * k, geom.cout * k)
            }
            _ => continue,
        };
        let a = T::from_f64((6.0 / (fan_in + fan_out) as f64).sqrt());
        if let Some(w) = layer.weight_mut() {
            for v in w.weights.data_mut() {
                *v = rng.gen_range(-a..a);
            }
        }
        if let Some(b) = layer.bias_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Top-1 / top-5 accuracy (top-k capped at the class count).
pub fn evaluate<T: Real>(model: &ModelGraph<T>, data: &Dataset<T>) -> Result<AccuracyReport> {
    const CHUNK: usize = 512;
    let k5 = 5.min(model.class_count);
    let (mut h1, mut h5) = (0usize, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let (x, labels) = data.gather(chunk)?;
        let logits = model.predict(&x)?;
        h1 += top_k_hits(logits.data(), model.class_count, &labels, 1);
        h5 += top_k_hits(logits.data(), model.class_count, &labels, k5);
    }
    let n = data.len();
    Ok(AccuracyReport { top1: h1 as f64 / n as f64, top5: h5 as f64 / n as f64, n_examples: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub stopped_early: bool,
}

/// One forward/backward pass over a batch; returns the loss. Gradients are
/// zeroed first.
pub fn compute_gradients<T: Real>(model: &mut ModelGraph<T>, x: &Tensor<T>, labels: &[usize]) -> Result<T> {
    model.zero_grad();
    let logits = model.forward(x)?;
    let loss = softmax_cross_entropy(&logits, labels)?;
    model.backward_loss(&loss)?;
    Ok(loss.value)
}

/// Train with early stopping on validation top-1 and keep the best epoch's
/// weights. Masks are respected throughout.
pub fn fit<T: Real>(
    model: &mut ModelGraph<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    optimizer: &mut Optimizer<T>,
    shuffle: StreamRng,
) -> Result<TrainLog> {
    let cfg = optimizer.cfg().clone();
    let mut stream = BatchStream::new(train.len(), cfg.batch_size, shuffle)?;
    let mut log = TrainLog { best_val_top1: f64::NEG_INFINITY, ..TrainLog::default() };
    let mut best: Option<ModelGraph<T>> = None;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in stream.epoch() {
            let (x, labels) = train.gather(&batch)?;
            let loss = compute_gradients(model, &x, &labels)?.as_f64();
            if !loss.is_finite() {
                if let Some(b) = best.take() {
                    *model = b;
                }
                return Err(Error::Diverged { epoch, last_good_epoch: log.best_epoch });
            }
            optimizer.step(model);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let val_top1 = evaluate(model, val)?.top1;
        log.epochs.push(EpochLog { epoch, train_loss: loss_sum / seen as f64, val_top1 });
        if val_top1 > log.best_val_top1 {
            log.best_val_top1 = val_top1;
            log.best_epoch = epoch;
            best = Some(model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    if let Some(b) = best {
        *model = b;
    }
    Ok(log)
}

/// Train a freshly initialised model until early stopping or `max_epochs`.
pub fn train_to_convergence<T: Real>(
    model: &mut ModelGraph<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &OptimizerCfg,
    lineage: &crate::seed::SeedLineage,
) -> Result<TrainLog> {
    let mut opt = Optimizer::new(cfg)?;
    fit(model, train, val, &mut opt, lineage.stream(seed::SHUFFLE))
}

/// Continue training a masked model; pruned weights stay bit-identical.
pub fn finetune<T: Real>(
    model: &mut ModelGraph<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    optimizer: &mut Optimizer<T>,
    shuffle: StreamRng,
) -> Result<TrainLog> {
    optimizer.zero_masked_state(model);
    fit(model, train, val, optimizer, shuffle)
}
