//! Reference architectures, masked parameters and the sequential model graph.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::ops::{self, ConvGeom, PoolGeom};
use crate::autograd::{Real, Tensor};
use crate::error::{Error, Result};

pub use checkpoint::{checkpoint_id, load, save, CheckpointManifest, TensorEntry, MANIFEST_FILE};

/// A weight tensor paired with its binary mask. The value used by the
/// forward pass is always `mask ⊙ weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub weights: Tensor<T>,
    mask: Vec<bool>,
    pub prunable: bool,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(name: impl Into<String>, weights: Tensor<T>) -> Self {
        let n = weights.numel();
        ParamTensor {
            name: name.into(),
            weights,
            mask: vec![true; n],
            prunable: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.weights.numel()
    }

    pub fn shape(&self) -> &[usize] {
        self.weights.shape()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of unmasked positions.
    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Replace the mask. Positions already masked must stay masked.
    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.mask.len() {
            return Err(Error::dim(
                &self.name,
                format!("mask has {} entries, weights have {}", mask.len(), self.mask.len()),
            ));
        }
        if let Some(i) = self.mask.iter().zip(&mask).position(|(&old, &new)| !old && new) {
            return Err(Error::InvalidArgument(format!(
                "mask update would revive pruned weight {}[{i}]",
                self.name
            )));
        }
        self.mask = mask;
        Ok(())
    }

    /// Mask a single position.
    pub fn prune_at(&mut self, idx: usize) {
        self.mask[idx] = false;
    }

    /// Overwrite the mask without the monotonicity check (checkpoint restore).
    pub(crate) fn restore_mask(&mut self, mask: Vec<bool>) {
        debug_assert_eq!(mask.len(), self.mask.len());
        self.mask = mask;
    }

    pub fn effective(&self) -> Vec<T> {
        self.weights
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&w, &m)| if m { w } else { T::zero() })
            .collect()
    }
}

/// Static description of a layer used to assemble a [`ModelGraph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { name: String, out: usize },
    Conv2d { name: String, cout: usize, k: usize, stride: usize, pad: usize },
    Relu,
    MaxPool2d { k: usize, stride: usize },
    Flatten,
}

impl LayerSpec {
    pub fn dense(name: &str, out: usize) -> Self {
        LayerSpec::Dense { name: name.into(), out }
    }

    pub fn conv(name: &str, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv2d { name: name.into(), cout, k, stride, pad }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind<T> {
    Dense {
        weight: ParamTensor<T>,
        bias: Tensor<T>,
        inp: usize,
        out: usize,
    },
    Conv2d {
        weight: ParamTensor<T>,
        bias: Tensor<T>,
        geom: ConvGeom,
    },
    Relu,
    MaxPool2d {
        geom: PoolGeom,
    },
    Flatten,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    input: Vec<T>,
    batch: usize,
    w_eff: Vec<T>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind<T>,
    /// Per-example input shape.
    pub in_shape: Vec<usize>,
    /// Per-example output shape.
    pub out_shape: Vec<usize>,
    pub classifier: bool,
    needs_input_grad: bool,
    cache: Option<Cache<T>>,
}

impl<T: Real> Layer<T> {
    pub fn weight(&self) -> Option<&ParamTensor<T>> {
        match &self.kind {
            LayerKind::Dense { weight, .. } | LayerKind::Conv2d { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut ParamTensor<T>> {
        match &mut self.kind {
            LayerKind::Dense { weight, .. } | LayerKind::Conv2d { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        match &self.kind {
            LayerKind::Dense { bias, .. } | LayerKind::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor<T>> {
        match &mut self.kind {
            LayerKind::Dense { bias, .. } | LayerKind::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Weight and bias tensors as mutable references.
    fn params_mut(&mut self) -> Option<(&mut ParamTensor<T>, &mut Tensor<T>)> {
        match &mut self.kind {
            LayerKind::Dense { weight, bias, .. } | LayerKind::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    fn run(&self, x: &[T], batch: usize, record: bool) -> (Vec<T>, Option<Cache<T>>) {
        let mut cache = Cache {
            input: Vec::new(),
            batch,
            w_eff: Vec::new(),
            argmax: Vec::new(),
        };
        let y = match &self.kind {
            LayerKind::Dense { weight, bias, inp, out } => {
                let w = weight.effective();
                let y = ops::dense_forward(x, batch, *inp, &w, bias.data(), *out);
                if record && self.needs_input_grad {
                    cache.w_eff = ops::transpose(&w, *inp, *out);
                }
                y
            }
            LayerKind::Conv2d { weight, bias, geom } => {
                let w = weight.effective();
                let y = ops::conv2d_forward(x, batch, geom, &w, bias.data());
                if record {
                    cache.w_eff = w;
                }
                y
            }
            LayerKind::Relu => ops::relu_forward(x),
            LayerKind::MaxPool2d { geom } => {
                let (y, arg) = ops::maxpool_forward(x, batch, geom);
                cache.argmax = arg;
                y
            }
            LayerKind::Flatten => x.to_vec(),
        };
        if record {
            if matches!(self.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::Relu) {
                cache.input = x.to_vec();
            }
            (y, Some(cache))
        } else {
            (y, None)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchId {
    #[serde(rename = "mlp_300_100")]
    Mlp300_100,
    LenetConv,
    CifarTinyconv,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::Mlp300_100, ArchId::LenetConv, ArchId::CifarTinyconv];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Mlp300_100 => "mlp_300_100",
            ArchId::LenetConv => "lenet_conv",
            ArchId::CifarTinyconv => "cifar_tinyconv",
        }
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self {
            ArchId::Mlp300_100 | ArchId::LenetConv => vec![1, 28, 28],
            ArchId::CifarTinyconv => vec![3, 32, 32],
        }
    }

    pub fn layer_specs(self, class_count: usize) -> Vec<LayerSpec> {
        use LayerSpec::*;
        match self {
            ArchId::Mlp300_100 => vec![
                Flatten,
                LayerSpec::dense("fc1", 300),
                Relu,
                LayerSpec::dense("fc2", 100),
                Relu,
                LayerSpec::dense("fc3", class_count),
            ],
            ArchId::LenetConv => vec![
                LayerSpec::conv("conv1", 6, 5, 1, 0),
                Relu,
                MaxPool2d { k: 2, stride: 2 },
                LayerSpec::conv("conv2", 16, 5, 1, 0),
                Relu,
                MaxPool2d { k: 2, stride: 2 },
                Flatten,
                LayerSpec::dense("fc1", 120),
                Relu,
                LayerSpec::dense("fc2", 84),
                Relu,
                LayerSpec::dense("fc3", class_count),
            ],
            ArchId::CifarTinyconv => vec![
                LayerSpec::conv("conv1", 16, 3, 1, 1),
                Relu,
                MaxPool2d { k: 2, stride: 2 },
                LayerSpec::conv("conv2", 32, 3, 1, 1),
                Relu,
                MaxPool2d { k: 2, stride: 2 },
                Flatten,
                LayerSpec::dense("fc1", 128),
                Relu,
                LayerSpec::dense("fc2", class_count),
            ],
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

/// Logits-producing sequential network with masked weights.
#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    pub name: String,
    pub arch: Option<ArchId>,
    pub layers: Vec<Layer<T>>,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    recorded: bool,
}

/// Scalar loss with its gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<Loss<T>> {
    let [batch, classes] = logits.shape() else {
        return Err(Error::dim("loss", format!("logits shape {:?} is not 2-D", logits.shape())));
    };
    if labels.len() != *batch {
        return Err(Error::dim("loss", format!("{} labels for batch of {batch}", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= *classes) {
        return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} classes")));
    }
    let (value, grad) = ops::softmax_cross_entropy(logits.data(), *batch, *classes, labels);
    Ok(Loss {
        value,
        grad: Tensor::new(vec![*batch, *classes], grad)?,
    })
}

impl<T: Real> ModelGraph<T> {
    /// Build one of the reference architectures with all-ones masks and zero
    /// weights (see [`crate::train::init_weights`]).
    pub fn build(arch: ArchId, class_count: usize) -> Result<Self> {
        let mut g = Self::sequential(
            arch.as_str(),
            arch.input_shape(),
            class_count,
            &arch.layer_specs(class_count),
        )?;
        g.arch = Some(arch);
        Ok(g)
    }

    /// Assemble a custom sequential model. The last parameterised layer is
    /// tagged as the classifier and must produce `class_count` outputs.
    pub fn sequential(
        name: &str,
        input_shape: Vec<usize>,
        class_count: usize,
        specs: &[LayerSpec],
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::InvalidArgument("class_count must be positive".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::dim("input", format!("invalid input shape {input_shape:?}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.clone();
        let mut seen_param = false;
        let mut counters = [0usize; 3];
        for spec in specs {
            let in_shape = shape.clone();
            let (name, kind, out_shape) = match spec {
                LayerSpec::Dense { name, out } => {
                    let inp: usize = in_shape.iter().product();
                    if *out == 0 {
                        return Err(Error::dim(name, "dense output size must be positive"));
                    }
                    let weight = ParamTensor::new(format!("{name}.weight"), Tensor::zeros(vec![inp, *out]));
                    let bias = Tensor::zeros(vec![*out]);
                    (name.clone(), LayerKind::Dense { weight, bias, inp, out: *out }, vec![*out])
                }
                LayerSpec::Conv2d { name, cout, k, stride, pad } => {
                    let [cin, h, w] = in_shape[..] else {
                        return Err(Error::dim(name, format!("conv needs [c,h,w] input, got {in_shape:?}")));
                    };
                    let geom = ConvGeom { cin, cout: *cout, kh: *k, kw: *k, stride: *stride, pad: *pad, h, w };
                    geom.validate().map_err(|d| Error::dim(name, d))?;
                    let weight = ParamTensor::new(
                        format!("{name}.weight"),
                        Tensor::zeros(vec![*cout, cin, *k, *k]),
                    );
                    let bias = Tensor::zeros(vec![*cout]);
                    let out_shape = vec![*cout, geom.out_h(), geom.out_w()];
                    (name.clone(), LayerKind::Conv2d { weight, bias, geom }, out_shape)
                }
                LayerSpec::Relu => {
                    counters[0] += 1;
                    (format!("relu{}", counters[0]), LayerKind::Relu, in_shape.clone())
                }
                LayerSpec::MaxPool2d { k, stride } => {
                    counters[1] += 1;
                    let name = format!("pool{}", counters[1]);
                    let [channels, h, w] = in_shape[..] else {
                        return Err(Error::dim(&name, format!("pool needs [c,h,w] input, got {in_shape:?}")));
                    };
                    let geom = PoolGeom { channels, h, w, k: *k, stride: *stride };
                    geom.validate().map_err(|d| Error::dim(&name, d))?;
                    let out_shape = vec![channels, geom.out_h(), geom.out_w()];
                    (name, LayerKind::MaxPool2d { geom }, out_shape)
                }
                LayerSpec::Flatten => {
                    counters[2] += 1;
                    let n: usize = in_shape.iter().product();
                    (format!("flatten{}", counters[2]), LayerKind::Flatten, vec![n])
                }
            };
            if layers.iter().any(|l: &Layer<T>| l.name == name) {
                return Err(Error::InvalidArgument(format!("duplicate layer name `{name}`")));
            }
            let is_param = matches!(kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. });
            layers.push(Layer {
                name,
                kind,
                in_shape,
                out_shape: out_shape.clone(),
                classifier: false,
                needs_input_grad: seen_param,
                cache: None,
            });
            seen_param |= is_param;
            shape = out_shape;
        }
        let last = layers
            .iter()
            .rposition(|l| l.weight().is_some())
            .ok_or_else(|| Error::InvalidArgument("model has no parameterised layer".into()))?;
        if shape != [class_count] {
            return Err(Error::dim(
                &layers[layers.len() - 1].name,
                format!("model output {shape:?} does not match {class_count} classes"),
            ));
        }
        layers[last].classifier = true;
        Ok(ModelGraph {
            name: name.to_string(),
            arch: None,
            layers,
            input_shape,
            class_count,
            recorded: false,
        })
    }

    pub fn classifier_index(&self) -> usize {
        self.layers.iter().position(|l| l.classifier).expect("classifier tagged at build")
    }

    /// Weight tensors in layer order.
    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.layers.iter().filter_map(|l| l.weight())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.layers.iter_mut().filter_map(|l| l.weight_mut())
    }

    /// `(layer index, weight)` for every parameterised layer.
    pub fn indexed_params(&self) -> impl Iterator<Item = (usize, &ParamTensor<T>)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| l.weight().map(|w| (i, w)))
    }

    pub fn param_by_name(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.params().find(|p| p.name == name)
    }

    pub fn param_by_name_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.params_mut().find(|p| p.name == name)
    }

    /// Total weight count (biases excluded).
    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.numel()).sum()
    }

    pub fn nnz(&self) -> usize {
        self.params().map(|p| p.nnz()).sum()
    }

    /// Every trainable tensor (weight then bias, per layer) with its mask.
    pub fn for_each_trainable_mut(&mut self, mut f: impl FnMut(usize, &mut Tensor<T>, Option<&[bool]>)) {
        let mut slot = 0;
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                let ParamTensor { weights, mask, .. } = w;
                f(slot, weights, Some(mask.as_slice()));
                f(slot + 1, b, None);
                slot += 2;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.for_each_trainable_mut(|_, t, _| t.zero_grad());
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::dim(
                self.layers.first().map(|l| l.name.as_str()).unwrap_or("input"),
                format!("input shape {shape:?} does not match [batch, {:?}]", self.input_shape),
            ));
        }
        Ok(shape[0])
    }

    /// Forward pass recording every layer input for [`Self::backward`].
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(input)?;
        let mut x = input.data().to_vec();
        for layer in &mut self.layers {
            let (y, cache) = layer.run(&x, batch, true);
            layer.cache = cache;
            x = y;
        }
        self.recorded = true;
        Tensor::new(vec![batch, self.class_count], x)
    }

    /// Forward pass without recording.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(input)?;
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            x = layer.run(&x, batch, false).0;
        }
        Tensor::new(vec![batch, self.class_count], x)
    }

    /// Accumulate `∂loss/∂(M ⊙ W)` into every weight's gradient buffer
    /// (masked positions included) and `∂loss/∂b` into every bias.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        if !self.recorded {
            return Err(Error::State("backward called before forward".into()));
        }
        let batch = self
            .layers
            .iter()
            .find_map(|l| l.cache.as_ref().map(|c| c.batch))
            .ok_or_else(|| Error::State("no recorded activations".into()))?;
        if grad_logits.shape() != [batch, self.class_count] {
            return Err(Error::dim(
                "loss",
                format!("gradient shape {:?} != [{batch}, {}]", grad_logits.shape(), self.class_count),
            ));
        }
        let mut gy = grad_logits.data().to_vec();
        for layer in self.layers.iter_mut().rev() {
            let cache = layer
                .cache
                .take()
                .ok_or_else(|| Error::State(format!("layer `{}` has no recorded input", layer.name)))?;
            let needs_dx = layer.needs_input_grad;
            let in_len = layer.in_len() * batch;
            gy = match &mut layer.kind {
                LayerKind::Dense { weight, bias, inp, out } => {
                    let (inp, out) = (*inp, *out);
                    let w_t = needs_dx.then_some(cache.w_eff.as_slice());
                    let dx = {
                        let mut dw = std::mem::take(weight.weights.grad_mut());
                        let mut db = std::mem::take(bias.grad_mut());
                        let dx = ops::dense_backward(&cache.input, batch, inp, w_t, out, &gy, &mut dw, &mut db);
                        *weight.weights.grad_mut() = dw;
                        *bias.grad_mut() = db;
                        dx
                    };
                    dx.unwrap_or_default()
                }
                LayerKind::Conv2d { weight, bias, geom } => {
                    let geom = *geom;
                    let mut dw = std::mem::take(weight.weights.grad_mut());
                    let mut db = std::mem::take(bias.grad_mut());
                    let dx = ops::conv2d_backward(&cache.input, batch, &geom, &cache.w_eff, &gy, &mut dw, &mut db, needs_dx);
                    *weight.weights.grad_mut() = dw;
                    *bias.grad_mut() = db;
                    dx.unwrap_or_default()
                }
                LayerKind::Relu => ops::relu_backward(&cache.input, &gy),
                LayerKind::MaxPool2d { .. } => ops::maxpool_backward(&cache.argmax, &gy, in_len),
                LayerKind::Flatten => gy,
            };
            if !needs_dx && layer.weight().is_some() {
                // Nothing upstream needs a gradient; drop the remaining caches.
                break;
            }
        }
        for layer in &mut self.layers {
            layer.cache = None;
        }
        self.recorded = false;
        Ok(())
    }

    pub fn backward_loss(&mut self, loss: &Loss<T>) -> Result<()> {
        self.backward(&loss.grad)
    }
}
