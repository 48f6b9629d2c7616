//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use prunebench::autograd::ops::ConvGeom;
use prunebench::model::LayerKind;
use prunebench::{ModelGraph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// `y[i][j] = b[j] + sum_k x[i][k] * w[k][j]`, written out longhand.
pub fn naive_dense(x: &[f64], batch: usize, inp: usize, w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for i in 0..batch {
        for j in 0..out {
            let mut s = 0.0;
            for k in 0..inp {
                s += x[i * inp + k] * w[k * out + j];
            }
            y[i * out + j] = s + b[j];
        }
    }
    y
}

fn padded(x: &[f64], n: usize, c: usize, g: &ConvGeom, y: i64, xx: i64) -> f64 {
    if y < 0 || xx < 0 || y >= g.h as i64 || xx >= g.w as i64 {
        0.0
    } else {
        x[((n * g.cin + c) * g.h + y as usize) * g.w + xx as usize]
    }
}

/// Direct 7-deep loop convolution with explicit zero padding.
pub fn naive_conv(x: &[f64], batch: usize, g: &ConvGeom, w: &[f64], b: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut y = vec![0.0; batch * g.cout * oh * ow];
    for n in 0..batch {
        for co in 0..g.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as i64 - g.pad as i64;
                                let ix = (ox * g.stride + kx) as i64 - g.pad as i64;
                                s += w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] * padded(x, n, ci, g, iy, ix);
                            }
                        }
                    }
                    y[((n * g.cout + co) * oh + oy) * ow + ox] = s + b[co];
                }
            }
        }
    }
    y
}

/// Multiplications performed by a naive forward pass on one example.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MulCounter {
    /// Every weight tap, as if the model were dense.
    pub all: u64,
    /// Taps whose mask bit is set.
    pub unmasked: u64,
}

/// Naive forward of a whole model that counts each weight multiplication
/// as it happens. Returns the logits and the counters for `x` (one example).
pub fn instrumented_forward(model: &ModelGraph<f64>, x: &[f64]) -> (Vec<f64>, MulCounter) {
    let mut count = MulCounter::default();
    let mut a = x.to_vec();
    for layer in &model.layers {
        a = match &layer.kind {
            LayerKind::Dense { weight, bias, inp, out } => {
                let w = weight.weights.data();
                let m = weight.mask();
                let mut y = bias.data().to_vec();
                for k in 0..*inp {
                    for j in 0..*out {
                        count.all += 1;
                        if m[k * out + j] {
                            count.unmasked += 1;
                            y[j] += a[k] * w[k * out + j];
                        }
                    }
                }
                y
            }
            LayerKind::Conv2d { weight, bias, geom: g } => {
                let (w, m) = (weight.weights.data(), weight.mask());
                let (oh, ow) = (g.out_h(), g.out_w());
                let mut y = vec![0.0; g.cout * oh * ow];
                for co in 0..g.cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = bias.data()[co];
                            for ci in 0..g.cin {
                                for ky in 0..g.kh {
                                    for kx in 0..g.kw {
                                        let wi = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                                        count.all += 1;
                                        if m[wi] {
                                            count.unmasked += 1;
                                            let iy = (oy * g.stride + ky) as i64 - g.pad as i64;
                                            let ix = (ox * g.stride + kx) as i64 - g.pad as i64;
                                            s += w[wi] * padded(&a, 0, ci, g, iy, ix);
                                        }
                                    }
                                }
                            }
                            y[(co * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                y
            }
            LayerKind::Relu => a.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::MaxPool2d { geom: g } => {
                let (oh, ow) = (g.out_h(), g.out_w());
                let mut y = vec![f64::NEG_INFINITY; g.channels * oh * ow];
                for c in 0..g.channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let v = a[(c * g.h + oy * g.stride + ky) * g.w + ox * g.stride + kx];
                                    let o = &mut y[(c * oh + oy) * ow + ox];
                                    *o = o.max(v);
                                }
                            }
                        }
                    }
                }
                y
            }
            LayerKind::Flatten => a,
        };
    }
    (a, count)
}

/// Mean softmax cross-entropy from the definition, in f64.
pub fn naive_ce(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let batch = labels.len();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let z = &logits[i * classes..(i + 1) * classes];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        total += -(z[l].exp() / denom).ln();
    }
    total / batch as f64
}

/// `||a - b|| / max(||a||, ||b||)`, or the plain distance when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference of `f` at every coordinate of `x` listed in `coords`.
pub fn central_diff(x: &mut [f64], coords: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Batch of `n` random examples shaped for `model`.
pub fn random_input(model: &ModelGraph<f64>, n: usize, seed: u64) -> Tensor<f64> {
    let per: usize = model.input_shape.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(&model.input_shape);
    Tensor::new(shape, uniform(&mut rng(seed), n * per, 0.0, 1.0)).unwrap()
}

pub mod grad {
    //! Finite-difference gradient checks in f64.

    use super::{central_diff, naive_ce, rel_err, rng, uniform};
    use prunebench::autograd::ops::{self, ConvGeom, PoolGeom};
    use prunebench::model::LayerSpec;
    use prunebench::train::compute_gradients;
    use prunebench::{ArchId, ModelGraph, SeedLineage, Tensor};
    use rand::seq::index::sample;
    use rand::Rng;

    pub const H: f64 = 1e-6;

    #[derive(Debug, Clone)]
    pub struct Case {
        pub name: String,
        pub rel_err: f64,
    }

    fn case(name: String, analytic: &[f64], numeric: &[f64]) -> Case {
        Case { name, rel_err: rel_err(analytic, numeric) }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    pub fn dense_cases(n: usize, seed: u64) -> Vec<Case> {
        let mut r = rng(seed);
        (0..n)
            .flat_map(|c| {
                let (batch, inp, out) = (r.gen_range(1..4), r.gen_range(1..7), r.gen_range(1..6));
                let mut x = uniform(&mut r, batch * inp, -1.0, 1.0);
                let mut w = uniform(&mut r, inp * out, -1.0, 1.0);
                let mut b = uniform(&mut r, out, -1.0, 1.0);
                let proj = uniform(&mut r, batch * out, -1.0, 1.0);
                let (mut dw, mut db) = (vec![0.0; inp * out], vec![0.0; out]);
                let wt = ops::transpose(&w, inp, out);
                let dx = ops::dense_backward(&x, batch, inp, Some(&wt), out, &proj, &mut dw, &mut db).unwrap();
                let (w0, b0, x0) = (w.clone(), b.clone(), x.clone());
                let nx = central_diff(&mut x, &all(batch * inp), H, |x| {
                    dot(&ops::dense_forward(x, batch, inp, &w0, &b0, out), &proj)
                });
                let nw = central_diff(&mut w, &all(inp * out), H, |w| {
                    dot(&ops::dense_forward(&x0, batch, inp, w, &b0, out), &proj)
                });
                let nb = central_diff(&mut b, &all(out), H, |b| {
                    dot(&ops::dense_forward(&x0, batch, inp, &w0, b, out), &proj)
                });
                let tag = format!("dense#{c} b={batch} {inp}->{out}");
                vec![case(format!("{tag} dx"), &dx, &nx), case(format!("{tag} dw"), &dw, &nw), case(format!("{tag} db"), &db, &nb)]
            })
            .collect()
    }

    pub fn conv_cases(n: usize, seed: u64) -> Vec<Case> {
        let mut r = rng(seed);
        let mut out = Vec::new();
        while out.len() < 3 * n {
            let k = r.gen_range(1..4);
            let g = ConvGeom {
                cin: r.gen_range(1..4),
                cout: r.gen_range(1..4),
                kh: k,
                kw: r.gen_range(1..4),
                stride: r.gen_range(1..3),
                pad: r.gen_range(0..2),
                h: r.gen_range(3..8),
                w: r.gen_range(3..8),
            };
            if g.validate().is_err() {
                continue;
            }
            let batch = r.gen_range(1..3);
            let mut x = uniform(&mut r, batch * g.in_len(), -1.0, 1.0);
            let mut w = uniform(&mut r, g.weight_len(), -1.0, 1.0);
            let mut b = uniform(&mut r, g.cout, -1.0, 1.0);
            let proj = uniform(&mut r, batch * g.out_len(), -1.0, 1.0);
            let (mut dw, mut db) = (vec![0.0; g.weight_len()], vec![0.0; g.cout]);
            let dx = ops::conv2d_backward(&x, batch, &g, &w, &proj, &mut dw, &mut db, true).unwrap();
            let (w0, b0, x0) = (w.clone(), b.clone(), x.clone());
            let nx = central_diff(&mut x, &all(x0.len()), H, |x| dot(&ops::conv2d_forward(x, batch, &g, &w0, &b0), &proj));
            let nw = central_diff(&mut w, &all(w0.len()), H, |w| dot(&ops::conv2d_forward(&x0, batch, &g, w, &b0), &proj));
            let nb = central_diff(&mut b, &all(g.cout), H, |b| dot(&ops::conv2d_forward(&x0, batch, &g, &w0, b), &proj));
            let tag = format!("conv#{} {g:?}", out.len() / 3);
            out.push(case(format!("{tag} dx"), &dx, &nx));
            out.push(case(format!("{tag} dw"), &dw, &nw));
            out.push(case(format!("{tag} db"), &db, &nb));
        }
        out
    }

    pub fn relu_cases(n: usize, seed: u64) -> Vec<Case> {
        let mut r = rng(seed);
        (0..n)
            .map(|c| {
                let len = r.gen_range(1..30);
                // Keep clear of the kink at 0.
                let mut x: Vec<f64> = (0..len)
                    .map(|_| {
                        let v: f64 = r.gen_range(0.05..1.0);
                        if r.gen_bool(0.5) { v } else { -v }
                    })
                    .collect();
                let proj = uniform(&mut r, len, -1.0, 1.0);
                let dx = ops::relu_backward(&x, &proj);
                let nx = central_diff(&mut x, &all(len), H, |x| dot(&ops::relu_forward(x), &proj));
                case(format!("relu#{c} n={len}"), &dx, &nx)
            })
            .collect()
    }

    pub fn maxpool_cases(n: usize, seed: u64) -> Vec<Case> {
        let mut r = rng(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let k = r.gen_range(1..4);
            let g = PoolGeom { channels: r.gen_range(1..4), h: r.gen_range(k..8), w: r.gen_range(k..8), k, stride: r.gen_range(1..3) };
            if g.validate().is_err() {
                continue;
            }
            let batch = r.gen_range(1..3);
            let in_len = batch * g.channels * g.h * g.w;
            // A permutation of well-separated values keeps every window's
            // maximum unique under the perturbation.
            let mut x: Vec<f64> = sample(&mut r, in_len, in_len).into_iter().map(|i| i as f64 * 0.01).collect();
            let (y, arg) = ops::maxpool_forward(&x, batch, &g);
            let proj = uniform(&mut r, y.len(), -1.0, 1.0);
            let dx = ops::maxpool_backward(&arg, &proj, in_len);
            let nx = central_diff(&mut x, &all(in_len), H, |x| dot(&ops::maxpool_forward(x, batch, &g).0, &proj));
            out.push(case(format!("maxpool#{} {g:?}", out.len()), &dx, &nx));
        }
        out
    }

    pub fn softmax_ce_cases(n: usize, seed: u64) -> Vec<Case> {
        let mut r = rng(seed);
        (0..n)
            .map(|c| {
                let (batch, classes) = (r.gen_range(1..5), r.gen_range(2..8));
                let mut z = uniform(&mut r, batch * classes, -3.0, 3.0);
                let labels: Vec<usize> = (0..batch).map(|_| r.gen_range(0..classes)).collect();
                let (_, dz) = ops::softmax_cross_entropy(&z, batch, classes, &labels);
                let nz = central_diff(&mut z, &all(batch * classes), H, |z| naive_ce(z, classes, &labels));
                case(format!("softmax_ce#{c} b={batch} k={classes}"), &dz, &nz)
            })
            .collect()
    }

    fn loss(model: &ModelGraph<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
        let logits = model.predict(x).unwrap();
        naive_ce(logits.data(), model.class_count, labels)
    }

    /// Compare backprop against central differences for every weight and
    /// bias tensor, on at most `per_tensor` sampled coordinates each.
    /// Masked weight positions are checked to have zero numeric gradient.
    pub fn model_case(name: &str, model: &mut ModelGraph<f64>, x: &Tensor<f64>, labels: &[usize], per_tensor: usize, seed: u64) -> Vec<Case> {
        compute_gradients(model, x, labels).unwrap();
        let mut r = rng(seed);
        let mut cases = Vec::new();
        for li in 0..model.layers.len() {
            let Some(p) = model.layers[li].weight() else { continue };
            let pname = p.name.clone();
            let n = p.numel();
            let grad = p.weights.grad().unwrap().to_vec();
            let mask = p.mask().to_vec();
            let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(&mut r, n, per_tensor).into_vec() };
            let (live, dead): (Vec<usize>, Vec<usize>) = coords.into_iter().partition(|&i| mask[i]);
            let probe = |idx: &[usize], model: &mut ModelGraph<f64>| {
                idx.iter()
                    .map(|&i| {
                        let orig = model.layers[li].weight().unwrap().weights.data()[i];
                        let at = |v: f64, model: &mut ModelGraph<f64>| {
                            model.layers[li].weight_mut().unwrap().weights.data_mut()[i] = v;
                            loss(model, x, labels)
                        };
                        let d = (at(orig + H, model) - at(orig - H, model)) / (2.0 * H);
                        at(orig, model);
                        d
                    })
                    .collect::<Vec<f64>>()
            };
            let numeric = probe(&live, model);
            let analytic: Vec<f64> = live.iter().map(|&i| grad[i]).collect();
            cases.push(case(format!("{name} {pname}"), &analytic, &numeric));
            if !dead.is_empty() {
                let numeric_dead = probe(&dead, model);
                cases.push(case(format!("{name} {pname} masked"), &vec![0.0; dead.len()], &numeric_dead));
            }

            let bias_grad = model.layers[li].bias().unwrap().grad().unwrap().to_vec();
            let nb = bias_grad.len();
            let mut numeric = Vec::with_capacity(nb);
            for i in 0..nb {
                let orig = model.layers[li].bias().unwrap().data()[i];
                let mut at = |v: f64| {
                    model.layers[li].bias_mut().unwrap().data_mut()[i] = v;
                    loss(model, x, labels)
                };
                let d = (at(orig + H) - at(orig - H)) / (2.0 * H);
                at(orig);
                numeric.push(d);
            }
            cases.push(case(format!("{name} {}", pname.replace(".weight", ".bias")), &bias_grad, &numeric));
        }
        cases
    }

    fn init(model: &mut ModelGraph<f64>, seed: u64) {
        prunebench::train::init_weights(model, &mut SeedLineage::new(seed, 0).stream("init"));
        let mut r = rng(seed ^ 0x5eed);
        for l in &mut model.layers {
            if let Some(b) = l.bias_mut() {
                for v in b.data_mut() {
                    *v = r.gen_range(-0.1..0.1);
                }
            }
        }
    }

    fn mask_randomly(model: &mut ModelGraph<f64>, fraction: f64, seed: u64) {
        let mut r = rng(seed);
        for p in model.params_mut() {
            let m: Vec<bool> = (0..p.numel()).map(|_| !r.gen_bool(fraction)).collect();
            p.set_mask(m).unwrap();
        }
    }

    fn labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
        let mut r = rng(seed);
        (0..n).map(|_| r.gen_range(0..classes)).collect()
    }

    /// Small LeNet-style stacks (conv, relu, pool, dense) with and without
    /// masks, plus sampled checks on the full reference architectures.
    pub fn model_cases(small: usize, seed: u64) -> Vec<Case> {
        let mut cases = Vec::new();
        for c in 0..small {
            let specs = [
                LayerSpec::conv("conv1", 3, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { k: 2, stride: 2 },
                LayerSpec::conv("conv2", 4, 3, 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense("fc1", 6),
                LayerSpec::Relu,
                LayerSpec::dense("fc2", 3),
            ];
            let mut m = ModelGraph::<f64>::sequential("lenet_small", vec![2, 8, 8], 3, &specs).unwrap();
            init(&mut m, seed + c as u64);
            if c % 2 == 1 {
                mask_randomly(&mut m, 0.3, seed + 100 + c as u64);
            }
            let x = super::random_input(&m, 3, seed + 200 + c as u64);
            let y = labels(3, 3, seed + 300 + c as u64);
            cases.extend(model_case(&format!("lenet_small#{c}"), &mut m, &x, &y, 400, seed + c as u64));
        }
        for (k, arch) in ArchId::ALL.into_iter().enumerate() {
            let mut m = ModelGraph::<f64>::build(arch, 10).unwrap();
            init(&mut m, seed + 1000 + k as u64);
            mask_randomly(&mut m, 0.5, seed + 2000 + k as u64);
            let x = super::random_input(&m, 2, seed + 3000 + k as u64);
            let y = labels(2, 10, seed + 4000 + k as u64);
            cases.extend(model_case(arch.as_str(), &mut m, &x, &y, 12, seed + k as u64));
        }
        cases
    }

    /// Every gradient check used by the suite.
    pub fn all_cases(seed: u64) -> Vec<Case> {
        let mut v = dense_cases(12, seed);
        v.extend(conv_cases(12, seed + 1));
        v.extend(relu_cases(12, seed + 2));
        v.extend(maxpool_cases(12, seed + 3));
        v.extend(softmax_ce_cases(12, seed + 4));
        v.extend(model_cases(6, seed + 5));
        v
    }
}
