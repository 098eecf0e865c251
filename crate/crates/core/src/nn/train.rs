//! Mini-batch SGD training and fine-tuning.
//!
//! The loss is mean per-frame cross-entropy over the batch. Backprop handles
//! context splicing by scatter-adding each frame's upstream gradient into the
//! clamped source frames of the previous layer.

use rand::seq::SliceRandom;

use super::forward::apply_layer;
use super::{Activation, Layer, ModelParams, TrainConfig};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::seeds;

/// One labeled utterance: `frames` is `T x D`, `labels` has length `T`.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub frames: &'a Mat,
    pub labels: &'a [usize],
}

/// Loss applied at the top of the stack.
pub(super) enum TopLoss<'a> {
    /// Per-frame cross-entropy against class labels; requires a softmax head.
    CrossEntropy(&'a [usize]),
    /// 0.5 * squared error against target frames; for non-softmax heads.
    Squared(&'a Mat),
}

/// Per-layer (weight, bias) gradient buffers.
pub(super) struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros(model: &ModelParams) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }
}

#[inline]
fn clamp_frame(t: usize, offset: i32, n: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, n as i64 - 1) as usize
}

fn activation_backward(layer: &Layer, post: &Mat, dpost: &mut Mat) {
    match layer.spec.activation {
        Activation::Identity => {}
        Activation::Relu => {
            for t in 0..post.rows() {
                let p = post.row(t);
                let d = dpost.row_mut(t);
                for i in 0..p.len() {
                    if p[i] <= 0.0 {
                        d[i] = 0.0;
                    }
                }
            }
        }
        Activation::Softmax => {
            // Only reached through the Squared loss on a softmax head, which
            // the bench never trains; CrossEntropy folds softmax into dz.
            for t in 0..post.rows() {
                let p = post.row(t);
                let d = dpost.row_mut(t).to_vec();
                let s: f64 = p.iter().zip(&d).map(|(pi, di)| pi * di).sum();
                let out = dpost.row_mut(t);
                for i in 0..p.len() {
                    out[i] = p[i] * (d[i] - s);
                }
            }
        }
    }
}

/// Forward + backward over one utterance. Gradients (scaled by `inv_n`) are
/// accumulated into `grads`; returns the *sum* of per-frame losses.
pub(super) fn backprop(
    model: &ModelParams,
    frames: &Mat,
    loss: &TopLoss,
    inv_n: f64,
    grads: &mut Gradients,
) -> f64 {
    let n_layers = model.layers.len();
    let t_len = frames.rows();

    // Forward, keeping every layer's post-activation output.
    let mut acts: Vec<Mat> = Vec::with_capacity(n_layers);
    for (i, layer) in model.layers.iter().enumerate() {
        let prev = if i == 0 { frames } else { &acts[i - 1] };
        acts.push(apply_layer(layer, prev));
    }
    let top = &acts[n_layers - 1];

    // Top-layer loss and dL/dz (already scaled by inv_n).
    let mut loss_sum = 0.0;
    let mut dz = Mat::zeros(t_len, top.cols());
    match loss {
        TopLoss::CrossEntropy(labels) => {
            debug_assert_eq!(labels.len(), t_len);
            debug_assert_eq!(
                model.layers[n_layers - 1].spec.activation,
                Activation::Softmax
            );
            for t in 0..t_len {
                let p = top.row(t);
                loss_sum += -p[labels[t]].ln();
                let d = dz.row_mut(t);
                d.copy_from_slice(p);
                d[labels[t]] -= 1.0;
                for v in d.iter_mut() {
                    *v *= inv_n;
                }
            }
        }
        TopLoss::Squared(target) => {
            debug_assert_eq!(target.rows(), t_len);
            for t in 0..t_len {
                let p = top.row(t);
                let y = target.row(t);
                let d = dz.row_mut(t);
                for i in 0..p.len() {
                    let e = p[i] - y[i];
                    loss_sum += 0.5 * e * e;
                    d[i] = e * inv_n;
                }
            }
            activation_backward(&model.layers[n_layers - 1], top, &mut dz);
        }
    }

    // Backward through the stack.
    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let prev: &Mat = if l == 0 { frames } else { &acts[l - 1] };
        let nin = layer.spec.input_dim;
        let nout = layer.spec.output_dim;
        let base = layer.spec.base_dim();
        let (dw, db) = &mut grads.layers[l];
        let mut dprev = if l > 0 {
            Some(Mat::zeros(prev.rows(), prev.cols()))
        } else {
            None
        };

        let mut spliced = vec![0.0; nin];
        let mut dv = vec![0.0; nin];
        for t in 0..t_len {
            for (oi, &off) in layer.spec.context.iter().enumerate() {
                let src = prev.row(clamp_frame(t, off, prev.rows()));
                spliced[oi * base..(oi + 1) * base].copy_from_slice(src);
            }
            let dz_t = dz.row(t);
            for i in 0..nout {
                let g = dz_t[i];
                if g == 0.0 {
                    continue;
                }
                db[i] += g;
                crate::mat::axpy(g, &spliced, &mut dw[i * nin..(i + 1) * nin]);
            }
            if let Some(dprev) = dprev.as_mut() {
                for v in dv.iter_mut() {
                    *v = 0.0;
                }
                for i in 0..nout {
                    let g = dz_t[i];
                    if g == 0.0 {
                        continue;
                    }
                    crate::mat::axpy(g, &layer.weights[i * nin..(i + 1) * nin], &mut dv);
                }
                for (oi, &off) in layer.spec.context.iter().enumerate() {
                    let dst = dprev.row_mut(clamp_frame(t, off, prev.rows()));
                    crate::mat::axpy(1.0, &dv[oi * base..(oi + 1) * base], dst);
                }
            }
        }

        if let Some(mut dprev) = dprev {
            activation_backward(&model.layers[l - 1], &acts[l - 1], &mut dprev);
            dz = dprev;
        }
    }
    loss_sum
}

fn check_dataset(model: &ModelParams, data: &[Sample], what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(what.into()));
    }
    let k = model.n_classes();
    for (i, s) in data.iter().enumerate() {
        if s.frames.cols() != model.feature_dim() {
            return Err(Error::Dimension(format!(
                "{what}: utterance {i} has frame dim {}, model expects {}",
                s.frames.cols(),
                model.feature_dim()
            )));
        }
        if s.labels.len() != s.frames.rows() {
            return Err(Error::Dimension(format!(
                "{what}: utterance {i} has {} labels for {} frames",
                s.labels.len(),
                s.frames.rows()
            )));
        }
        if let Some(&bad) = s.labels.iter().find(|&&l| l >= k) {
            return Err(Error::Config(format!(
                "{what}: utterance {i} has label {bad} outside [0, {k})"
            )));
        }
    }
    Ok(())
}

/// Mini-batch SGD on mean per-frame cross-entropy. Deterministic given
/// `cfg.seed`; the input model is untouched.
pub fn train_supervised(
    init: &ModelParams,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    init.validate()?;
    cfg.validate()?;
    check_dataset(init, data, "training data")?;
    if init.layers.last().unwrap().spec.activation != Activation::Softmax {
        return Err(Error::Config(
            "supervised training requires a softmax output layer".into(),
        ));
    }

    let mut model = init.clone();
    let mut rng = seeds::rng_from(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let n_frames: usize = batch.iter().map(|&i| data[i].frames.rows()).sum();
            let inv_n = 1.0 / n_frames as f64;
            let mut grads = Gradients::zeros(&model);
            let mut loss_sum = 0.0;
            for &i in batch {
                loss_sum += backprop(
                    &model,
                    data[i].frames,
                    &TopLoss::CrossEntropy(data[i].labels),
                    inv_n,
                    &mut grads,
                );
            }
            if !(loss_sum * inv_n).is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            for (layer, (dw, db)) in model.layers.iter_mut().zip(&grads.layers) {
                crate::mat::axpy(-cfg.learning_rate, dw, &mut layer.weights);
                crate::mat::axpy(-cfg.learning_rate, db, &mut layer.bias);
            }
        }
    }
    Ok(model)
}

/// Fine-tunes every parameter of `global` on one client's data. The result
/// records `global` as its parent and gets a deterministic derived id.
pub fn fine_tune(
    global: &ModelParams,
    client_data: &[Sample],
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let mut tuned = train_supervised(global, client_data, cfg)?;
    let mut digest = Vec::new();
    digest.extend_from_slice(global.model_id.as_bytes());
    digest.extend_from_slice(&cfg.seed.to_le_bytes());
    for s in client_data {
        digest.extend_from_slice(&(s.frames.rows() as u64).to_le_bytes());
        for &l in s.labels {
            digest.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    tuned.model_id = format!("ft-{:016x}", seeds::fnv1a(&digest));
    tuned.parent_id = Some(global.model_id.clone());
    Ok(tuned)
}

/// Mean per-frame cross-entropy of `model` on `data`.
pub fn mean_cross_entropy(model: &ModelParams, data: &[Sample]) -> Result<f64> {
    check_dataset(model, data, "evaluation data")?;
    let mut loss = 0.0;
    let mut n = 0usize;
    for s in data {
        let (post, _) = super::forward(model, s.frames, None)?;
        for t in 0..post.rows() {
            loss += -post.row(t)[s.labels[t]].ln();
        }
        n += post.rows();
    }
    Ok(loss / n as f64)
}

/// Fraction of frames whose argmax posterior matches the label.
pub fn frame_accuracy(model: &ModelParams, data: &[Sample]) -> Result<f64> {
    check_dataset(model, data, "evaluation data")?;
    let mut hits = 0usize;
    let mut n = 0usize;
    for s in data {
        let (post, _) = super::forward(model, s.frames, None)?;
        for t in 0..post.rows() {
            let row = post.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            hits += (argmax == s.labels[t]) as usize;
        }
        n += post.rows();
    }
    Ok(hits as f64 / n as f64)
}
