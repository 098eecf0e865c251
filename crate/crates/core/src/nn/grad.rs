//! Finite-difference gradient checking.
//!
//! The analytic backprop gradient is compared against central differences on
//! a random parameter subset; the returned value is the worst relative error.
//! This is the numerical gate for the training engine: a correct
//! implementation stays below 1e-4, a corrupted one jumps above 1e-2.

use rand::Rng;

use super::train::{backprop, Gradients, TopLoss};
use super::{Activation, ModelParams};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::seeds;

/// Loss under which gradients are checked.
pub enum CheckLoss<'a> {
    /// Per-frame cross-entropy against labels (softmax head).
    CrossEntropy(&'a [usize]),
    /// 0.5 * squared error against target frames.
    Squared(&'a Mat),
}

fn loss_value(model: &ModelParams, frames: &Mat, loss: &CheckLoss) -> Result<f64> {
    let (post, _) = super::forward(model, frames, None)?;
    let n = frames.rows() as f64;
    Ok(match loss {
        CheckLoss::CrossEntropy(labels) => {
            let mut s = 0.0;
            for t in 0..post.rows() {
                s += -post.row(t)[labels[t]].ln();
            }
            s / n
        }
        CheckLoss::Squared(target) => {
            let mut s = 0.0;
            for t in 0..post.rows() {
                let p = post.row(t);
                let y = target.row(t);
                for i in 0..p.len() {
                    let e = p[i] - y[i];
                    s += 0.5 * e * e;
                }
            }
            s / n
        }
    })
}

/// Analytic gradient of the mean per-frame loss, as computed by backprop.
pub(super) fn analytic_gradients(
    model: &ModelParams,
    frames: &Mat,
    loss: &CheckLoss,
) -> Gradients {
    let mut grads = Gradients::zeros(model);
    let inv_n = 1.0 / frames.rows() as f64;
    let top = match loss {
        CheckLoss::CrossEntropy(labels) => TopLoss::CrossEntropy(labels),
        CheckLoss::Squared(target) => TopLoss::Squared(target),
    };
    backprop(model, frames, &top, inv_n, &mut grads);
    grads
}

/// Max relative error between analytic and central-difference gradients over
/// `n_probe` randomly chosen parameters (seeded).
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check(
    model: &ModelParams,
    frames: &Mat,
    loss: &CheckLoss,
    eps: f64,
    n_probe: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    model.validate()?;
    if let CheckLoss::CrossEntropy(labels) = loss {
        if model.layers.last().unwrap().spec.activation != Activation::Softmax {
            return Err(Error::Config(
                "cross-entropy check requires a softmax head".into(),
            ));
        }
        if labels.len() != frames.rows() {
            return Err(Error::Dimension("labels/frames length mismatch".into()));
        }
    }

    let grads = analytic_gradients(model, frames, loss);
    let mut rng = seeds::rng_from(seed);
    let mut scratch = model.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_probe {
        let l = rng.gen_range(0..model.layers.len());
        let nw = model.layers[l].weights.len();
        let nb = model.layers[l].bias.len();
        let p = rng.gen_range(0..nw + nb);

        let (orig, analytic) = if p < nw {
            (model.layers[l].weights[p], grads.layers[l].0[p])
        } else {
            (model.layers[l].bias[p - nw], grads.layers[l].1[p - nw])
        };

        let mut eval_at = |v: f64| -> Result<f64> {
            if p < nw {
                scratch.layers[l].weights[p] = v;
            } else {
                scratch.layers[l].bias[p - nw] = v;
            }
            loss_value(&scratch, frames, loss)
        };
        let plus = eval_at(orig + eps)?;
        let minus = eval_at(orig - eps)?;
        eval_at(orig)?; // restore
        let numeric = (plus - minus) / (2.0 * eps);

        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
