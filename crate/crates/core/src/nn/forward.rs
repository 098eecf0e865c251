//! Forward pass with context splicing and hidden-activation capture.

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, ModelParams};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Post-activation outputs of one hidden layer over a whole utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    /// 1-based hidden layer index.
    pub layer_index: usize,
    /// `T x layer_width`.
    pub frames: Mat,
}

#[inline]
fn clamp_frame(t: usize, offset: i32, n: usize) -> usize {
    let idx = t as i64 + offset as i64;
    idx.clamp(0, n as i64 - 1) as usize
}

/// Fills `out` with the spliced input for frame `t`: concatenated rows of
/// `prev` at the layer's context offsets, edges clamped.
#[inline]
fn splice_into(prev: &Mat, context: &[i32], t: usize, out: &mut [f64]) {
    let base = prev.cols();
    for (oi, &off) in context.iter().enumerate() {
        let src = prev.row(clamp_frame(t, off, prev.rows()));
        out[oi * base..(oi + 1) * base].copy_from_slice(src);
    }
}

/// Affine transform + activation for all frames of one layer.
/// Softmax is computed with the usual max-shift for stability.
pub(crate) fn apply_layer(layer: &Layer, prev: &Mat) -> Mat {
    let t_len = prev.rows();
    let nin = layer.spec.input_dim;
    let nout = layer.spec.output_dim;
    let mut out = Mat::zeros(t_len, nout);
    let mut spliced = vec![0.0; nin];
    for t in 0..t_len {
        splice_into(prev, &layer.spec.context, t, &mut spliced);
        let row = out.row_mut(t);
        for i in 0..nout {
            let w = &layer.weights[i * nin..(i + 1) * nin];
            row[i] = layer.bias[i] + crate::mat::dot(w, &spliced);
        }
        match layer.spec.activation {
            Activation::Relu => {
                for v in row.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(row),
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn check_input(model: &ModelParams, frames: &Mat) -> Result<()> {
    if frames.cols() != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "utterance frames have dim {}, model expects {}",
            frames.cols(),
            model.feature_dim()
        )));
    }
    if frames.rows() == 0 {
        return Err(Error::Dimension("utterance has no frames".into()));
    }
    Ok(())
}

/// Runs the full stack, returning per-frame class posteriors and, when
/// requested, the post-activation trace of hidden layer `capture` (1-based).
pub fn forward(
    model: &ModelParams,
    frames: &Mat,
    capture: Option<usize>,
) -> Result<(Mat, Option<ActivationTrace>)> {
    check_input(model, frames)?;
    if let Some(h) = capture {
        if h == 0 || h > model.n_hidden() {
            return Err(Error::LayerOutOfRange {
                h,
                n_hidden: model.n_hidden(),
            });
        }
    }
    let mut trace = None;
    let mut prev = frames.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        prev = apply_layer(layer, &prev);
        if capture == Some(i + 1) {
            trace = Some(ActivationTrace {
                layer_index: i + 1,
                frames: prev.clone(),
            });
        }
    }
    Ok((prev, trace))
}

/// Post-activation traces for a set of hidden layers in one pass.
/// `capture` must be 1-based, strictly increasing.
pub fn hidden_activations(
    model: &ModelParams,
    frames: &Mat,
    capture: &[usize],
) -> Result<Vec<ActivationTrace>> {
    check_input(model, frames)?;
    for &h in capture {
        if h == 0 || h > model.n_hidden() {
            return Err(Error::LayerOutOfRange {
                h,
                n_hidden: model.n_hidden(),
            });
        }
    }
    let deepest = capture.iter().copied().max().unwrap_or(0);
    let mut traces = Vec::with_capacity(capture.len());
    let mut prev = frames.clone();
    for (i, layer) in model.layers.iter().enumerate().take(deepest) {
        prev = apply_layer(layer, &prev);
        if capture.contains(&(i + 1)) {
            traces.push(ActivationTrace {
                layer_index: i + 1,
                frames: prev.clone(),
            });
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, LayerSpec, Topology};

    fn single_layer(weights: Vec<f64>, bias: Vec<f64>, act: Activation) -> ModelParams {
        let spec = LayerSpec::new(2, 2, act, vec![0]);
        ModelParams {
            layers: vec![Layer {
                spec,
                weights,
                bias,
            }],
            model_id: "m".into(),
            parent_id: None,
        }
    }

    #[test]
    fn zero_weight_relu_hidden_is_zero() {
        // all weights/biases zero, relu: hidden activations all zero
        let specs = vec![
            LayerSpec::new(3, 4, Activation::Relu, vec![0]),
            LayerSpec::new(4, 2, Activation::Softmax, vec![0]),
        ];
        let model = ModelParams {
            layers: specs.into_iter().map(Layer::zeros).collect(),
            model_id: "z".into(),
            parent_id: None,
        };
        let frames = Mat::from_rows(vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]);
        let (_, trace) = forward(&model, &frames, Some(1)).unwrap();
        let trace = trace.unwrap();
        assert!(trace.frames.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_linear_layer() {
        // W=[[1,0],[0,2]], b=[0,1], x=[3,4] -> [3, 9]
        let model = single_layer(vec![1.0, 0.0, 0.0, 2.0], vec![0.0, 1.0], Activation::Identity);
        let frames = Mat::from_rows(vec![vec![3.0, 4.0]]);
        let (out, _) = forward(&model, &frames, None).unwrap();
        assert_eq!(out.row(0), &[3.0, 9.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let topo = Topology {
            feature_dim: 6,
            hidden_layers: 3,
            hidden_dim: 8,
            spliced_layers: 2,
            n_classes: 5,
        };
        let model = init_model(&topo.to_specs(), "m", 3).unwrap();
        let mut rng = crate::seeds::rng_from(11);
        use rand::Rng;
        let frames = Mat::from_rows(
            (0..9)
                .map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect(),
        );
        let (post, _) = forward(&model, &frames, None).unwrap();
        for t in 0..post.rows() {
            let sum: f64 = post.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {t} sums to {sum}");
        }
    }

    #[test]
    fn capture_shapes_and_range_errors() {
        let topo = Topology {
            feature_dim: 4,
            hidden_layers: 2,
            hidden_dim: 6,
            spliced_layers: 1,
            n_classes: 3,
        };
        let model = init_model(&topo.to_specs(), "m", 5).unwrap();
        let frames = Mat::zeros(7, 4);
        let (_, trace) = forward(&model, &frames, Some(2)).unwrap();
        assert_eq!(trace.unwrap().frames.rows(), 7);
        assert!(matches!(
            forward(&model, &frames, Some(3)),
            Err(Error::LayerOutOfRange { .. })
        ));
        let bad = Mat::zeros(7, 5);
        assert!(matches!(forward(&model, &bad, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn determinism_bit_identical() {
        let topo = Topology {
            feature_dim: 5,
            hidden_layers: 4,
            hidden_dim: 10,
            spliced_layers: 2,
            n_classes: 4,
        };
        let model = init_model(&topo.to_specs(), "m", 17).unwrap();
        use rand::Rng;
        let mut rng = crate::seeds::rng_from(2);
        let frames = Mat::from_rows(
            (0..12)
                .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        );
        let (a, ta) = forward(&model, &frames, Some(3)).unwrap();
        let (b, tb) = forward(&model, &frames, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn context_zero_everywhere_is_frame_local() {
        // perturbing other frames must not change frame t's output
        let topo = Topology {
            feature_dim: 4,
            hidden_layers: 3,
            hidden_dim: 6,
            spliced_layers: 0,
            n_classes: 3,
        };
        let model = init_model(&topo.to_specs(), "m", 23).unwrap();
        use rand::Rng;
        let mut rng = crate::seeds::rng_from(4);
        let base: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (out_a, _) = forward(&model, &Mat::from_rows(base.clone()), None).unwrap();
        let mut perturbed = base.clone();
        for (i, row) in perturbed.iter_mut().enumerate() {
            if i != 2 {
                for v in row.iter_mut() {
                    *v += rng.gen_range(0.5..1.5);
                }
            }
        }
        let (out_b, _) = forward(&model, &Mat::from_rows(perturbed), None).unwrap();
        assert_eq!(out_a.row(2), out_b.row(2));
    }

    #[test]
    fn multi_capture_matches_single_capture() {
        let topo = Topology {
            feature_dim: 3,
            hidden_layers: 3,
            hidden_dim: 5,
            spliced_layers: 1,
            n_classes: 2,
        };
        let model = init_model(&topo.to_specs(), "m", 31).unwrap();
        use rand::Rng;
        let mut rng = crate::seeds::rng_from(6);
        let frames = Mat::from_rows(
            (0..5)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        );
        let all = hidden_activations(&model, &frames, &[1, 2, 3]).unwrap();
        for trace in &all {
            let (_, single) = forward(&model, &frames, Some(trace.layer_index)).unwrap();
            assert_eq!(single.unwrap().frames, trace.frames);
        }
    }
}
