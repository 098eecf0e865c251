//! Learned footprint attack: a speaker-embedding extractor over delta
//! sequences.
//!
//! The frozen front end is attack A1's delta computation. The trained part
//! is a small x-vector-style network: frame-level TDNN layers with context
//! splicing, one statistics-pooling layer (mean and population std over the
//! sequence, concatenated), segment-level layers, and a softmax over the
//! training speakers. At evaluation time the pre-activation of a segment
//! layer is the speaker embedding; a model-level embedding is the mean of
//! per-utterance embeddings.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::a1;
use crate::error::{Error, Result};
use crate::mat::{self, Mat};
use crate::nn::{Activation, Layer, LayerSpec, ModelParams, TrainConfig};
use crate::fl::ModelRegistry;
use crate::seeds;
use crate::synth::CorpusPartition;

/// Variance floor inside the pooling std; keeps the gradient finite on
/// near-constant sequences without disturbing non-degenerate values.
const VAR_FLOOR: f64 = 1e-12;

/// Shape of the trained part of the attack network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorTopology {
    /// Frame-level TDNN layers (with contexts), applied per delta frame.
    pub frame_layers: Vec<LayerSpec>,
    /// Segment-level layers applied to the pooled vector; the last one is
    /// the softmax over training speakers.
    pub segment_layers: Vec<LayerSpec>,
    /// Index of the segment layer whose pre-activation is the embedding.
    pub embedding_layer: usize,
}

impl ExtractorTopology {
    /// Desk default: three frame-level layers with contexts
    /// `{-2..2}`, `{-1,0,1}`, `{0}`, statistics pooling, one embedding
    /// layer, and the speaker softmax.
    pub fn desk(input_width: usize, frame_dim: usize, embedding_dim: usize, n_speakers: usize) -> Self {
        let frame_layers = vec![
            LayerSpec::new(input_width * 5, frame_dim, Activation::Relu, vec![-2, -1, 0, 1, 2]),
            LayerSpec::new(frame_dim * 3, frame_dim, Activation::Relu, vec![-1, 0, 1]),
            LayerSpec::new(frame_dim, frame_dim, Activation::Relu, vec![0]),
        ];
        let segment_layers = vec![
            LayerSpec::new(frame_dim * 2, embedding_dim, Activation::Relu, vec![0]),
            LayerSpec::new(embedding_dim, n_speakers, Activation::Softmax, vec![0]),
        ];
        ExtractorTopology {
            frame_layers,
            segment_layers,
            embedding_layer: 0,
        }
    }

    pub fn input_width(&self) -> usize {
        self.frame_layers[0].base_dim()
    }

    pub fn n_speakers(&self) -> usize {
        self.segment_layers.last().map_or(0, |l| l.output_dim)
    }

    pub fn embedding_dim(&self) -> usize {
        self.segment_layers[self.embedding_layer].output_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_layers.is_empty() || self.segment_layers.is_empty() {
            return Err(Error::Config("extractor needs frame and segment layers".into()));
        }
        let mut prev = self.input_width();
        for (i, spec) in self.frame_layers.iter().enumerate() {
            spec.validate()?;
            if spec.activation == Activation::Softmax {
                return Err(Error::Config("softmax not allowed on frame layers".into()));
            }
            if spec.input_dim != prev * spec.context.len() {
                return Err(Error::Dimension(format!(
                    "frame layer {i}: input {} != {} x context {}",
                    spec.input_dim,
                    prev,
                    spec.context.len()
                )));
            }
            prev = spec.output_dim;
        }
        // pooling doubles the width
        let mut seg_in = prev * 2;
        let last = self.segment_layers.len() - 1;
        for (i, spec) in self.segment_layers.iter().enumerate() {
            spec.validate()?;
            if spec.context != vec![0] {
                return Err(Error::Config("segment layers cannot splice".into()));
            }
            if spec.input_dim != seg_in {
                return Err(Error::Dimension(format!(
                    "segment layer {i}: input {} != {}",
                    spec.input_dim, seg_in
                )));
            }
            let is_softmax = spec.activation == Activation::Softmax;
            if is_softmax != (i == last) {
                return Err(Error::Config(
                    "exactly the final segment layer must be softmax".into(),
                ));
            }
            seg_in = spec.output_dim;
        }
        if self.embedding_layer >= last + 1 {
            return Err(Error::Config("embedding layer index out of range".into()));
        }
        Ok(())
    }
}

/// Trained extractor parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub frame_layers: Vec<Layer>,
    pub segment_layers: Vec<Layer>,
    pub embedding_layer: usize,
    /// Hidden layer of the acoustic models this extractor was trained on.
    pub h: usize,
}

impl ExtractorParams {
    pub fn topology(&self) -> ExtractorTopology {
        ExtractorTopology {
            frame_layers: self.frame_layers.iter().map(|l| l.spec.clone()).collect(),
            segment_layers: self.segment_layers.iter().map(|l| l.spec.clone()).collect(),
            embedding_layer: self.embedding_layer,
        }
    }
}

/// Fixed-width speaker embedding of one personalized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub model_id: String,
    pub h: usize,
    pub vector: Vec<f64>,
}

/// One training sequence: the delta frames of one (model, utterance) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub model_id: String,
    pub utterance_id: String,
    pub speaker_label: usize,
    pub deltas: Mat,
}

/// Labeled corpus for extractor training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCorpus {
    pub sequences: Vec<TrainingSequence>,
    /// Label index -> speaker id.
    pub speakers: Vec<String>,
    pub h: usize,
    pub width: usize,
}

/// One delta sequence per (personalized model, indicator utterance), labeled
/// with the model's speaker.
pub fn build_training_corpus(
    global: &ModelParams,
    registry: &ModelRegistry,
    indicator: &CorpusPartition,
    h: usize,
) -> Result<TrainingCorpus> {
    if registry.personalized.is_empty() {
        return Err(Error::EmptyDataset("registry has no personalized models".into()));
    }
    if indicator.utterances.is_empty() {
        return Err(Error::EmptyDataset("indicator partition".into()));
    }
    let mut speakers: Vec<String> = registry
        .personalized
        .iter()
        .map(|e| e.speaker_id.clone())
        .collect();
    speakers.sort();
    speakers.dedup();

    let traces = a1::global_indicator_traces(global, indicator, &[h])?;
    let per_model: Result<Vec<Vec<TrainingSequence>>> = registry
        .personalized
        .par_iter()
        .map(|entry| {
            let label = speakers
                .binary_search(&entry.speaker_id)
                .expect("speaker collected above");
            let mut seqs = Vec::with_capacity(indicator.utterances.len());
            for (u, g_traces) in indicator.utterances.iter().zip(&traces) {
                let p = crate::nn::hidden_activations(&entry.model, &u.frames, &[h])?;
                let g = &g_traces[0];
                let mut deltas = Mat::zeros(g.frames.rows(), g.frames.cols());
                for t in 0..deltas.rows() {
                    let gr = g.frames.row(t);
                    let pr = p[0].frames.row(t);
                    let d = deltas.row_mut(t);
                    for i in 0..d.len() {
                        d[i] = pr[i] - gr[i];
                    }
                }
                seqs.push(TrainingSequence {
                    model_id: entry.model.model_id.clone(),
                    utterance_id: u.utterance_id.clone(),
                    speaker_label: label,
                    deltas,
                });
            }
            Ok(seqs)
        })
        .collect();
    let sequences: Vec<TrainingSequence> = per_model?.into_iter().flatten().collect();
    let width = sequences[0].deltas.cols();
    Ok(TrainingCorpus {
        sequences,
        speakers,
        h,
        width,
    })
}

/// Statistics pooling: per-dimension mean and population std over frames.
/// Returns `(mean, std)`, each of the frame width.
fn pool_stats(frames: &Mat) -> (Vec<f64>, Vec<f64>) {
    let t_len = frames.rows();
    let width = frames.cols();
    let inv_t = 1.0 / t_len as f64;
    let mut mean = vec![0.0; width];
    for t in 0..t_len {
        mat::axpy(1.0, frames.row(t), &mut mean);
    }
    for v in mean.iter_mut() {
        *v *= inv_t;
    }
    let mut var = vec![0.0; width];
    for t in 0..t_len {
        let row = frames.row(t);
        for i in 0..width {
            let d = row[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let v = v * inv_t;
            if v > VAR_FLOOR {
                v.sqrt()
            } else {
                VAR_FLOOR.sqrt()
            }
        })
        .collect();
    (mean, std)
}

struct SequenceForward {
    /// Post-activation outputs of each frame layer.
    frame_acts: Vec<Mat>,
    pooled_mean: Vec<f64>,
    pooled_std: Vec<f64>,
    /// Pre-activation then post-activation per segment layer.
    segment_pre: Vec<Vec<f64>>,
    segment_post: Vec<Vec<f64>>,
}

fn dense_forward(layer: &Layer, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nin = layer.spec.input_dim;
    let nout = layer.spec.output_dim;
    let mut pre = vec![0.0; nout];
    for i in 0..nout {
        pre[i] = layer.bias[i] + mat::dot(&layer.weights[i * nin..(i + 1) * nin], input);
    }
    let mut post = pre.clone();
    match layer.spec.activation {
        Activation::Relu => {
            for v in post.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Identity => {}
        Activation::Softmax => crate::nn::softmax_in_place(&mut post),
    }
    (pre, post)
}

fn run_sequence(params: &ExtractorParams, deltas: &Mat) -> Result<SequenceForward> {
    if deltas.cols() != params.frame_layers[0].spec.base_dim() {
        return Err(Error::Dimension(format!(
            "delta width {} does not match extractor input {}",
            deltas.cols(),
            params.frame_layers[0].spec.base_dim()
        )));
    }
    let mut frame_acts = Vec::with_capacity(params.frame_layers.len());
    for (i, layer) in params.frame_layers.iter().enumerate() {
        let prev = if i == 0 { deltas } else { &frame_acts[i - 1] };
        frame_acts.push(crate::nn::apply_layer(layer, prev));
    }
    let (pooled_mean, pooled_std) = pool_stats(frame_acts.last().unwrap());

    let mut segment_pre = Vec::with_capacity(params.segment_layers.len());
    let mut segment_post = Vec::with_capacity(params.segment_layers.len());
    let mut input: Vec<f64> = pooled_mean.iter().chain(&pooled_std).copied().collect();
    for layer in &params.segment_layers {
        let (pre, post) = dense_forward(layer, &input);
        input = post.clone();
        segment_pre.push(pre);
        segment_post.push(post);
    }
    Ok(SequenceForward {
        frame_acts,
        pooled_mean,
        pooled_std,
        segment_pre,
        segment_post,
    })
}

/// Speaker posteriors for one delta sequence.
pub fn classify_sequence(params: &ExtractorParams, deltas: &Mat) -> Result<Vec<f64>> {
    Ok(run_sequence(params, deltas)?.segment_post.last().unwrap().clone())
}

struct ExtractorGradients {
    frame: Vec<(Vec<f64>, Vec<f64>)>,
    segment: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ExtractorGradients {
    fn zeros(params: &ExtractorParams) -> Self {
        let zero = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect()
        };
        ExtractorGradients {
            frame: zero(&params.frame_layers),
            segment: zero(&params.segment_layers),
        }
    }
}

#[inline]
fn clamp_frame(t: usize, offset: i32, n: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, n as i64 - 1) as usize
}

/// Forward + backward for one sequence; returns the cross-entropy loss.
/// Gradients scaled by `scale` are accumulated into `grads`.
fn backprop_sequence(
    params: &ExtractorParams,
    deltas: &Mat,
    label: usize,
    scale: f64,
    grads: &mut ExtractorGradients,
) -> Result<f64> {
    let fwd = run_sequence(params, deltas)?;
    let posterior = fwd.segment_post.last().unwrap();
    let loss = -posterior[label].ln();

    // segment stack backward (softmax + CE folded at the top)
    let n_seg = params.segment_layers.len();
    let mut dz: Vec<f64> = posterior.iter().map(|&p| p * scale).collect();
    dz[label] -= scale;
    for l in (0..n_seg).rev() {
        let layer = &params.segment_layers[l];
        let nin = layer.spec.input_dim;
        let input: Vec<f64> = if l == 0 {
            fwd.pooled_mean.iter().chain(&fwd.pooled_std).copied().collect()
        } else {
            fwd.segment_post[l - 1].clone()
        };
        let (dw, db) = &mut grads.segment[l];
        for i in 0..layer.spec.output_dim {
            let g = dz[i];
            if g == 0.0 {
                continue;
            }
            db[i] += g;
            mat::axpy(g, &input, &mut dw[i * nin..(i + 1) * nin]);
        }
        let mut dinput = vec![0.0; nin];
        for i in 0..layer.spec.output_dim {
            let g = dz[i];
            if g == 0.0 {
                continue;
            }
            mat::axpy(g, &layer.weights[i * nin..(i + 1) * nin], &mut dinput);
        }
        if l > 0 {
            // relu/identity derivative of the previous segment layer
            let prev = &params.segment_layers[l - 1];
            if prev.spec.activation == Activation::Relu {
                for (d, &post) in dinput.iter_mut().zip(&fwd.segment_post[l - 1]) {
                    if post <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = dinput;
        } else {
            dz = dinput; // gradient wrt [mean, std]
        }
    }

    // pooling backward: d/da_t = dmean / T + dstd * (a_t - mean) / (T * std)
    let top = fwd.frame_acts.last().unwrap();
    let t_len = top.rows();
    let width = top.cols();
    let inv_t = 1.0 / t_len as f64;
    let (dmean, dstd) = dz.split_at(width);
    let mut dframes = Mat::zeros(t_len, width);
    for t in 0..t_len {
        let a = top.row(t);
        let d = dframes.row_mut(t);
        for i in 0..width {
            let mut g = dmean[i] * inv_t;
            let std = fwd.pooled_std[i];
            let var = std * std;
            if var > VAR_FLOOR {
                g += dstd[i] * (a[i] - fwd.pooled_mean[i]) * inv_t / std;
            }
            d[i] = g;
        }
    }

    // frame stack backward with splicing scatter-add
    let n_frame = params.frame_layers.len();
    let mut dpost = dframes;
    for l in (0..n_frame).rev() {
        let layer = &params.frame_layers[l];
        // relu derivative of this layer's own output
        if layer.spec.activation == Activation::Relu {
            let post = &fwd.frame_acts[l];
            for t in 0..t_len {
                let p = post.row(t);
                let d = dpost.row_mut(t);
                for i in 0..p.len() {
                    if p[i] <= 0.0 {
                        d[i] = 0.0;
                    }
                }
            }
        }
        let prev: &Mat = if l == 0 { deltas } else { &fwd.frame_acts[l - 1] };
        let nin = layer.spec.input_dim;
        let nout = layer.spec.output_dim;
        let base = layer.spec.base_dim();
        let (dw, db) = &mut grads.frame[l];
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
            let dz_t = dpost.row(t);
            for i in 0..nout {
                let g = dz_t[i];
                if g == 0.0 {
                    continue;
                }
                db[i] += g;
                mat::axpy(g, &spliced, &mut dw[i * nin..(i + 1) * nin]);
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
                    mat::axpy(g, &layer.weights[i * nin..(i + 1) * nin], &mut dv);
                }
                for (oi, &off) in layer.spec.context.iter().enumerate() {
                    let dst = dprev.row_mut(clamp_frame(t, off, prev.rows()));
                    mat::axpy(1.0, &dv[oi * base..(oi + 1) * base], dst);
                }
            }
        }
        if let Some(dprev) = dprev {
            dpost = dprev;
        }
    }
    Ok(loss)
}

fn init_extractor(topology: &ExtractorTopology, h: usize, seed: u64) -> Result<ExtractorParams> {
    topology.validate()?;
    let mut rng = seeds::rng_from(seed);
    let mut build = |specs: &[LayerSpec]| -> Vec<Layer> {
        specs
            .iter()
            .map(|spec| {
                let a = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                Layer {
                    weights: (0..spec.input_dim * spec.output_dim)
                        .map(|_| rng.gen_range(-a..a))
                        .collect(),
                    bias: vec![0.0; spec.output_dim],
                    spec: spec.clone(),
                }
            })
            .collect()
    };
    Ok(ExtractorParams {
        frame_layers: build(&topology.frame_layers),
        segment_layers: build(&topology.segment_layers),
        embedding_layer: topology.embedding_layer,
        h,
    })
}

/// Trains the extractor to predict the speaker from a delta sequence.
/// Mini-batch SGD on per-sequence cross-entropy; deterministic by seed.
pub fn train_extractor(
    corpus: &TrainingCorpus,
    topology: &ExtractorTopology,
    cfg: &TrainConfig,
) -> Result<ExtractorParams> {
    cfg.validate()?;
    topology.validate()?;
    if corpus.speakers.len() < 2 {
        return Err(Error::Config(
            "extractor training needs at least two distinct speakers".into(),
        ));
    }
    if topology.n_speakers() != corpus.speakers.len() {
        return Err(Error::Dimension(format!(
            "softmax width {} != {} training speakers",
            topology.n_speakers(),
            corpus.speakers.len()
        )));
    }
    if topology.input_width() != corpus.width {
        return Err(Error::Dimension(format!(
            "extractor input width {} != delta width {}",
            topology.input_width(),
            corpus.width
        )));
    }

    let mut params = init_extractor(topology, corpus.h, cfg.seed)?;
    let mut rng = seeds::rng_from(seeds::derive_seed(cfg.seed, "shuffle"));
    let mut order: Vec<usize> = (0..corpus.sequences.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = ExtractorGradients::zeros(&params);
            let mut loss = 0.0;
            for &i in batch {
                let s = &corpus.sequences[i];
                loss += backprop_sequence(&params, &s.deltas, s.speaker_label, scale, &mut grads)?;
            }
            if !(loss * scale).is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            for (layer, (dw, db)) in params
                .frame_layers
                .iter_mut()
                .chain(params.segment_layers.iter_mut())
                .zip(grads.frame.iter().chain(&grads.segment))
            {
                mat::axpy(-cfg.learning_rate, dw, &mut layer.weights);
                mat::axpy(-cfg.learning_rate, db, &mut layer.bias);
            }
        }
    }
    Ok(params)
}

/// Fraction of corpus sequences classified as their speaker.
pub fn training_accuracy(params: &ExtractorParams, corpus: &TrainingCorpus) -> Result<f64> {
    let hits: Result<Vec<bool>> = corpus
        .sequences
        .par_iter()
        .map(|s| {
            let post = classify_sequence(params, &s.deltas)?;
            let argmax = post
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            Ok(argmax == s.speaker_label)
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Per-utterance embedding: pre-activation of the embedding segment layer.
fn utterance_embedding(params: &ExtractorParams, deltas: &Mat) -> Result<Vec<f64>> {
    let fwd = run_sequence(params, deltas)?;
    Ok(fwd.segment_pre[params.embedding_layer].clone())
}

/// Model-level embedding: mean of per-utterance embeddings over the
/// indicator set. Utterances are folded in id-sorted order, so the result
/// does not depend on their storage order.
pub fn extract_embedding(
    extractor: &ExtractorParams,
    global: &ModelParams,
    model: &ModelParams,
    indicator: &CorpusPartition,
    h: usize,
) -> Result<Embedding> {
    let traces = a1::global_indicator_traces(global, indicator, &[h])?;
    extract_embedding_with_traces(extractor, &traces, model, indicator, h)
}

/// As [`extract_embedding`], with the global model's indicator traces
/// precomputed so they can be shared across many models.
pub fn extract_embedding_with_traces(
    extractor: &ExtractorParams,
    global_traces: &[Vec<crate::nn::ActivationTrace>],
    model: &ModelParams,
    indicator: &CorpusPartition,
    h: usize,
) -> Result<Embedding> {
    if h != extractor.h {
        return Err(Error::Config(format!(
            "extractor was trained for h={}, requested h={h}",
            extractor.h
        )));
    }
    if indicator.utterances.is_empty() {
        return Err(Error::EmptyDataset("indicator partition".into()));
    }
    let mut order: Vec<usize> = (0..indicator.utterances.len()).collect();
    order.sort_by(|&a, &b| {
        indicator.utterances[a]
            .utterance_id
            .cmp(&indicator.utterances[b].utterance_id)
    });

    let dim = extractor.segment_layers[extractor.embedding_layer].spec.output_dim;
    let mut sum = vec![0.0; dim];
    for &ui in &order {
        let u = &indicator.utterances[ui];
        let p = crate::nn::hidden_activations(model, &u.frames, &[h])?;
        let g = &global_traces[ui][0];
        let mut deltas = Mat::zeros(g.frames.rows(), g.frames.cols());
        for t in 0..deltas.rows() {
            let gr = g.frames.row(t);
            let pr = p[0].frames.row(t);
            let d = deltas.row_mut(t);
            for i in 0..d.len() {
                d[i] = pr[i] - gr[i];
            }
        }
        let e = utterance_embedding(extractor, &deltas)?;
        mat::axpy(1.0, &e, &mut sum);
    }
    let inv = 1.0 / indicator.utterances.len() as f64;
    for v in sum.iter_mut() {
        *v *= inv;
    }
    Ok(Embedding {
        model_id: model.model_id.clone(),
        h,
        vector: sum,
    })
}

/// Cosine similarity in `[-1, 1]`; zero vectors score 0 by convention.
pub fn cosine_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::Dimension(format!(
            "embedding widths {} vs {}",
            a.vector.len(),
            b.vector.len()
        )));
    }
    let na = mat::norm2(&a.vector);
    let nb = mat::norm2(&b.vector);
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(mat::dot(&a.vector, &b.vector) / (na * nb))
}

/// Finite-difference gradient check through the pooling layer; returns the
/// max relative error over a random parameter subset.
pub fn extractor_grad_check(
    params: &ExtractorParams,
    deltas: &Mat,
    label: usize,
    eps: f64,
    n_probe: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut grads = ExtractorGradients::zeros(params);
    backprop_sequence(params, deltas, label, 1.0, &mut grads)?;

    let loss_of = |p: &ExtractorParams| -> Result<f64> {
        let post = classify_sequence(p, deltas)?;
        Ok(-post[label].ln())
    };

    let n_frame = params.frame_layers.len();
    let mut rng = seeds::rng_from(seed);
    let mut scratch = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_probe {
        let l = rng.gen_range(0..n_frame + params.segment_layers.len());
        let (layer, grad) = if l < n_frame {
            (&params.frame_layers[l], &grads.frame[l])
        } else {
            (&params.segment_layers[l - n_frame], &grads.segment[l - n_frame])
        };
        let nw = layer.weights.len();
        let p = rng.gen_range(0..nw + layer.bias.len());
        let (orig, analytic) = if p < nw {
            (layer.weights[p], grad.0[p])
        } else {
            (layer.bias[p - nw], grad.1[p - nw])
        };
        let set = |params: &mut ExtractorParams, v: f64| {
            let layer = if l < n_frame {
                &mut params.frame_layers[l]
            } else {
                &mut params.segment_layers[l - n_frame]
            };
            if p < nw {
                layer.weights[p] = v;
            } else {
                layer.bias[p - nw] = v;
            }
        };
        set(&mut scratch, orig + eps);
        let plus = loss_of(&scratch)?;
        set(&mut scratch, orig - eps);
        let minus = loss_of(&scratch)?;
        set(&mut scratch, orig);
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
