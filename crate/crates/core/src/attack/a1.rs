//! Statistical footprint attack.
//!
//! For each personalized model, hidden-layer activation deltas against the
//! global model are pooled over every frame of the indicator set into a mean
//! and a population standard deviation vector. Two models are compared by
//! the norm-normalized distance of those vectors; trials are scored with the
//! negated distance so that larger means more similar.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asv::{ScoreMeta, ScoredTrial, ScoredTrials, SweepRow, Trial};
use crate::error::{Error, Result};
use crate::fl::ModelRegistry;
use crate::mat::{self, Mat};
use crate::nn::{self, ActivationTrace, ModelParams};
use crate::seeds;
use crate::synth::{CorpusPartition, Utterance};

/// Per-frame activation differences of one utterance at one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSequence {
    pub layer_index: usize,
    pub utterance_id: String,
    /// `T x layer_width`.
    pub deltas: Mat,
}

/// Frame-pooled delta statistics of one personalized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStats {
    pub layer_index: usize,
    pub mu: Vec<f64>,
    /// Population standard deviation (denominator is the pooled frame count).
    pub sigma: Vec<f64>,
    pub n_frames: u64,
}

/// Weights of the mean and standard-deviation terms in the similarity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    /// Floor applied to a zero norm when the other vector is non-zero.
    pub zero_norm_epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            alpha_mu: 1.0,
            alpha_sigma: 10.0,
            zero_norm_epsilon: 1e-12,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_mu < 0.0 || self.alpha_sigma < 0.0 {
            return Err(Error::Config("similarity alphas must be >= 0".into()));
        }
        if self.alpha_mu == 0.0 && self.alpha_sigma == 0.0 {
            return Err(Error::Config("similarity alphas cannot both be zero".into()));
        }
        if !(self.zero_norm_epsilon > 0.0) {
            return Err(Error::Config("zero_norm_epsilon must be > 0".into()));
        }
        Ok(())
    }

    /// Variant keeping only the mean term.
    pub fn mu_only(&self) -> SimilarityConfig {
        SimilarityConfig {
            alpha_sigma: 0.0,
            alpha_mu: if self.alpha_mu > 0.0 { self.alpha_mu } else { 1.0 },
            ..self.clone()
        }
    }

    /// Variant keeping only the standard-deviation term.
    pub fn sigma_only(&self) -> SimilarityConfig {
        SimilarityConfig {
            alpha_mu: 0.0,
            alpha_sigma: if self.alpha_sigma > 0.0 {
                self.alpha_sigma
            } else {
                1.0
            },
            ..self.clone()
        }
    }

    pub fn hash(&self) -> String {
        let mut buf = Vec::with_capacity(24);
        buf.extend_from_slice(&self.alpha_mu.to_le_bytes());
        buf.extend_from_slice(&self.alpha_sigma.to_le_bytes());
        buf.extend_from_slice(&self.zero_norm_epsilon.to_le_bytes());
        format!("{:016x}", seeds::fnv1a(&buf))
    }
}

/// Per-frame activation delta of `personalized` against `global` at hidden
/// layer `h` on one utterance.
pub fn compute_delta(
    global: &ModelParams,
    personalized: &ModelParams,
    h: usize,
    utt: &Utterance,
) -> Result<DeltaSequence> {
    if !global.same_topology(personalized) {
        return Err(Error::TopologyMismatch(format!(
            "{} vs {}",
            global.model_id, personalized.model_id
        )));
    }
    let (_, g) = nn::forward(global, &utt.frames, Some(h))?;
    let (_, p) = nn::forward(personalized, &utt.frames, Some(h))?;
    Ok(delta_from_traces(
        &g.expect("capture requested"),
        &p.expect("capture requested"),
        &utt.utterance_id,
    ))
}

fn delta_from_traces(global: &ActivationTrace, personal: &ActivationTrace, utt_id: &str) -> DeltaSequence {
    debug_assert_eq!(global.layer_index, personal.layer_index);
    let mut deltas = Mat::zeros(global.frames.rows(), global.frames.cols());
    for t in 0..deltas.rows() {
        let g = global.frames.row(t);
        let p = personal.frames.row(t);
        let d = deltas.row_mut(t);
        for i in 0..d.len() {
            d[i] = p[i] - g[i];
        }
    }
    DeltaSequence {
        layer_index: global.layer_index,
        utterance_id: utt_id.to_string(),
        deltas,
    }
}

/// Mean and population standard deviation pooled over all frames of all
/// sequences (not per-utterance means averaged).
pub fn accumulate_stats(deltas: &[DeltaSequence]) -> Result<DeltaStats> {
    let first = deltas
        .first()
        .ok_or_else(|| Error::EmptyDataset("no delta sequences".into()))?;
    let width = first.deltas.cols();
    let layer_index = first.layer_index;
    for d in deltas {
        if d.deltas.cols() != width || d.layer_index != layer_index {
            return Err(Error::Dimension(format!(
                "delta sequence {} disagrees on layer/width",
                d.utterance_id
            )));
        }
    }
    let n: u64 = deltas.iter().map(|d| d.deltas.rows() as u64).sum();
    let inv_n = 1.0 / n as f64;

    let mut mu = vec![0.0; width];
    for d in deltas {
        for t in 0..d.deltas.rows() {
            mat::axpy(1.0, d.deltas.row(t), &mut mu);
        }
    }
    for v in mu.iter_mut() {
        *v *= inv_n;
    }

    let mut var = vec![0.0; width];
    for d in deltas {
        for t in 0..d.deltas.rows() {
            let row = d.deltas.row(t);
            for i in 0..width {
                let dev = row[i] - mu[i];
                var[i] += dev * dev;
            }
        }
    }
    let sigma = var.iter().map(|v| (v * inv_n).sqrt()).collect();
    Ok(DeltaStats {
        layer_index,
        mu,
        sigma,
        n_frames: n,
    })
}

fn normalized_term(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let na = mat::norm2(a);
    let nb = mat::norm2(b);
    if na == 0.0 && nb == 0.0 {
        // identical zero vectors: maximally similar
        return 0.0;
    }
    mat::dist2(a, b) / (na.max(eps) * nb.max(eps))
}

/// Similarity score `rho`: lower means more similar, `rho(a, a) = 0`.
pub fn similarity(a: &DeltaStats, b: &DeltaStats, cfg: &SimilarityConfig) -> Result<f64> {
    cfg.validate()?;
    if a.layer_index != b.layer_index || a.mu.len() != b.mu.len() {
        return Err(Error::Dimension(
            "delta stats disagree on layer or width".into(),
        ));
    }
    let mut rho = 0.0;
    if cfg.alpha_mu > 0.0 {
        rho += cfg.alpha_mu * normalized_term(&a.mu, &b.mu, cfg.zero_norm_epsilon);
    }
    if cfg.alpha_sigma > 0.0 {
        rho += cfg.alpha_sigma * normalized_term(&a.sigma, &b.sigma, cfg.zero_norm_epsilon);
    }
    Ok(rho)
}

/// Write-once cache of per-model delta statistics. Concurrent insertion of
/// distinct keys is safe; an existing entry is never recomputed.
#[derive(Default)]
pub struct StatsCache {
    inner: Mutex<BTreeMap<String, Arc<DeltaStats>>>,
}

impl StatsCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<Arc<DeltaStats>> {
        self.inner.lock().unwrap().get(key).cloned()
    }

    pub fn get_or_try_insert(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<DeltaStats>,
    ) -> Result<Arc<DeltaStats>> {
        if let Some(hit) = self.get(key) {
            return Ok(hit);
        }
        let value = Arc::new(compute()?);
        let mut map = self.inner.lock().unwrap();
        Ok(map.entry(key.to_string()).or_insert(value).clone())
    }

    pub fn insert(&self, key: &str, stats: DeltaStats) {
        self.inner
            .lock()
            .unwrap()
            .entry(key.to_string())
            .or_insert_with(|| Arc::new(stats));
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Global-model activation traces on the indicator set, one entry per
/// utterance per requested layer. Shared across all personalized models.
pub fn global_indicator_traces(
    global: &ModelParams,
    indicator: &CorpusPartition,
    layers: &[usize],
) -> Result<Vec<Vec<ActivationTrace>>> {
    indicator
        .utterances
        .iter()
        .map(|u| nn::hidden_activations(global, &u.frames, layers))
        .collect()
}

/// Delta statistics of one model over the whole indicator set, for each
/// requested layer (single forward pass per utterance).
pub fn model_indicator_stats(
    global_traces: &[Vec<ActivationTrace>],
    model: &ModelParams,
    indicator: &CorpusPartition,
    layers: &[usize],
) -> Result<Vec<DeltaStats>> {
    let mut per_layer: Vec<Vec<DeltaSequence>> = vec![Vec::new(); layers.len()];
    for (u, g_traces) in indicator.utterances.iter().zip(global_traces) {
        let p_traces = nn::hidden_activations(model, &u.frames, layers)?;
        for (slot, (g, p)) in g_traces.iter().zip(&p_traces).enumerate() {
            per_layer[slot].push(delta_from_traces(g, p, &u.utterance_id));
        }
    }
    per_layer.iter().map(|seqs| accumulate_stats(seqs)).collect()
}

/// Convenience single-model, single-layer variant.
pub fn indicator_delta_stats(
    global: &ModelParams,
    model: &ModelParams,
    indicator: &CorpusPartition,
    h: usize,
) -> Result<DeltaStats> {
    if !global.same_topology(model) {
        return Err(Error::TopologyMismatch(format!(
            "{} vs {}",
            global.model_id, model.model_id
        )));
    }
    let traces = global_indicator_traces(global, indicator, &[h])?;
    Ok(model_indicator_stats(&traces, model, indicator, &[h])?.remove(0))
}

fn referenced_models<'a>(trials: &'a [Trial], registry: &ModelRegistry) -> Result<Vec<&'a str>> {
    let mut ids: Vec<&str> = Vec::new();
    for t in trials {
        for id in [t.enroll_model_id.as_str(), t.test_model_id.as_str()] {
            if registry.model(id).is_none() {
                return Err(Error::UnknownModel(id.to_string()));
            }
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// Populates `cache` with indicator delta stats for every model the trials
/// reference; models are processed in parallel.
pub fn fill_stats_cache(
    cache: &StatsCache,
    global: &ModelParams,
    registry: &ModelRegistry,
    indicator: &CorpusPartition,
    h: usize,
    trials: &[Trial],
) -> Result<()> {
    let ids = referenced_models(trials, registry)?;
    if indicator.utterances.is_empty() {
        return Err(Error::EmptyDataset("indicator partition".into()));
    }
    let traces = global_indicator_traces(global, indicator, &[h])?;
    let computed: Result<Vec<(String, DeltaStats)>> = ids
        .par_iter()
        .filter(|id| cache.get(id).is_none())
        .map(|id| {
            let model = registry.model(id).expect("checked above");
            let stats =
                model_indicator_stats(&traces, model, indicator, &[h])?.remove(0);
            Ok((id.to_string(), stats))
        })
        .collect();
    for (id, stats) in computed? {
        cache.insert(&id, stats);
    }
    Ok(())
}

/// Scores trials from precomputed stats: `score = -rho`.
pub fn score_trials_from_stats(
    stats: &BTreeMap<String, Arc<DeltaStats>>,
    trials: &[Trial],
    h: usize,
    cfg: &SimilarityConfig,
) -> Result<ScoredTrials> {
    let scored: Result<Vec<ScoredTrial>> = trials
        .par_iter()
        .map(|t| {
            let a = stats
                .get(&t.enroll_model_id)
                .ok_or_else(|| Error::UnknownModel(t.enroll_model_id.clone()))?;
            let b = stats
                .get(&t.test_model_id)
                .ok_or_else(|| Error::UnknownModel(t.test_model_id.clone()))?;
            Ok(ScoredTrial {
                trial: t.clone(),
                score: -similarity(a, b, cfg)?,
            })
        })
        .collect();
    Ok(ScoredTrials {
        meta: ScoreMeta {
            attack: "a1".into(),
            h,
            config_hash: cfg.hash(),
        },
        trials: scored?,
    })
}

/// End-to-end A1 scoring: per-model stats computed once (cached), then each
/// trial scored with the negated similarity.
pub fn score_all(
    global: &ModelParams,
    registry: &ModelRegistry,
    indicator: &CorpusPartition,
    h: usize,
    trials: &[Trial],
    cfg: &SimilarityConfig,
) -> Result<ScoredTrials> {
    cfg.validate()?;
    let cache = StatsCache::new();
    fill_stats_cache(&cache, global, registry, indicator, h, trials)?;
    let stats = cache.inner.lock().unwrap().clone();
    score_trials_from_stats(&stats, trials, h, cfg)
}

/// A1 EER per hidden layer with the mean-only / std-only / combined
/// variants. Stats for all layers come from one forward pass per model.
pub fn layer_sweep(
    global: &ModelParams,
    registry: &ModelRegistry,
    indicator: &CorpusPartition,
    h_list: &[usize],
    trials: &[Trial],
    cfg: &SimilarityConfig,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let ids = referenced_models(trials, registry)?;
    let traces = global_indicator_traces(global, indicator, h_list)?;
    let all_stats: Result<Vec<(String, Vec<DeltaStats>)>> = ids
        .par_iter()
        .map(|id| {
            let model = registry.model(id).expect("checked above");
            Ok((
                id.to_string(),
                model_indicator_stats(&traces, model, indicator, h_list)?,
            ))
        })
        .collect();
    let all_stats = all_stats?;

    let mut rows = Vec::with_capacity(h_list.len());
    for (slot, &h) in h_list.iter().enumerate() {
        let stats: BTreeMap<String, Arc<DeltaStats>> = all_stats
            .iter()
            .map(|(id, per_layer)| (id.clone(), Arc::new(per_layer[slot].clone())))
            .collect();
        let eer_of = |c: &SimilarityConfig| -> Result<f64> {
            let scored = score_trials_from_stats(&stats, trials, h, c)?;
            Ok(crate::asv::compute_eer(&scored)?.eer)
        };
        rows.push(SweepRow {
            h,
            eer_mu_only: eer_of(&cfg.mu_only())?,
            eer_sigma_only: eer_of(&cfg.sigma_only())?,
            eer_combined: eer_of(cfg)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, LayerSpec};
    use rand::Rng;

    fn utt(frames: Vec<Vec<f64>>) -> Utterance {
        Utterance {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            frames: Mat::from_rows(frames),
            labels: None,
        }
    }

    fn linear_model(weights: Vec<f64>, id: &str) -> ModelParams {
        // hidden linear layer + softmax head so h=1 is a valid hidden layer
        ModelParams {
            layers: vec![
                Layer {
                    spec: LayerSpec::new(2, 2, Activation::Identity, vec![0]),
                    weights,
                    bias: vec![0.0, 0.0],
                },
                Layer {
                    spec: LayerSpec::new(2, 2, Activation::Softmax, vec![0]),
                    weights: vec![1.0, 0.0, 0.0, 1.0],
                    bias: vec![0.0, 0.0],
                },
            ],
            model_id: id.into(),
            parent_id: None,
        }
    }

    #[test]
    fn identical_models_give_exact_zero_deltas() {
        let topo = crate::nn::Topology {
            feature_dim: 4,
            hidden_layers: 3,
            hidden_dim: 6,
            spliced_layers: 1,
            n_classes: 3,
        };
        let g = crate::nn::init_model(&topo.to_specs(), "g", 3).unwrap();
        let mut rng = seeds::rng_from(5);
        let u = utt((0..6)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect());
        for h in 1..=3 {
            let d = compute_delta(&g, &g, h, &u).unwrap();
            assert!(d.deltas.as_slice().iter().all(|&v| v == 0.0), "h={h}");
        }
    }

    #[test]
    fn hand_computed_delta_on_2x2() {
        // W_g = [[1,2],[3,4]], D = [[1,0],[0,2]], x = [3,4]: delta = D.x = [3, 8]
        let g = linear_model(vec![1.0, 2.0, 3.0, 4.0], "g");
        let p = linear_model(vec![2.0, 2.0, 3.0, 6.0], "p");
        let u = utt(vec![vec![3.0, 4.0]]);
        let d = compute_delta(&g, &p, 1, &u).unwrap();
        assert_eq!(d.deltas.row(0), &[3.0, 8.0]);
    }

    #[test]
    fn delta_length_matches_frames() {
        let g = linear_model(vec![1.0, 0.0, 0.0, 1.0], "g");
        let p = linear_model(vec![1.0, 0.5, 0.0, 1.0], "p");
        let u = utt(vec![vec![1.0, 0.0]; 5]);
        let d = compute_delta(&g, &p, 1, &u).unwrap();
        assert_eq!(d.deltas.rows(), 5);
    }

    fn seq(layer: usize, id: &str, rows: Vec<Vec<f64>>) -> DeltaSequence {
        DeltaSequence {
            layer_index: layer,
            utterance_id: id.into(),
            deltas: Mat::from_rows(rows),
        }
    }

    #[test]
    fn constant_deltas_mu_c_sigma_zero() {
        let c = vec![0.5, -1.5, 2.0];
        let s = accumulate_stats(&[
            seq(1, "a", vec![c.clone(); 3]),
            seq(1, "b", vec![c.clone(); 2]),
        ])
        .unwrap();
        assert_eq!(s.mu, c);
        assert!(s.sigma.iter().all(|&v| v == 0.0));
        assert_eq!(s.n_frames, 5);
    }

    #[test]
    fn scalar_population_formula() {
        let s = accumulate_stats(&[seq(1, "a", vec![vec![0.0], vec![2.0]])]).unwrap();
        assert_eq!(s.mu, vec![1.0]);
        assert_eq!(s.sigma, vec![1.0]);
    }

    #[test]
    fn pooling_equals_concatenation_oracle() {
        let mut rng = seeds::rng_from(9);
        let a: Vec<Vec<f64>> = (0..1).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let split = accumulate_stats(&[seq(2, "a", a.clone()), seq(2, "b", b.clone())]).unwrap();
        let mut concat = a;
        concat.extend(b);
        let whole = accumulate_stats(&[seq(2, "ab", concat)]).unwrap();
        for (x, y) in split.mu.iter().zip(&whole.mu) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        for (x, y) in split.sigma.iter().zip(&whole.sigma) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(split.n_frames, whole.n_frames);
    }

    fn stats(mu: Vec<f64>, sigma: Vec<f64>) -> DeltaStats {
        DeltaStats {
            layer_index: 1,
            n_frames: 10,
            mu,
            sigma,
        }
    }

    #[test]
    fn similarity_identity_and_hand_value() {
        let cfg = SimilarityConfig::default();
        let a = stats(vec![1.0, 2.0], vec![0.5, 0.5]);
        assert_eq!(similarity(&a, &a, &cfg).unwrap(), 0.0);

        // mu_a=(1,0), mu_b=(0,1), sigma=(1,1) both: rho = sqrt(2)/1 + 0
        let a = stats(vec![1.0, 0.0], vec![1.0, 1.0]);
        let b = stats(vec![0.0, 1.0], vec![1.0, 1.0]);
        let rho = similarity(&a, &b, &cfg).unwrap();
        assert!((rho - 2.0_f64.sqrt()).abs() < 1e-12, "rho {rho}");
    }

    #[test]
    fn similarity_symmetric_and_nonnegative() {
        let cfg = SimilarityConfig::default();
        let mut rng = seeds::rng_from(13);
        for _ in 0..200 {
            let dim = rng.gen_range(1..6);
            let rand_stats = |rng: &mut rand_chacha::ChaCha8Rng| {
                stats(
                    (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    (0..dim).map(|_| rng.gen_range(0.0..2.0)).collect(),
                )
            };
            let a = rand_stats(&mut rng);
            let b = rand_stats(&mut rng);
            let ab = similarity(&a, &b, &cfg).unwrap();
            let ba = similarity(&b, &a, &cfg).unwrap();
            assert!(ab >= 0.0);
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn mu_scale_sensitivity() {
        // scaling both mu vectors by c scales the mu term by 1/c
        let cfg = SimilarityConfig {
            alpha_mu: 1.0,
            alpha_sigma: 0.0,
            zero_norm_epsilon: 1e-12,
        };
        let a = stats(vec![1.0, 0.5], vec![1.0, 1.0]);
        let b = stats(vec![0.2, 1.3], vec![1.0, 1.0]);
        let base = similarity(&a, &b, &cfg).unwrap();
        let c = 4.0;
        let a2 = stats(a.mu.iter().map(|v| c * v).collect(), a.sigma.clone());
        let b2 = stats(b.mu.iter().map(|v| c * v).collect(), b.sigma.clone());
        let scaled = similarity(&a2, &b2, &cfg).unwrap();
        assert!((scaled - base / c).abs() < 1e-12 * base.max(1.0));
    }

    #[test]
    fn zero_norm_handling() {
        let cfg = SimilarityConfig::default();
        let zero = stats(vec![0.0, 0.0], vec![0.0, 0.0]);
        // identical zeros: perfect match
        assert_eq!(similarity(&zero, &zero, &cfg).unwrap(), 0.0);
        // one zero: floored norm, finite result
        let a = stats(vec![1.0, 0.0], vec![1.0, 1.0]);
        let rho = similarity(&a, &zero, &cfg).unwrap();
        assert!(rho.is_finite() && rho > 0.0);
        assert!(SimilarityConfig {
            alpha_mu: 0.0,
            alpha_sigma: 0.0,
            zero_norm_epsilon: 1e-12
        }
        .validate()
        .is_err());
    }
}
