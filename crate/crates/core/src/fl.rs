//! Federated-learning round simulation: global training, per-client
//! personalization, federated averaging, and the model registry the attacker
//! later reads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ModelParams, Sample, Topology, TrainConfig};
use crate::seeds;
use crate::synth::CorpusPartition;

/// One personalized model with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedEntry {
    pub speaker_id: String,
    pub set_id: usize,
    pub n_frames: usize,
    pub model: ModelParams,
}

/// The attacker's view after one round: the global model plus every
/// personalized model, in deterministic (speaker, set) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    pub global: ModelParams,
    pub personalized: Vec<PersonalizedEntry>,
    /// Speakers whose adaptation sets were skipped (empty set lists).
    pub warnings: Vec<String>,
}

impl ModelRegistry {
    pub fn model(&self, id: &str) -> Option<&ModelParams> {
        if self.global.model_id == id {
            return Some(&self.global);
        }
        self.personalized
            .iter()
            .find(|e| e.model.model_id == id)
            .map(|e| &e.model)
    }

    pub fn speaker_of(&self, model_id: &str) -> Option<&str> {
        self.personalized
            .iter()
            .find(|e| e.model.model_id == model_id)
            .map(|e| e.speaker_id.as_str())
    }

    /// Merges another registry trained from the same global model
    /// (the combined Part-1 + Part-2 evaluation mode).
    pub fn merged_with(&self, other: &ModelRegistry) -> Result<ModelRegistry> {
        if self.global.model_id != other.global.model_id {
            return Err(Error::TopologyMismatch(
                "registries stem from different global models".into(),
            ));
        }
        let mut merged = self.clone();
        merged.personalized.extend(other.personalized.iter().cloned());
        merged.warnings.extend(other.warnings.iter().cloned());
        Ok(merged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsPolicy {
    Uniform,
    ByFrameCount,
}

/// Per-round settings for the FL loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub fine_tune: TrainConfig,
    pub weights_policy: WeightsPolicy,
    pub rounds: usize,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        self.fine_tune.validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        Ok(())
    }
}

fn partition_samples(part: &CorpusPartition) -> Result<Vec<Sample<'_>>> {
    part.utterances
        .iter()
        .map(|u| {
            u.labels
                .as_deref()
                .map(|labels| Sample {
                    frames: &u.frames,
                    labels,
                })
                .ok_or_else(|| {
                    Error::Config(format!("utterance {} has no labels", u.utterance_id))
                })
        })
        .collect()
}

/// Trains the initial global model on the Train-G partition.
pub fn train_global(
    train_g: &CorpusPartition,
    topology: &Topology,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    let samples = partition_samples(train_g)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("train_g partition".into()));
    }
    let init = nn::init_model(&topology.to_specs(), "init", cfg.seed)?;
    let trained = nn::train_supervised(&init, &samples, cfg)?;
    Ok(ModelParams {
        parent_id: None,
        ..trained.with_id("global")
    })
}

/// Fine-tunes the global model once per (speaker, adaptation set).
///
/// Clients are independent: each gets a seed derived from the round seed and
/// its (speaker, set) identity, and personalization runs in parallel.
pub fn personalize_all(
    global: &ModelParams,
    part: &CorpusPartition,
    cfg: &RoundConfig,
) -> Result<ModelRegistry> {
    cfg.validate()?;
    if part.adaptation_sets.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "partition {} has no adaptation sets",
            part.name.as_str()
        )));
    }

    let mut jobs: Vec<(&str, usize, Vec<Sample<'_>>)> = Vec::new();
    let mut warnings = Vec::new();
    for (speaker_id, sets) in &part.adaptation_sets {
        if sets.is_empty() {
            warnings.push(format!("speaker {speaker_id}: no adaptation sets, skipped"));
            continue;
        }
        for (set_id, ids) in sets.iter().enumerate() {
            if ids.is_empty() {
                warnings.push(format!(
                    "speaker {speaker_id} set {set_id}: empty adaptation set, skipped"
                ));
                continue;
            }
            let mut samples = Vec::with_capacity(ids.len());
            for id in ids {
                let utt = part.utterance(id).ok_or_else(|| {
                    Error::Config(format!("adaptation set references unknown utterance {id}"))
                })?;
                samples.push(Sample {
                    frames: &utt.frames,
                    labels: utt.labels.as_deref().ok_or_else(|| {
                        Error::Config(format!("utterance {id} has no labels"))
                    })?,
                });
            }
            jobs.push((speaker_id, set_id, samples));
        }
    }

    let personalized: Result<Vec<PersonalizedEntry>> = jobs
        .par_iter()
        .map(|(speaker_id, set_id, samples)| {
            let mut client_cfg = cfg.fine_tune.clone();
            client_cfg.seed = seeds::derive_seed(
                cfg.fine_tune.seed,
                &format!("client:{speaker_id}:{set_id}"),
            );
            let model = nn::fine_tune(global, samples, &client_cfg)?
                .with_id(format!("{speaker_id}__{set_id}"));
            Ok(PersonalizedEntry {
                speaker_id: speaker_id.to_string(),
                set_id: *set_id,
                n_frames: samples.iter().map(|s| s.frames.rows()).sum(),
                model,
            })
        })
        .collect();

    Ok(ModelRegistry {
        global: global.clone(),
        personalized: personalized?,
        warnings,
    })
}

/// Weight-normalized elementwise average of model parameters.
pub fn federated_average(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = *models.first().ok_or_else(|| {
        Error::EmptyDataset("federated_average needs at least one model".into())
    })?;
    if models.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} models vs {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Config("aggregation weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("aggregation weights sum to zero".into()));
    }
    for m in models {
        if !m.same_topology(first) {
            return Err(Error::TopologyMismatch(format!(
                "model {} differs from {}",
                m.model_id, first.model_id
            )));
        }
    }

    // Incremental weighted mean: m += (w / W_cum)(p - m). Unlike summing
    // w/total-scaled terms this is exact when all inputs are equal, which the
    // identity and epochs-0 contracts rely on.
    let mut avg = first.clone();
    for layer in avg.layers.iter_mut() {
        layer.weights.iter_mut().for_each(|v| *v = 0.0);
        layer.bias.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut w_cum = 0.0;
    for (m, &w) in models.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        w_cum += w;
        let a = w / w_cum;
        for (dst, src) in avg.layers.iter_mut().zip(&m.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d += a * (s - *d);
            }
            for (d, s) in dst.bias.iter_mut().zip(&src.bias) {
                *d += a * (s - *d);
            }
        }
    }

    let mut digest = Vec::new();
    for (m, w) in models.iter().zip(weights) {
        digest.extend_from_slice(m.model_id.as_bytes());
        digest.extend_from_slice(&w.to_le_bytes());
    }
    avg.model_id = format!("avg-{:016x}", seeds::fnv1a(&digest));
    avg.parent_id = None;
    Ok(avg)
}

/// History of one multi-round FL run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundsResult {
    pub final_global: ModelParams,
    pub history: Vec<ModelRegistry>,
}

/// Runs `cfg.rounds` rounds of personalize-then-aggregate over one client
/// partition, starting from `global`. Round `r + 1` trains from the
/// federated average of round `r`.
pub fn run_rounds(
    global: &ModelParams,
    clients: &CorpusPartition,
    cfg: &RoundConfig,
) -> Result<RoundsResult> {
    cfg.validate()?;
    let mut current = global.clone();
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut round_cfg = cfg.clone();
        round_cfg.fine_tune.seed = seeds::derive_seed(cfg.fine_tune.seed, &format!("round:{round}"));
        let registry = personalize_all(&current, clients, &round_cfg)?;
        let models: Vec<&ModelParams> = registry.personalized.iter().map(|e| &e.model).collect();
        let weights: Vec<f64> = match cfg.weights_policy {
            WeightsPolicy::Uniform => vec![1.0; models.len()],
            WeightsPolicy::ByFrameCount => registry
                .personalized
                .iter()
                .map(|e| e.n_frames as f64)
                .collect(),
        };
        current = federated_average(&models, &weights)?.with_id(format!("global-r{}", round + 1));
        history.push(registry);
    }
    Ok(RoundsResult {
        final_global: current,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{GenConfig, Generator, PartitionSizes};

    fn small_corpus(seed: u64) -> (Generator, crate::synth::Corpus) {
        let cfg = GenConfig {
            n_classes: 4,
            feature_dim: 6,
            latent_dim: 4,
            embedding_dim: 4,
            speaker_scale: 1.0,
            noise_scale: 0.5,
            min_frames_per_utterance: 20,
            max_frames_per_utterance: 30,
            append_speaker_embedding: true,
            seed,
        };
        let sizes = PartitionSizes {
            train_g_speakers: 6,
            part1_speakers: 4,
            part2_speakers: 3,
            indicator_speakers: 2,
            train_utterances_per_speaker: 3,
            indicator_utterances_per_speaker: 3,
            adaptation_frames: 60,
            two_set_fraction: 0.75,
        };
        let gen = Generator::new(cfg).unwrap();
        let corpus = gen.make_partitions(&sizes).unwrap();
        (gen, corpus)
    }

    fn small_topology() -> Topology {
        Topology {
            feature_dim: 10, // 6 + 4 appended
            hidden_layers: 2,
            hidden_dim: 12,
            spliced_layers: 1,
            n_classes: 4,
        }
    }

    fn quick_train_cfg(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.3,
            epochs,
            batch_size: 4,
            seed,
        }
    }

    #[test]
    fn global_training_beats_chance() {
        let (_, corpus) = small_corpus(21);
        let global = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(1, 6)).unwrap();
        // held-out frames from the indicator partition share the class geometry
        let samples = partition_samples(&corpus.indicator).unwrap();
        let acc = nn::frame_accuracy(&global, &samples).unwrap();
        assert!(acc > 0.25, "accuracy {acc} not above 1/K");
        assert_eq!(global.model_id, "global");
        assert!(global.parent_id.is_none());
    }

    #[test]
    fn global_training_is_seed_deterministic() {
        let (_, corpus) = small_corpus(22);
        let a = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(5, 2)).unwrap();
        let b = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(5, 2)).unwrap();
        assert_eq!(a, b);
        let init_only =
            train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(5, 0)).unwrap();
        let raw = nn::init_model(&small_topology().to_specs(), "init", 5).unwrap();
        assert_eq!(init_only.layers, raw.layers);
    }

    #[test]
    fn personalize_counts_and_lineage() {
        let (_, corpus) = small_corpus(23);
        let global = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(2, 2)).unwrap();
        let cfg = RoundConfig {
            fine_tune: quick_train_cfg(9, 2),
            weights_policy: WeightsPolicy::Uniform,
            rounds: 1,
        };
        let registry = personalize_all(&global, &corpus.part1, &cfg).unwrap();
        // 4 speakers, 3 with two sets -> 7 models
        assert_eq!(registry.personalized.len(), 7);
        for e in &registry.personalized {
            assert_eq!(e.model.parent_id.as_deref(), Some("global"));
            assert_eq!(e.model.model_id, format!("{}__{}", e.speaker_id, e.set_id));
        }
    }

    #[test]
    fn personalize_epochs_zero_keeps_global_params() {
        let (_, corpus) = small_corpus(24);
        let global = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(3, 1)).unwrap();
        let cfg = RoundConfig {
            fine_tune: quick_train_cfg(9, 0),
            weights_policy: WeightsPolicy::Uniform,
            rounds: 1,
        };
        let registry = personalize_all(&global, &corpus.part1, &cfg).unwrap();
        for e in &registry.personalized {
            assert_eq!(e.model.layers, global.layers);
        }
    }

    #[test]
    fn fedavg_identity_symmetry_and_weighted_mean() {
        let (_, corpus) = small_corpus(25);
        let topo = small_topology();
        let a = train_global(&corpus.train_g, &topo, &quick_train_cfg(7, 1)).unwrap();

        // N identical models -> output equals the input exactly
        let same = federated_average(&[&a, &a, &a], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(same.layers, a.layers);

        // +v / -v with uniform weights -> all-zero parameters
        let mut neg = a.clone();
        for l in neg.layers.iter_mut() {
            l.weights.iter_mut().for_each(|v| *v = -*v);
            l.bias.iter_mut().for_each(|v| *v = -*v);
        }
        let zero = federated_average(&[&a, &neg], &[1.0, 1.0]).unwrap();
        for l in &zero.layers {
            assert!(l.weights.iter().all(|&v| v == 0.0));
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }

        // weights (1, 3) on parameters a, b -> (a + 3b) / 4 elementwise
        let b = train_global(&corpus.train_g, &topo, &quick_train_cfg(8, 1)).unwrap();
        let mix = federated_average(&[&a, &b], &[1.0, 3.0]).unwrap();
        for (lm, (la, lb)) in mix.layers.iter().zip(a.layers.iter().zip(&b.layers)) {
            for (m, (x, y)) in lm.weights.iter().zip(la.weights.iter().zip(&lb.weights)) {
                let expect = (x + 3.0 * y) / 4.0;
                assert!(
                    (m - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                    "{m} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn fedavg_rejects_bad_inputs() {
        let (_, corpus) = small_corpus(26);
        let a = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(1, 0)).unwrap();
        assert!(federated_average(&[], &[]).is_err());
        assert!(federated_average(&[&a], &[0.0]).is_err());
        let other_topo = Topology {
            hidden_dim: 8,
            ..small_topology()
        };
        let b = nn::init_model(&other_topo.to_specs(), "b", 1).unwrap();
        assert!(matches!(
            federated_average(&[&a, &b], &[1.0, 1.0]),
            Err(Error::TopologyMismatch(_))
        ));
    }

    #[test]
    fn rounds_loop_histories() {
        let (_, corpus) = small_corpus(27);
        let global = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(4, 2)).unwrap();

        let one = RoundConfig {
            fine_tune: quick_train_cfg(11, 1),
            weights_policy: WeightsPolicy::Uniform,
            rounds: 1,
        };
        let r1 = run_rounds(&global, &corpus.part2, &one).unwrap();
        assert_eq!(r1.history.len(), 1);

        let two = RoundConfig {
            rounds: 2,
            ..one.clone()
        };
        let r2 = run_rounds(&global, &corpus.part2, &two).unwrap();
        assert_eq!(r2.history.len(), 2);
        // round-2 global differs from round-1 global after real fine-tuning
        let g1 = &r2.history[1].global;
        let max_delta = g1
            .layers
            .iter()
            .zip(&r2.history[0].global.layers)
            .flat_map(|(a, b)| a.weights.iter().zip(&b.weights))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_delta > 0.0);

        // epochs 0 keeps every round's global identical
        let frozen = RoundConfig {
            fine_tune: quick_train_cfg(11, 0),
            weights_policy: WeightsPolicy::Uniform,
            rounds: 2,
        };
        let rf = run_rounds(&global, &corpus.part2, &frozen).unwrap();
        assert_eq!(rf.history[0].global.layers, rf.history[1].global.layers);
    }

    #[test]
    fn registry_lineage_invariant() {
        let (_, corpus) = small_corpus(28);
        let global = train_global(&corpus.train_g, &small_topology(), &quick_train_cfg(6, 1)).unwrap();
        let cfg = RoundConfig {
            fine_tune: quick_train_cfg(13, 2),
            weights_policy: WeightsPolicy::ByFrameCount,
            rounds: 2,
        };
        let result = run_rounds(&global, &corpus.part1, &cfg).unwrap();
        for registry in &result.history {
            for e in &registry.personalized {
                assert_eq!(e.model.parent_id.as_deref(), Some(registry.global.model_id.as_str()));
            }
        }
    }
}
