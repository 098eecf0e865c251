//! Experiment configuration.
//!
//! Configs are flat dotted-key text (valid TOML), e.g.
//! `gen.speaker_scale = 0.8`. One master seed derives every stage seed by
//! hashing the stage name, so stages can be re-run individually and
//! reproduce the full pipeline bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::a1::SimilarityConfig;
use crate::error::{Error, Result};
use crate::nn::{TrainConfig, Topology};
use crate::seeds;
use crate::synth::{GenConfig, PartitionSizes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub speaker_scale: f64,
    pub noise_scale: f64,
    pub min_frames_per_utterance: usize,
    pub max_frames_per_utterance: usize,
    pub append_speaker_embedding: bool,
}

impl Default for GenSection {
    fn default() -> Self {
        let g = GenConfig::default();
        GenSection {
            n_classes: g.n_classes,
            feature_dim: g.feature_dim,
            latent_dim: g.latent_dim,
            embedding_dim: g.embedding_dim,
            speaker_scale: g.speaker_scale,
            noise_scale: g.noise_scale,
            min_frames_per_utterance: g.min_frames_per_utterance,
            max_frames_per_utterance: g.max_frames_per_utterance,
            append_speaker_embedding: g.append_speaker_embedding,
        }
    }
}

impl GenSection {
    pub fn to_gen_config(&self, seed: u64) -> GenConfig {
        GenConfig {
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            latent_dim: self.latent_dim,
            embedding_dim: self.embedding_dim,
            speaker_scale: self.speaker_scale,
            noise_scale: self.noise_scale,
            min_frames_per_utterance: self.min_frames_per_utterance,
            max_frames_per_utterance: self.max_frames_per_utterance,
            append_speaker_embedding: self.append_speaker_embedding,
            seed,
        }
    }

    /// Frame dimension utterances carry (with the appendage when enabled).
    pub fn frame_dim(&self) -> usize {
        self.feature_dim
            + if self.append_speaker_embedding {
                self.embedding_dim
            } else {
                0
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    /// Leading hidden layers that splice `{-1,0,1}`.
    pub spliced_layers: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            hidden_layers: 6,
            hidden_dim: 64,
            spliced_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.1,
            epochs: 4,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for FineTuneSection {
    fn default() -> Self {
        FineTuneSection {
            learning_rate: 0.01,
            epochs: 2,
            batch_size: 4,
        }
    }
}

impl FineTuneSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub frame_dim: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        ExtractorSection {
            frame_dim: 64,
            embedding_dim: 32,
            learning_rate: 0.1,
            epochs: 3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Cosine,
    Plda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// Hidden layers attacked (1-based).
    pub h: Vec<usize>,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
    pub zero_norm_epsilon: f64,
    pub backend: Backend,
    pub plda_iterations: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            h: vec![1, 3],
            alpha_mu: 1.0,
            alpha_sigma: 10.0,
            zero_norm_epsilon: 1e-12,
            backend: Backend::Cosine,
            plda_iterations: 10,
        }
    }
}

impl AttackSection {
    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            alpha_mu: self.alpha_mu,
            alpha_sigma: self.alpha_sigma,
            zero_norm_epsilon: self.zero_norm_epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parts {
    #[serde(rename = "part2")]
    Part2,
    #[serde(rename = "part1+part2")]
    Part1Part2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsSection {
    pub n_nontarget: usize,
    pub parts: Parts,
}

impl Default for TrialsSection {
    fn default() -> Self {
        TrialsSection {
            n_nontarget: 2000,
            parts: Parts::Part2,
        }
    }
}

/// The whole experiment: data generation, model topologies, training,
/// attacks, and trial construction, all keyed off one master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker cap for intra-stage parallelism; 0 = machine default.
    pub threads: usize,
    pub out: PathBuf,
    pub gen: GenSection,
    pub corpus: PartitionSizes,
    pub topology: TopologySection,
    pub train_global: TrainSection,
    pub fine_tune: FineTuneSection,
    pub extractor: ExtractorSection,
    pub attack: AttackSection,
    pub trials: TrialsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            threads: 0,
            out: PathBuf::from("runs/default"),
            gen: GenSection::default(),
            corpus: PartitionSizes::default(),
            topology: TopologySection::default(),
            train_global: TrainSection::default(),
            fine_tune: FineTuneSection::default(),
            extractor: ExtractorSection::default(),
            attack: AttackSection::default(),
            trials: TrialsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.to_gen_config(0).validate()?;
        self.corpus.validate()?;
        if self.topology.hidden_layers == 0 || self.topology.hidden_dim == 0 {
            return Err(Error::Config("topology dims must be positive".into()));
        }
        if self.topology.spliced_layers > self.topology.hidden_layers {
            return Err(Error::Config(
                "spliced_layers cannot exceed hidden_layers".into(),
            ));
        }
        if self.attack.h.is_empty() {
            return Err(Error::Config("attack.h must name at least one layer".into()));
        }
        for &h in &self.attack.h {
            if h == 0 || h > self.topology.hidden_layers {
                return Err(Error::Config(format!(
                    "attack layer h={h} outside 1..={}",
                    self.topology.hidden_layers
                )));
            }
        }
        self.attack.similarity().validate()?;
        self.train_global.to_train_config(0).validate()?;
        self.fine_tune.to_train_config(0).validate()?;
        if self.extractor.frame_dim == 0
            || self.extractor.embedding_dim == 0
            || self.extractor.batch_size == 0
            || !(self.extractor.learning_rate > 0.0)
        {
            return Err(Error::Config("extractor settings must be positive".into()));
        }
        Ok(())
    }

    /// Acoustic-model topology implied by the generation settings.
    pub fn am_topology(&self) -> Topology {
        Topology {
            feature_dim: self.gen.frame_dim(),
            hidden_layers: self.topology.hidden_layers,
            hidden_dim: self.topology.hidden_dim,
            spliced_layers: self.topology.spliced_layers,
            n_classes: self.gen.n_classes,
        }
    }

    /// Seed for a named stage, derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        seeds::derive_seed(self.seed, stage)
    }

    /// Parses the flat dotted-key config text (plain TOML).
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }

    /// Emits the config as flat dotted keys, one per line.
    pub fn emit(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.join("\n") + "\n"
    }

    /// Stable hash of the canonical emitted form, excluding `out` and
    /// `threads` (neither changes any computed value).
    pub fn hash(&self) -> String {
        let canonical: String = self
            .emit()
            .lines()
            .filter(|l| !l.starts_with("out ") && !l.starts_with("threads "))
            .map(|l| format!("{l}\n"))
            .collect();
        format!("{:016x}", seeds::fnv1a(canonical.as_bytes()))
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        scalar => out.push(format!("{prefix} = {scalar}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_parse_emit() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 1234;
        cfg.gen.speaker_scale = 0.8;
        cfg.attack.h = vec![1, 2, 5];
        cfg.attack.backend = Backend::Plda;
        cfg.trials.parts = Parts::Part1Part2;
        let text = cfg.emit();
        assert!(text.contains("gen.speaker_scale = 0.8"), "{text}");
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg = ExperimentConfig::parse("seed = 7\ngen.noise_scale = 0.25\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.gen.noise_scale, 0.25);
        assert_eq!(cfg.corpus, PartitionSizes::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse("gen.nope = 1\n").is_err());
    }

    #[test]
    fn bad_layer_rejected() {
        assert!(ExperimentConfig::parse("attack.h = [9]\n").is_err());
    }

    #[test]
    fn stage_seeds_differ_per_stage() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.stage_seed("generate"), cfg.stage_seed("train-global"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.gen.speaker_scale = 0.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
    }
}
