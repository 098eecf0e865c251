//! Model registry directories: `global.flam`, `clients/<speaker>__<set>.flam`,
//! and a `registry.json` manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_model, require_artifact, save_model};
use crate::error::{Error, Result};
use crate::fl::{ModelRegistry, PersonalizedEntry};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClientRow {
    model_id: String,
    parent_id: Option<String>,
    speaker_id: String,
    set_id: usize,
    n_frames: usize,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    global_model_id: String,
    global_file: String,
    clients: Vec<ClientRow>,
    warnings: Vec<String>,
}

pub fn save_registry(dir: &Path, registry: &ModelRegistry) -> Result<()> {
    std::fs::create_dir_all(dir.join("clients")).map_err(Error::io(dir))?;
    save_model(&dir.join("global.flam"), &registry.global)?;
    let mut clients = Vec::with_capacity(registry.personalized.len());
    for e in &registry.personalized {
        let file = format!("clients/{}__{}.flam", e.speaker_id, e.set_id);
        save_model(&dir.join(&file), &e.model)?;
        clients.push(ClientRow {
            model_id: e.model.model_id.clone(),
            parent_id: e.model.parent_id.clone(),
            speaker_id: e.speaker_id.clone(),
            set_id: e.set_id,
            n_frames: e.n_frames,
            file,
        });
    }
    let manifest = Manifest {
        global_model_id: registry.global.model_id.clone(),
        global_file: "global.flam".into(),
        clients,
        warnings: registry.warnings.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialize: {e}")))?;
    std::fs::write(dir.join("registry.json"), json).map_err(Error::io(dir))
}

pub fn load_registry(dir: &Path) -> Result<ModelRegistry> {
    let manifest_path = dir.join("registry.json");
    require_artifact(&manifest_path, "personalize")?;
    let text = std::fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, format!("manifest parse: {e}")))?;
    let global = load_model(&dir.join(&manifest.global_file))?;
    if global.model_id != manifest.global_model_id {
        return Err(Error::format(&manifest_path, "global model id mismatch"));
    }
    let mut personalized = Vec::with_capacity(manifest.clients.len());
    for row in &manifest.clients {
        let model = load_model(&dir.join(&row.file))?;
        if model.model_id != row.model_id || model.parent_id != row.parent_id {
            return Err(Error::format(
                &manifest_path,
                format!("model {} disagrees with its manifest row", row.model_id),
            ));
        }
        personalized.push(PersonalizedEntry {
            speaker_id: row.speaker_id.clone(),
            set_id: row.set_id,
            n_frames: row.n_frames,
            model,
        });
    }
    Ok(ModelRegistry {
        global,
        personalized,
        warnings: manifest.warnings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl;
    use crate::nn::{Topology, TrainConfig};
    use crate::synth::{GenConfig, Generator, PartitionSizes};

    #[test]
    fn registry_round_trip() {
        let gen = Generator::new(GenConfig {
            n_classes: 3,
            feature_dim: 4,
            latent_dim: 2,
            embedding_dim: 2,
            min_frames_per_utterance: 10,
            max_frames_per_utterance: 12,
            seed: 5,
            ..GenConfig::default()
        })
        .unwrap();
        let sizes = PartitionSizes {
            train_g_speakers: 2,
            part1_speakers: 3,
            part2_speakers: 2,
            indicator_speakers: 1,
            train_utterances_per_speaker: 2,
            indicator_utterances_per_speaker: 2,
            adaptation_frames: 20,
            two_set_fraction: 1.0,
        };
        let corpus = gen.make_partitions(&sizes).unwrap();
        let topo = Topology {
            feature_dim: 6,
            hidden_layers: 1,
            hidden_dim: 5,
            spliced_layers: 0,
            n_classes: 3,
        };
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 2,
            seed: 1,
        };
        let global = fl::train_global(&corpus.train_g, &topo, &cfg).unwrap();
        let registry = fl::personalize_all(
            &global,
            &corpus.part1,
            &fl::RoundConfig {
                fine_tune: cfg,
                weights_policy: fl::WeightsPolicy::Uniform,
                rounds: 1,
            },
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_registry(dir.path(), &registry).unwrap();
        let loaded = load_registry(dir.path()).unwrap();
        assert_eq!(loaded, registry);
    }

    #[test]
    fn missing_registry_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_registry(&dir.path().join("none")).unwrap_err();
        assert!(err.to_string().contains("personalize"));
    }
}
