//! `FLUT v1` utterance files and corpus partition directories.
//!
//! One `.flut` file per utterance: magic `FLUT`, u32 T, u32 D, `T x D`
//! row-major little-endian f64 frames, then T u32 labels. A partition
//! directory additionally holds:
//!
//! - `manifest.csv` — `utterance_id,speaker_id,file,n_frames`
//! - `speakers.csv` — speaker profiles (latent / embedding, `;`-joined)
//! - `adaptation_sets.csv` — `speaker_id,set_id,utterance_id`

use std::collections::BTreeMap;
use std::path::Path;

use super::{Reader, Writer};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::synth::{CorpusPartition, PartitionName, SpeakerProfile, Utterance};

const MAGIC: &[u8; 4] = b"FLUT";

pub fn save_utterance(path: &Path, utt: &Utterance) -> Result<()> {
    let labels = utt.labels.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "utterance {} has no labels; FLUT requires them",
            utt.utterance_id
        ))
    })?;
    let mut w = Writer::new(MAGIC);
    w.u32(utt.frames.rows() as u32);
    w.u32(utt.frames.cols() as u32);
    w.f64_slice(utt.frames.as_slice());
    for &l in labels {
        w.u32(l as u32);
    }
    w.save(path)
}

/// Loads the frame/label payload; ids come from the manifest.
pub fn load_utterance(path: &Path, utterance_id: &str, speaker_id: &str) -> Result<Utterance> {
    let mut r = Reader::open(path)?;
    r.expect_magic(MAGIC)?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let data = r.f64_vec(t * d)?;
    let mut labels = Vec::with_capacity(t);
    for _ in 0..t {
        labels.push(r.u32()? as usize);
    }
    r.finish()?;
    Ok(Utterance {
        utterance_id: utterance_id.to_string(),
        speaker_id: speaker_id.to_string(),
        frames: Mat::from_flat(t, d, data),
        labels: Some(labels),
    })
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn split_floats(s: &str, path: &Path) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::format(path, format!("bad float {p}")))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn save_partition(dir: &Path, part: &CorpusPartition) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;

    let mut manifest = String::from("utterance_id,speaker_id,file,n_frames\n");
    for utt in &part.utterances {
        let file = format!("{}.flut", utt.utterance_id);
        save_utterance(&dir.join(&file), utt)?;
        manifest.push_str(&format!(
            "{},{},{},{}\n",
            utt.utterance_id,
            utt.speaker_id,
            file,
            utt.frames.rows()
        ));
    }
    write_text(&dir.join("manifest.csv"), &manifest)?;

    let mut speakers = String::from("speaker_id,latent,embedding\n");
    for sp in &part.speakers {
        speakers.push_str(&format!(
            "{},{},{}\n",
            sp.speaker_id,
            join_floats(&sp.latent),
            join_floats(&sp.embedding)
        ));
    }
    write_text(&dir.join("speakers.csv"), &speakers)?;

    let mut sets = String::from("speaker_id,set_id,utterance_id\n");
    for (speaker, spk_sets) in &part.adaptation_sets {
        for (set_id, ids) in spk_sets.iter().enumerate() {
            for id in ids {
                sets.push_str(&format!("{speaker},{set_id},{id}\n"));
            }
        }
    }
    write_text(&dir.join("adaptation_sets.csv"), &sets)?;
    Ok(())
}

pub fn load_partition(dir: &Path, name: PartitionName) -> Result<CorpusPartition> {
    let manifest_path = dir.join("manifest.csv");
    super::require_artifact(&manifest_path, "generate-data")?;

    let mut speakers = Vec::new();
    let speakers_path = dir.join("speakers.csv");
    for line in read_lines(&speakers_path)?.iter().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::format(&speakers_path, format!("bad row: {line}")));
        }
        speakers.push(SpeakerProfile {
            speaker_id: parts[0].to_string(),
            latent: split_floats(parts[1], &speakers_path)?,
            embedding: split_floats(parts[2], &speakers_path)?,
        });
    }

    let mut utterances = Vec::new();
    for line in read_lines(&manifest_path)?.iter().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::format(&manifest_path, format!("bad row: {line}")));
        }
        let utt = load_utterance(&dir.join(parts[2]), parts[0], parts[1])?;
        if utt.frames.rows().to_string() != parts[3] {
            return Err(Error::format(
                &manifest_path,
                format!("frame count mismatch for {}", parts[0]),
            ));
        }
        utterances.push(utt);
    }

    let mut adaptation_sets: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
    let sets_path = dir.join("adaptation_sets.csv");
    for line in read_lines(&sets_path)?.iter().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::format(&sets_path, format!("bad row: {line}")));
        }
        let set_id: usize = parts[1]
            .parse()
            .map_err(|_| Error::format(&sets_path, format!("bad set id {}", parts[1])))?;
        let sets = adaptation_sets.entry(parts[0].to_string()).or_default();
        while sets.len() <= set_id {
            sets.push(Vec::new());
        }
        sets[set_id].push(parts[2].to_string());
    }

    Ok(CorpusPartition {
        name,
        speakers,
        utterances,
        adaptation_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{GenConfig, Generator, PartitionSizes};

    #[test]
    fn partition_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gen = Generator::new(GenConfig {
            min_frames_per_utterance: 10,
            max_frames_per_utterance: 15,
            seed: 77,
            ..GenConfig::default()
        })
        .unwrap();
        let sizes = PartitionSizes {
            train_g_speakers: 3,
            part1_speakers: 3,
            part2_speakers: 2,
            indicator_speakers: 2,
            train_utterances_per_speaker: 2,
            indicator_utterances_per_speaker: 2,
            adaptation_frames: 20,
            two_set_fraction: 0.5,
        };
        let corpus = gen.make_partitions(&sizes).unwrap();

        let p1_dir = dir.path().join("part1");
        save_partition(&p1_dir, &corpus.part1).unwrap();
        let loaded = load_partition(&p1_dir, PartitionName::Part1).unwrap();
        assert_eq!(loaded, corpus.part1);
    }

    #[test]
    fn missing_manifest_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_partition(&dir.path().join("nope"), PartitionName::Part2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("generate-data"), "{msg}");
    }
}
