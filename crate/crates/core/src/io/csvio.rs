//! CSV artifacts: trial scores, embeddings, DET points, layer sweeps.
//!
//! Ids never contain commas (they are generated from `[a-z0-9_-]`), so a
//! plain split is enough. Floats use Rust's shortest round-trip formatting.

use std::path::Path;

use super::require_artifact;
use crate::asv::{DetPoint, ScoreMeta, ScoredTrial, ScoredTrials, SweepRow, Trial, TrialLabel};
use crate::attack::a2::Embedding;
use crate::error::{Error, Result};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn save_scores_csv(path: &Path, scored: &ScoredTrials) -> Result<()> {
    let mut out = String::from("trial_id,enroll_model,test_model,label,score\n");
    for t in &scored.trials {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.trial.trial_id,
            t.trial.enroll_model_id,
            t.trial.test_model_id,
            t.trial.label.as_str(),
            t.score
        ));
    }
    write_text(path, &out)
}

/// Reads a scores CSV back; `meta` describes where it came from.
pub fn load_scores_csv(path: &Path, meta: ScoreMeta) -> Result<ScoredTrials> {
    require_artifact(path, "attack-a1 or attack-a2")?;
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::format(path, format!("bad row: {line}")));
        }
        let label = TrialLabel::parse(parts[3])
            .ok_or_else(|| Error::format(path, format!("bad label {}", parts[3])))?;
        let score: f64 = parts[4]
            .parse()
            .map_err(|_| Error::format(path, format!("bad score {}", parts[4])))?;
        trials.push(ScoredTrial {
            trial: Trial {
                trial_id: parts[0].to_string(),
                enroll_model_id: parts[1].to_string(),
                test_model_id: parts[2].to_string(),
                label,
            },
            score,
        });
    }
    Ok(ScoredTrials { meta, trials })
}

/// `model_id,speaker_id,h,v_0..v_{n-1}`.
pub fn save_embeddings_csv(path: &Path, rows: &[(Embedding, String)]) -> Result<()> {
    let width = rows.first().map_or(0, |(e, _)| e.vector.len());
    let mut header = String::from("model_id,speaker_id,h");
    for i in 0..width {
        header.push_str(&format!(",v_{i}"));
    }
    header.push('\n');
    let mut out = header;
    for (e, speaker) in rows {
        out.push_str(&format!("{},{},{}", e.model_id, speaker, e.h));
        for v in &e.vector {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn save_det_csv(path: &Path, points: &[DetPoint]) -> Result<()> {
    let mut out = String::from("theta,p_fa,p_miss\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.theta, p.p_fa, p.p_miss));
    }
    write_text(path, &out)
}

pub fn save_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("h,eer_mu_only,eer_sigma_only,eer_combined\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.h, r.eer_mu_only, r.eer_sigma_only, r.eer_combined
        ));
    }
    write_text(path, &out)
}
