//! Verification trials, EER, and DET curves.
//!
//! Scores follow the ASV convention: larger means more likely target. A
//! trial is accepted at threshold `theta` when `score >= theta` (ties count
//! as accepts). The EER is found by linear interpolation between the two
//! ROC points where `P_fa - P_miss` changes sign.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::ModelRegistry;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Target,
    NonTarget,
}

impl TrialLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialLabel::Target => "target",
            TrialLabel::NonTarget => "nontarget",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" => Some(TrialLabel::Target),
            "nontarget" => Some(TrialLabel::NonTarget),
            _ => None,
        }
    }
}

/// One verification trial between two personalized models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub enroll_model_id: String,
    pub test_model_id: String,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub trial: Trial,
    pub score: f64,
}

/// Provenance attached to a scored trial list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub attack: String,
    pub h: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrials {
    pub meta: ScoreMeta,
    pub trials: Vec<ScoredTrial>,
}

impl ScoredTrials {
    pub fn split_scores(&self) -> (Vec<f64>, Vec<f64>) {
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        for t in &self.trials {
            match t.trial.label {
                TrialLabel::Target => targets.push(t.score),
                TrialLabel::NonTarget => nontargets.push(t.score),
            }
        }
        (targets, nontargets)
    }
}

/// One operating point of the DET curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub theta: f64,
    pub p_fa: f64,
    pub p_miss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub det_points: Vec<DetPoint>,
}

/// Builds the trial list from a registry.
///
/// Targets are all same-speaker pairs of models from disjoint adaptation
/// sets. Non-targets are `n_nontarget` different-speaker pairs sampled
/// without replacement (the full population when fewer exist). Target trials
/// do not depend on the seed.
pub fn build_trials(
    registry: &ModelRegistry,
    n_nontarget: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let entries = &registry.personalized;
    let mut trials = Vec::new();
    let mut n_targets = 0usize;
    for i in 0..entries.len() {
        for j in (i + 1)..entries.len() {
            if entries[i].speaker_id == entries[j].speaker_id
                && entries[i].set_id != entries[j].set_id
            {
                trials.push(Trial {
                    trial_id: format!("tgt-{n_targets:05}"),
                    enroll_model_id: entries[i].model.model_id.clone(),
                    test_model_id: entries[j].model.model_id.clone(),
                    label: TrialLabel::Target,
                });
                n_targets += 1;
            }
        }
    }
    if n_targets == 0 {
        return Err(Error::EmptyTargets);
    }

    let mut cross: Vec<(usize, usize)> = Vec::new();
    for i in 0..entries.len() {
        for j in (i + 1)..entries.len() {
            if entries[i].speaker_id != entries[j].speaker_id {
                cross.push((i, j));
            }
        }
    }
    if cross.is_empty() {
        return Err(Error::Config(
            "registry needs models from at least two speakers".into(),
        ));
    }
    let picked: Vec<usize> = if n_nontarget >= cross.len() {
        (0..cross.len()).collect()
    } else {
        let mut rng = seeds::rng_from(seed);
        let mut idx = sample(&mut rng, cross.len(), n_nontarget).into_vec();
        idx.sort_unstable();
        idx
    };
    for (k, &ci) in picked.iter().enumerate() {
        let (i, j) = cross[ci];
        trials.push(Trial {
            trial_id: format!("non-{k:05}"),
            enroll_model_id: entries[i].model.model_id.clone(),
            test_model_id: entries[j].model.model_id.clone(),
            label: TrialLabel::NonTarget,
        });
    }
    Ok(trials)
}

/// ROC points ordered by ascending threshold, with the conventional
/// `(P_fa, P_miss) = (1, 0)` and `(0, 1)` sentinels at the extremes.
fn roc_points(targets: &[f64], nontargets: &[f64]) -> Vec<DetPoint> {
    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let mut sorted_t = targets.to_vec();
    sorted_t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sorted_n = nontargets.to_vec();
    sorted_n.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let count_below = |v: &[f64], x: f64| v.partition_point(|&s| s < x);

    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(DetPoint {
        theta: f64::NEG_INFINITY,
        p_fa: 1.0,
        p_miss: 0.0,
    });
    for &theta in &thresholds {
        let fa = (sorted_n.len() - count_below(&sorted_n, theta)) as f64 / sorted_n.len() as f64;
        let miss = count_below(&sorted_t, theta) as f64 / sorted_t.len() as f64;
        points.push(DetPoint {
            theta,
            p_fa: fa,
            p_miss: miss,
        });
    }
    points.push(DetPoint {
        theta: f64::INFINITY,
        p_fa: 0.0,
        p_miss: 1.0,
    });
    points
}

fn eer_from_points(points: &[DetPoint]) -> (f64, f64) {
    for w in points.windows(2) {
        let d1 = w[0].p_fa - w[0].p_miss;
        let d2 = w[1].p_fa - w[1].p_miss;
        if d1 >= 0.0 && d2 <= 0.0 {
            let t = if d1 == d2 { 0.0 } else { d1 / (d1 - d2) };
            let eer = w[0].p_fa + t * (w[1].p_fa - w[0].p_fa);
            let theta = match (w[0].theta.is_finite(), w[1].theta.is_finite()) {
                (true, true) => w[0].theta + t * (w[1].theta - w[0].theta),
                (false, true) => w[1].theta,
                (true, false) => w[0].theta,
                (false, false) => 0.0,
            };
            return (eer, theta);
        }
    }
    // P_fa - P_miss runs from +1 to -1, so a crossing always exists.
    unreachable!("no EER crossing found");
}

fn validate_scored(scored: &ScoredTrials) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(bad) = scored.trials.iter().find(|t| !t.score.is_finite()) {
        return Err(Error::Evaluation(format!(
            "non-finite score on trial {}",
            bad.trial.trial_id
        )));
    }
    let (targets, nontargets) = scored.split_scores();
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Evaluation(
            "need at least one target and one non-target trial".into(),
        ));
    }
    Ok((targets, nontargets))
}

/// Sweeps thresholds over the score set and interpolates the equal-error
/// point.
pub fn compute_eer(scored: &ScoredTrials) -> Result<EerResult> {
    let (targets, nontargets) = validate_scored(scored)?;
    let det_points = roc_points(&targets, &nontargets);
    let (eer, threshold) = eer_from_points(&det_points);
    Ok(EerResult {
        eer,
        threshold,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
        det_points,
    })
}

/// The DET curve alone: one point per unique score plus the endpoint
/// conventions.
pub fn det_curve(scored: &ScoredTrials) -> Result<Vec<DetPoint>> {
    let (targets, nontargets) = validate_scored(scored)?;
    Ok(roc_points(&targets, &nontargets))
}

/// A1 EER per hidden layer, with the statistic ablation variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: usize,
    pub eer_mu_only: f64,
    pub eer_sigma_only: f64,
    pub eer_combined: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(targets: &[f64], nontargets: &[f64]) -> ScoredTrials {
        let mut trials = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            trials.push(ScoredTrial {
                trial: Trial {
                    trial_id: format!("tgt-{i}"),
                    enroll_model_id: format!("e{i}"),
                    test_model_id: format!("t{i}"),
                    label: TrialLabel::Target,
                },
                score: s,
            });
        }
        for (i, &s) in nontargets.iter().enumerate() {
            trials.push(ScoredTrial {
                trial: Trial {
                    trial_id: format!("non-{i}"),
                    enroll_model_id: format!("e{i}"),
                    test_model_id: format!("x{i}"),
                    label: TrialLabel::NonTarget,
                },
                score: s,
            });
        }
        ScoredTrials {
            meta: ScoreMeta {
                attack: "test".into(),
                h: 1,
                config_hash: "0".into(),
            },
            trials,
        }
    }

    /// Independent exhaustive oracle: brute-force counting at every midpoint
    /// threshold, then the same sign-change interpolation.
    fn eer_oracle(targets: &[f64], nontargets: &[f64]) -> f64 {
        let mut all: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.dedup();
        let mut candidates = vec![all[0] - 1.0];
        for w in all.windows(2) {
            candidates.push(0.5 * (w[0] + w[1]));
        }
        candidates.push(all[all.len() - 1] + 1.0);
        // include the scores themselves (ties accept)
        candidates.extend(all.iter().copied());
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let ops: Vec<(f64, f64)> = candidates
            .iter()
            .map(|&th| {
                let fa = nontargets.iter().filter(|&&s| s >= th).count() as f64
                    / nontargets.len() as f64;
                let miss =
                    targets.iter().filter(|&&s| s < th).count() as f64 / targets.len() as f64;
                (fa, miss)
            })
            .collect();
        for w in ops.windows(2) {
            let d1 = w[0].0 - w[0].1;
            let d2 = w[1].0 - w[1].1;
            if d1 >= 0.0 && d2 <= 0.0 {
                let t = if d1 == d2 { 0.0 } else { d1 / (d1 - d2) };
                return w[0].0 + t * (w[1].0 - w[0].0);
            }
        }
        unreachable!()
    }

    #[test]
    fn worked_micro_example_is_one_third() {
        let s = scored(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]);
        let result = compute_eer(&s).unwrap();
        assert!((result.eer - 1.0 / 3.0).abs() < 1e-9, "eer {}", result.eer);
        assert_eq!(result.n_target, 3);
        assert_eq!(result.n_nontarget, 3);
        assert!(
            (eer_oracle(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]) - 1.0 / 3.0).abs() < 1e-9
        );
    }

    #[test]
    fn perfect_separation_gives_zero() {
        let s = scored(&[0.9, 0.8, 0.7], &[0.3, 0.2, 0.1]);
        assert_eq!(compute_eer(&s).unwrap().eer, 0.0);
    }

    #[test]
    fn coin_flip_labels_give_half() {
        use rand::Rng;
        let mut rng = seeds::rng_from(12345);
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        for _ in 0..10_000 {
            let score: f64 = rng.gen_range(-1.0..1.0);
            if rng.gen_bool(0.5) {
                targets.push(score);
            } else {
                nontargets.push(score);
            }
        }
        let result = compute_eer(&scored(&targets, &nontargets)).unwrap();
        assert!(
            (result.eer - 0.5).abs() < 0.03,
            "chance EER {}",
            result.eer
        );
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_sets() {
        use rand::Rng;
        for round in 0..50u64 {
            let mut rng = seeds::rng_from(900 + round);
            let nt = rng.gen_range(1..40);
            let nn = rng.gen_range(1..40);
            // coarse grid produces plenty of ties
            let targets: Vec<f64> = (0..nt)
                .map(|_| rng.gen_range(0..20) as f64 / 10.0 + rng.gen_range(0.0..0.4))
                .collect();
            let nontargets: Vec<f64> = (0..nn)
                .map(|_| rng.gen_range(0..20) as f64 / 10.0)
                .collect();
            let ours = compute_eer(&scored(&targets, &nontargets)).unwrap().eer;
            let oracle = eer_oracle(&targets, &nontargets);
            assert!(
                (ours - oracle).abs() < 1e-9,
                "round {round}: {ours} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn eer_invariant_under_monotone_transforms() {
        use rand::Rng;
        let mut rng = seeds::rng_from(31);
        let targets: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let nontargets: Vec<f64> = (0..80).map(|_| rng.gen_range(-2.0..1.0)).collect();
        let base = compute_eer(&scored(&targets, &nontargets)).unwrap().eer;

        let affine = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| 2.0 * x + 3.0).collect() };
        let cubic = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x * x).collect() };
        let eer_affine = compute_eer(&scored(&affine(&targets), &affine(&nontargets)))
            .unwrap()
            .eer;
        let eer_cubic = compute_eer(&scored(&cubic(&targets), &cubic(&nontargets)))
            .unwrap()
            .eer;
        assert_eq!(base, eer_affine);
        assert_eq!(base, eer_cubic);
    }

    #[test]
    fn det_points_are_monotone_and_bracketed() {
        use rand::Rng;
        let mut rng = seeds::rng_from(77);
        let targets: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..2.0)).collect();
        let nontargets: Vec<f64> = (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = scored(&targets, &nontargets);
        let points = det_curve(&s).unwrap();
        assert_eq!(points.first().map(|p| (p.p_fa, p.p_miss)), Some((1.0, 0.0)));
        assert_eq!(points.last().map(|p| (p.p_fa, p.p_miss)), Some((0.0, 1.0)));
        for w in points.windows(2) {
            assert!(w[0].theta < w[1].theta);
            assert!(w[0].p_fa >= w[1].p_fa);
            assert!(w[0].p_miss <= w[1].p_miss);
        }
        // the curve passes within interpolation reach of (eer, eer)
        let result = compute_eer(&s).unwrap();
        let near = points
            .windows(2)
            .any(|w| {
                let lo = w[0].p_fa.min(w[1].p_fa);
                let hi = w[0].p_fa.max(w[1].p_fa);
                lo - 1e-12 <= result.eer && result.eer <= hi + 1e-12
            });
        assert!(near);
    }

    #[test]
    fn sign_reversal_swaps_error_roles() {
        use rand::Rng;
        let mut rng = seeds::rng_from(41);
        let targets: Vec<f64> = (0..20).map(|_| rng.gen_range(0..15) as f64 / 5.0).collect();
        let nontargets: Vec<f64> = (0..30).map(|_| rng.gen_range(0..15) as f64 / 5.0).collect();
        let orig = det_curve(&scored(&targets, &nontargets)).unwrap();
        let neg_t: Vec<f64> = targets.iter().map(|v| -v).collect();
        let neg_n: Vec<f64> = nontargets.iter().map(|v| -v).collect();
        let reversed = det_curve(&scored(&neg_t, &neg_n)).unwrap();

        let canon = |pts: &[DetPoint]| -> Vec<(f64, f64)> {
            let mut v: Vec<(f64, f64)> = pts.iter().map(|p| (p.p_fa, p.p_miss)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
            v
        };
        let mapped: Vec<DetPoint> = orig
            .iter()
            .map(|p| DetPoint {
                theta: 0.0,
                p_fa: 1.0 - p.p_fa,
                p_miss: 1.0 - p.p_miss,
            })
            .collect();
        let a = canon(&mapped);
        let b = canon(&reversed);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_class_rejected() {
        let s = scored(&[0.5], &[]);
        assert!(compute_eer(&s).is_err());
    }
}
