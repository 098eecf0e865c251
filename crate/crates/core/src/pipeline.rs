//! Experiment pipeline: generate -> train-global -> personalize -> attacks
//! -> evaluate, working through on-disk artifacts so every stage can also be
//! run individually and reproduce the full-pipeline outputs byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asv::{self, ScoreMeta, ScoredTrials, Trial};
use crate::attack::{a1, a2, plda};
use crate::config::{Backend, ExperimentConfig, Parts};
use crate::error::{Error, Result};
use crate::fl::{self, ModelRegistry, RoundConfig, WeightsPolicy};
use crate::io;
use crate::synth::{Generator, PartitionName};

/// Artifact locations under one output directory.
pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Paths { out: out.into() }
    }

    pub fn partition_dir(&self, name: PartitionName) -> PathBuf {
        self.out.join("corpus").join(name.as_str())
    }

    pub fn global_model(&self) -> PathBuf {
        self.out.join("registry").join("global.flam")
    }

    pub fn aggregated_model(&self) -> PathBuf {
        self.out.join("registry").join("aggregated.flam")
    }

    pub fn registry_dir(&self, name: PartitionName) -> PathBuf {
        self.out.join("registry").join(name.as_str())
    }

    pub fn a1_dir(&self, h: usize) -> PathBuf {
        self.out.join("attacks").join("a1").join(format!("h{h}"))
    }

    pub fn a2_dir(&self, h: usize) -> PathBuf {
        self.out.join("attacks").join("a2").join(format!("h{h}"))
    }

    pub fn scores_csv(&self, attack: &str, h: usize) -> PathBuf {
        match attack {
            "a1" => self.a1_dir(h).join("scores.csv"),
            _ => self.a2_dir(h).join("scores.csv"),
        }
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.eval_dir().join("summary.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.out.join("report.json")
    }
}

/// One scored-attack entry of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerSummaryEntry {
    pub attack: String,
    pub h: usize,
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything a pipeline run produced, echoed for the report file.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub environment: String,
    pub config_hash: String,
    pub stages: Vec<StageTiming>,
    pub eers: Vec<EerSummaryEntry>,
    pub config_echo: String,
}

fn environment_stamp() -> String {
    format!(
        "flbench {} on {}-{}",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn load_partition(paths: &Paths, name: PartitionName) -> Result<crate::synth::CorpusPartition> {
    io::load_partition(&paths.partition_dir(name), name)
}

/// Registry the trials are built over, honoring the configured parts mode.
fn load_trial_registry(cfg: &ExperimentConfig, paths: &Paths) -> Result<ModelRegistry> {
    let part2 = io::load_registry(&paths.registry_dir(PartitionName::Part2))?;
    match cfg.trials.parts {
        Parts::Part2 => Ok(part2),
        Parts::Part1Part2 => {
            let part1 = io::load_registry(&paths.registry_dir(PartitionName::Part1))?;
            part1.merged_with(&part2)
        }
    }
}

fn build_trials(cfg: &ExperimentConfig, registry: &ModelRegistry) -> Result<Vec<Trial>> {
    asv::build_trials(registry, cfg.trials.n_nontarget, cfg.stage_seed("trials"))
}

fn save_trials_csv(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut out = String::from("trial_id,enroll_model,test_model,label\n");
    for t in trials {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.trial_id,
            t.enroll_model_id,
            t.test_model_id,
            t.label.as_str()
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    std::fs::write(path, out).map_err(Error::io(path))
}

pub fn stage_generate(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    let gen = Generator::new(cfg.gen.to_gen_config(cfg.stage_seed("generate")))?;
    let corpus = gen.make_partitions(&cfg.corpus)?;
    for part in corpus.partitions() {
        io::save_partition(&paths.partition_dir(part.name), part)?;
    }
    Ok(())
}

pub fn stage_train_global(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    let train_g = load_partition(paths, PartitionName::TrainG)?;
    let train_cfg = cfg
        .train_global
        .to_train_config(cfg.stage_seed("train-global"));
    let global = fl::train_global(&train_g, &cfg.am_topology(), &train_cfg)?;
    io::save_model(&paths.global_model(), &global)
}

pub fn stage_personalize(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    io::require_artifact(&paths.global_model(), "train-global")?;
    let global = io::load_model(&paths.global_model())?;
    let mut all_models = Vec::new();
    for name in [PartitionName::Part1, PartitionName::Part2] {
        let part = load_partition(paths, name)?;
        let round_cfg = RoundConfig {
            fine_tune: cfg
                .fine_tune
                .to_train_config(cfg.stage_seed(&format!("personalize:{}", name.as_str()))),
            weights_policy: WeightsPolicy::Uniform,
            rounds: 1,
        };
        let registry = fl::personalize_all(&global, &part, &round_cfg)?;
        io::save_registry(&paths.registry_dir(name), &registry)?;
        all_models.extend(registry.personalized.into_iter().map(|e| e.model));
    }
    // close the FL round: the aggregated next global (not attacked, recorded
    // for completeness)
    let refs: Vec<&crate::nn::ModelParams> = all_models.iter().collect();
    let weights = vec![1.0; refs.len()];
    let aggregated = fl::federated_average(&refs, &weights)?.with_id("global-r1");
    io::save_model(&paths.aggregated_model(), &aggregated)
}

pub fn stage_attack_a1(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    io::require_artifact(&paths.global_model(), "train-global")?;
    let global = io::load_model(&paths.global_model())?;
    let registry = load_trial_registry(cfg, paths)?;
    let indicator = load_partition(paths, PartitionName::Indicator)?;
    let trials = build_trials(cfg, &registry)?;
    save_trials_csv(&paths.eval_dir().join("trials.csv"), &trials)?;

    let sim = cfg.attack.similarity();
    let h_list = &cfg.attack.h;

    // One forward pass per model covers every requested layer; stats files
    // from a previous identical run are reused.
    use rayon::prelude::*;
    let traces = a1::global_indicator_traces(&global, &indicator, h_list)?;
    let per_model: Result<Vec<Vec<(usize, std::sync::Arc<a1::DeltaStats>)>>> = registry
        .personalized
        .par_iter()
        .map(|entry| {
            let id = &entry.model.model_id;
            let cached: Vec<_> = h_list
                .iter()
                .map(|h| paths.a1_dir(*h).join("stats").join(format!("{id}.flst")))
                .collect();
            if cached.iter().all(|p| p.exists()) {
                return cached
                    .iter()
                    .zip(h_list)
                    .map(|(p, &h)| Ok((h, std::sync::Arc::new(io::load_stats(p)?))))
                    .collect();
            }
            let stats = a1::model_indicator_stats(&traces, &entry.model, &indicator, h_list)?;
            Ok(h_list
                .iter()
                .zip(stats)
                .map(|(&h, s)| (h, std::sync::Arc::new(s)))
                .collect())
        })
        .collect();
    let per_model = per_model?;

    for (slot, &h) in h_list.iter().enumerate() {
        let dir = paths.a1_dir(h);
        let stats_dir = dir.join("stats");
        let mut stats_map = std::collections::BTreeMap::new();
        for (entry, stats) in registry.personalized.iter().zip(&per_model) {
            let (stat_h, stats) = &stats[slot];
            debug_assert_eq!(*stat_h, h);
            io::save_stats(
                &stats_dir.join(format!("{}.flst", entry.model.model_id)),
                stats,
            )?;
            stats_map.insert(entry.model.model_id.clone(), stats.clone());
        }
        let scored = a1::score_trials_from_stats(&stats_map, &trials, h, &sim)?;
        io::save_scores_csv(&dir.join("scores.csv"), &scored)?;
    }
    Ok(())
}

pub fn stage_train_a2(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    io::require_artifact(&paths.global_model(), "train-global")?;
    let global = io::load_model(&paths.global_model())?;
    let part1 = io::load_registry(&paths.registry_dir(PartitionName::Part1))?;
    let indicator = load_partition(paths, PartitionName::Indicator)?;
    for &h in &cfg.attack.h {
        let corpus = a2::build_training_corpus(&global, &part1, &indicator, h)?;
        let topology = a2::ExtractorTopology::desk(
            corpus.width,
            cfg.extractor.frame_dim,
            cfg.extractor.embedding_dim,
            corpus.speakers.len(),
        );
        let train_cfg = crate::nn::TrainConfig {
            learning_rate: cfg.extractor.learning_rate,
            epochs: cfg.extractor.epochs,
            batch_size: cfg.extractor.batch_size,
            seed: cfg.stage_seed(&format!("train-a2:h{h}")),
        };
        let params = a2::train_extractor(&corpus, &topology, &train_cfg)?;
        io::save_extractor(&paths.a2_dir(h).join("extractor.flam"), &params)?;
    }
    Ok(())
}

fn model_embeddings(
    extractor: &a2::ExtractorParams,
    global: &crate::nn::ModelParams,
    registry: &ModelRegistry,
    indicator: &crate::synth::CorpusPartition,
    h: usize,
) -> Result<Vec<(a2::Embedding, String)>> {
    use rayon::prelude::*;
    let traces = a1::global_indicator_traces(global, indicator, &[h])?;
    registry
        .personalized
        .par_iter()
        .map(|e| {
            let emb =
                a2::extract_embedding_with_traces(extractor, &traces, &e.model, indicator, h)?;
            Ok((emb, e.speaker_id.clone()))
        })
        .collect()
}

pub fn stage_attack_a2(cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    io::require_artifact(&paths.global_model(), "train-global")?;
    let global = io::load_model(&paths.global_model())?;
    let registry = load_trial_registry(cfg, paths)?;
    let indicator = load_partition(paths, PartitionName::Indicator)?;
    let trials = build_trials(cfg, &registry)?;

    for &h in &cfg.attack.h {
        let dir = paths.a2_dir(h);
        let extractor_path = dir.join("extractor.flam");
        io::require_artifact(&extractor_path, "train-a2")?;
        let extractor = io::load_extractor(&extractor_path)?;

        let embeddings = model_embeddings(&extractor, &global, &registry, &indicator, h)?;
        io::save_embeddings_csv(&dir.join("embeddings.csv"), &embeddings)?;
        let by_id: std::collections::BTreeMap<&str, &a2::Embedding> = embeddings
            .iter()
            .map(|(e, _)| (e.model_id.as_str(), e))
            .collect();

        let score_fn: Box<dyn Fn(&a2::Embedding, &a2::Embedding) -> Result<f64> + Sync> =
            match cfg.attack.backend {
                Backend::Cosine => Box::new(a2::cosine_score),
                Backend::Plda => {
                    let part1 = io::load_registry(&paths.registry_dir(PartitionName::Part1))?;
                    let train_embeddings =
                        model_embeddings(&extractor, &global, &part1, &indicator, h)?;
                    io::save_embeddings_csv(
                        &dir.join("embeddings_plda_train.csv"),
                        &train_embeddings,
                    )?;
                    let labeled: Vec<(Vec<f64>, String)> = train_embeddings
                        .into_iter()
                        .map(|(e, s)| (e.vector, s))
                        .collect();
                    let fit = plda::plda_fit(&labeled, cfg.attack.plda_iterations)?;
                    let scorer = fit.model.scorer()?;
                    Box::new(move |a: &a2::Embedding, b: &a2::Embedding| {
                        scorer.score(&a.vector, &b.vector)
                    })
                }
            };

        let mut scored = Vec::with_capacity(trials.len());
        for t in &trials {
            let a = by_id
                .get(t.enroll_model_id.as_str())
                .ok_or_else(|| Error::UnknownModel(t.enroll_model_id.clone()))?;
            let b = by_id
                .get(t.test_model_id.as_str())
                .ok_or_else(|| Error::UnknownModel(t.test_model_id.clone()))?;
            scored.push(crate::asv::ScoredTrial {
                trial: t.clone(),
                score: score_fn(a, b)?,
            });
        }
        let scored = ScoredTrials {
            meta: ScoreMeta {
                attack: "a2".into(),
                h,
                config_hash: cfg.hash(),
            },
            trials: scored,
        };
        io::save_scores_csv(&dir.join("scores.csv"), &scored)?;
    }
    Ok(())
}

pub fn stage_evaluate(cfg: &ExperimentConfig, paths: &Paths) -> Result<Vec<EerSummaryEntry>> {
    let mut entries = Vec::new();
    for attack in ["a1", "a2"] {
        for &h in &cfg.attack.h {
            let path = paths.scores_csv(attack, h);
            let meta = ScoreMeta {
                attack: attack.to_string(),
                h,
                config_hash: cfg.hash(),
            };
            let scored = io::load_scores_csv(&path, meta)?;
            let result = asv::compute_eer(&scored)?;
            io::save_det_csv(
                &paths.eval_dir().join(format!("det_{attack}_h{h}.csv")),
                &result.det_points,
            )?;
            entries.push(EerSummaryEntry {
                attack: attack.to_string(),
                h,
                eer: result.eer,
                threshold: result.threshold,
                n_target: result.n_target,
                n_nontarget: result.n_nontarget,
                config_hash: cfg.hash(),
                seed: cfg.seed,
            });
        }
    }
    entries.sort_by(|a, b| (a.attack.clone(), a.h).cmp(&(b.attack.clone(), b.h)));
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::Evaluation(format!("summary serialize: {e}")))?;
    let path = paths.summary_json();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    std::fs::write(&path, json).map_err(Error::io(&path))?;
    Ok(entries)
}

/// The layer ablation: A1 EER for every hidden layer, with mean-only /
/// std-only / combined scoring variants.
pub fn stage_ablate_layers(cfg: &ExperimentConfig, paths: &Paths) -> Result<Vec<asv::SweepRow>> {
    io::require_artifact(&paths.global_model(), "train-global")?;
    let global = io::load_model(&paths.global_model())?;
    let registry = load_trial_registry(cfg, paths)?;
    let indicator = load_partition(paths, PartitionName::Indicator)?;
    let trials = build_trials(cfg, &registry)?;
    let h_list: Vec<usize> = (1..=cfg.topology.hidden_layers).collect();
    let rows = a1::layer_sweep(
        &global,
        &registry,
        &indicator,
        &h_list,
        &trials,
        &cfg.attack.similarity(),
    )?;
    io::save_sweep_csv(&paths.eval_dir().join("ablation_a1.csv"), &rows)?;
    Ok(rows)
}

/// All pipeline stages in order.
pub const STAGES: &[&str] = &[
    "generate-data",
    "train-global",
    "personalize",
    "attack-a1",
    "train-a2",
    "attack-a2",
    "evaluate",
    "ablate-layers",
];

/// Runs one named stage.
pub fn run_stage(stage: &str, cfg: &ExperimentConfig, paths: &Paths) -> Result<()> {
    let result = match stage {
        "generate-data" => stage_generate(cfg, paths),
        "train-global" => stage_train_global(cfg, paths),
        "personalize" => stage_personalize(cfg, paths),
        "attack-a1" => stage_attack_a1(cfg, paths),
        "train-a2" => stage_train_a2(cfg, paths),
        "attack-a2" => stage_attack_a2(cfg, paths),
        "evaluate" => stage_evaluate(cfg, paths).map(|_| ()),
        "ablate-layers" => stage_ablate_layers(cfg, paths).map(|_| ()),
        other => Err(Error::Config(format!("unknown stage `{other}`"))),
    };
    result.map_err(|e| e.in_stage(stage))
}

/// Runs the whole pipeline, persisting all artifacts plus a report with
/// per-stage timings. The summary JSON itself carries no timestamps, so
/// reruns with the same config and seed are byte-identical.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out);
    std::fs::create_dir_all(&cfg.out).map_err(Error::io(&cfg.out))?;

    let mut stages = Vec::with_capacity(STAGES.len());
    for &stage in STAGES {
        let start = Instant::now();
        run_stage(stage, cfg, &paths)?;
        stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let summary_text = std::fs::read_to_string(paths.summary_json())
        .map_err(Error::io(paths.summary_json()))?;
    let eers: Vec<EerSummaryEntry> = serde_json::from_str(&summary_text)
        .map_err(|e| Error::Evaluation(format!("summary parse: {e}")))?;

    let report = RunReport {
        environment: environment_stamp(),
        config_hash: cfg.hash(),
        stages,
        eers,
        config_echo: cfg.emit(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Evaluation(format!("report serialize: {e}")))?;
    std::fs::write(paths.report_json(), json).map_err(Error::io(paths.report_json()))?;
    Ok(report)
}

/// Caps rayon's worker count. Call once at process start; 0 keeps the
/// machine default.
pub fn init_threads(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
