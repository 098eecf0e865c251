//! Command-line front end for the flbench experiment pipeline.
//!
//! Exit codes: 0 success, 2 config error, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use flbench::asv::ScoreMeta;
use flbench::config::{Backend, ExperimentConfig};
use flbench::error::Error;
use flbench::pipeline::{self, Paths};

#[derive(Parser)]
#[command(
    name = "flbench",
    version,
    about = "Federated-learning privacy bench: speaker-identity attacks on personalized models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Config file (flat dotted keys); defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for all artifacts
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; every stage seed derives from it
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker cap for intra-stage parallelism (0 = machine default)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Hidden layers to attack, comma-separated (e.g. 1,3)
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    h: Option<Vec<usize>>,
    /// Weight of the mean term in the A1 similarity
    #[arg(long = "alpha-mu", global = true, value_name = "R")]
    alpha_mu: Option<f64>,
    /// Weight of the std term in the A1 similarity
    #[arg(long = "alpha-sigma", global = true, value_name = "R")]
    alpha_sigma: Option<f64>,
    /// A2 scoring backend
    #[arg(long, global = true, value_enum, value_name = "BACKEND")]
    backend: Option<BackendArg>,
    /// Number of sampled different-speaker trials
    #[arg(long = "nontarget-trials", global = true, value_name = "N")]
    nontarget_trials: Option<usize>,
    /// Append the per-speaker embedding (i-vector stand-in) to every frame
    #[arg(long = "append-speaker-embedding", global = true, value_name = "BOOL")]
    append_speaker_embedding: Option<bool>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Cosine,
    Plda,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline end to end
    Run,
    /// Generate the four corpus partitions
    GenerateData,
    /// Train the initial global model
    TrainGlobal,
    /// Fine-tune one model per (speaker, adaptation set) and aggregate
    Personalize,
    /// Score trials with the statistical footprint attack
    AttackA1,
    /// Train the embedding extractors
    TrainA2,
    /// Score trials with the learned embedding attack
    AttackA2,
    /// Compute EERs and DET curves from score files
    Evaluate {
        /// Score an arbitrary scores CSV instead of the run directory
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
    },
    /// A1 EER for every hidden layer, with mean/std ablation variants
    AblateLayers,
    /// Print the effective config as flat dotted keys
    PrintConfig,
}

fn effective_config(overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &overrides.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = overrides.threads {
        cfg.threads = threads;
    }
    if let Some(h) = &overrides.h {
        cfg.attack.h = h.clone();
    }
    if let Some(v) = overrides.alpha_mu {
        cfg.attack.alpha_mu = v;
    }
    if let Some(v) = overrides.alpha_sigma {
        cfg.attack.alpha_sigma = v;
    }
    if let Some(b) = overrides.backend {
        cfg.attack.backend = match b {
            BackendArg::Cosine => Backend::Cosine,
            BackendArg::Plda => Backend::Plda,
        };
    }
    if let Some(n) = overrides.nontarget_trials {
        cfg.trials.n_nontarget = n;
    }
    if let Some(b) = overrides.append_speaker_embedding {
        cfg.gen.append_speaker_embedding = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_eer_lines(entries: &[pipeline::EerSummaryEntry]) {
    for e in entries {
        println!(
            "{} h={}: EER {:.2}% (threshold {:.6}, {} target / {} nontarget trials)",
            e.attack.to_uppercase(),
            e.h,
            100.0 * e.eer,
            e.threshold,
            e.n_target,
            e.n_nontarget
        );
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    // ad-hoc evaluate mode needs no config
    if let Command::Evaluate {
        scores: Some(path),
    } = &cli.command
    {
        let scored = flbench::io::load_scores_csv(
            path,
            ScoreMeta {
                attack: "file".into(),
                h: 0,
                config_hash: String::new(),
            },
        )?;
        let result = flbench::asv::compute_eer(&scored)?;
        println!("EER {:.2}%", 100.0 * result.eer);
        println!(
            "threshold {:.6}, {} target / {} nontarget trials",
            result.threshold, result.n_target, result.n_nontarget
        );
        return Ok(());
    }

    let cfg = effective_config(&cli.overrides)?;
    pipeline::init_threads(cfg.threads);
    let paths = Paths::new(&cfg.out);

    match &cli.command {
        Command::Run => {
            let report = pipeline::run_pipeline(&cfg)?;
            for s in &report.stages {
                println!("stage {:<14} {:>8.2}s", s.stage, s.seconds);
            }
            print_eer_lines(&report.eers);
            println!("artifacts in {}", cfg.out.display());
        }
        Command::GenerateData => pipeline::run_stage("generate-data", &cfg, &paths)?,
        Command::TrainGlobal => pipeline::run_stage("train-global", &cfg, &paths)?,
        Command::Personalize => pipeline::run_stage("personalize", &cfg, &paths)?,
        Command::AttackA1 => pipeline::run_stage("attack-a1", &cfg, &paths)?,
        Command::TrainA2 => pipeline::run_stage("train-a2", &cfg, &paths)?,
        Command::AttackA2 => pipeline::run_stage("attack-a2", &cfg, &paths)?,
        Command::Evaluate { scores: None } => {
            let entries =
                pipeline::stage_evaluate(&cfg, &paths).map_err(|e| e.in_stage("evaluate"))?;
            print_eer_lines(&entries);
        }
        Command::Evaluate { .. } => unreachable!("handled above"),
        Command::AblateLayers => {
            let rows = pipeline::stage_ablate_layers(&cfg, &paths)
                .map_err(|e| e.in_stage("ablate-layers"))?;
            println!("{:>3} {:>12} {:>12} {:>12}", "h", "mu-only", "sigma-only", "combined");
            for r in &rows {
                println!(
                    "{:>3} {:>11.2}% {:>11.2}% {:>11.2}%",
                    r.h,
                    100.0 * r.eer_mu_only,
                    100.0 * r.eer_sigma_only,
                    100.0 * r.eer_combined
                );
            }
        }
        Command::PrintConfig => print!("{}", cfg.emit()),
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Format { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}
