use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use fluency::config::RunConfig;
use fluency::io;
use fluency::models::Family;
use fluency::pipeline::{self, BatchOutcome, PipelineError};
use fluency::server::{self, AppState};

#[derive(Parser)]
#[command(name = "fluency", version, about = "Automatic read-speech fluency scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Manifest CSV (stimulus_id,speaker_id,group,sentence_id,expected_syllables,wav_path).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides model.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment and cluster every recording of the manifest.
    Segment {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the fluency predictors of every recording into features.csv.
    Features {
        #[command(flatten)]
        common: Common,
    },
    /// Leave-one-speaker-out evaluation of one model family.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model family: mlr, svr or rfr (overrides model.family).
        #[arg(long, value_parser = parse_family)]
        model: Option<Family>,
        /// Add the syllable count delta as a predictor.
        #[arg(long)]
        with_delta: bool,
        /// Features CSV; defaults to io.features, then <out>/features.csv.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Ratings CSV; defaults to io.ratings.
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
    /// Serve the rating interface and its HTTP API.
    RateServe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Ratings log; defaults to io.ratings, then <out>/ratings.csv.
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Familiarization stimuli, never persisted.
        #[arg(long)]
        practice_manifest: Option<PathBuf>,
    },
    /// Reliability, predictor correlations and a comparison of all model families.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        ratings: Option<PathBuf>,
    },
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse()
}

fn load_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &common.manifest {
        cfg.io.manifest = Some(m.clone());
    }
    if let Some(seed) = common.seed {
        cfg.model.seed = seed;
    }
    Ok(cfg)
}

fn batch_exit(outcome: &BatchOutcome) -> ExitCode {
    eprintln!("processed {} recordings, {} failed", outcome.processed, outcome.failures.len());
    if outcome.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Segment { common } => {
            let cfg = load_config(&common)?;
            Ok(batch_exit(&pipeline::cmd_segment(&cfg, &common.out)?))
        }
        Command::Features { common } => {
            let cfg = load_config(&common)?;
            Ok(batch_exit(&pipeline::cmd_features(&cfg, &common.out)?))
        }
        Command::Evaluate {
            common,
            model,
            with_delta,
            features,
            ratings,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(f) = model {
                cfg.model.family = f;
            }
            apply_inputs(&mut cfg, &common, features, ratings);
            let report = pipeline::cmd_evaluate(&cfg, with_delta, &common.out)?;
            let ev = &report.evaluation;
            println!(
                "{}: average RMSE {:.3} (SD {:.3}), sentence r {}, participant r {}",
                report.family,
                ev.average_rmse,
                ev.sd_rmse,
                ev.sentence_r.map_or("n/a".into(), |r| format!("{r:.3}")),
                ev.participant.r.map_or("n/a".into(), |r| format!("{r:.3}")),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            common,
            features,
            ratings,
        } => {
            let mut cfg = load_config(&common)?;
            apply_inputs(&mut cfg, &common, features, ratings);
            let (_, text) = pipeline::cmd_report(&cfg, &common.out)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::RateServe {
            common,
            port,
            ratings,
            practice_manifest,
        } => {
            let cfg = load_config(&common)?;
            let manifest = cfg.io.manifest.clone().ok_or(PipelineError::MissingInput("manifest"))?;
            let stimuli = io::read_manifest(&manifest)?;
            let practice = match practice_manifest.or(cfg.io.practice_manifest.clone()) {
                Some(p) => io::read_manifest(&p)?,
                None => Vec::new(),
            };
            let ratings = ratings
                .or(cfg.io.ratings.clone())
                .unwrap_or_else(|| common.out.join("ratings.csv"));
            let state = AppState::open(&stimuli, &practice, &ratings, cfg.model.seed, cfg.io.ui_dir.clone())?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(server::serve(state, port))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn apply_inputs(cfg: &mut RunConfig, common: &Common, features: Option<PathBuf>, ratings: Option<PathBuf>) {
    if let Some(f) = features {
        cfg.io.features = Some(f);
    }
    if cfg.io.features.is_none() {
        cfg.io.features = Some(common.out.join("features.csv"));
    }
    if let Some(r) = ratings {
        cfg.io.ratings = Some(r);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
