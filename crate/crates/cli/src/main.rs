//! `trialmatch`: stage-wise pipeline for matching patients to clinical
//! trials over their notes. Exit codes: 0 success, 2 input or validation
//! error, 3 backend transport failure, 4 completed with incomplete pairs.

mod backends;
mod config;
mod layout;
mod manifest;
mod report;
mod stages;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use trialmatch_core::qa_engine::QaError;
use trialmatch_core::retriever::RetrieverError;
use trialmatch_core::scorer_ranker::{Direction, ScoringMethod};
use trialmatch_core::trial_composer::ComposeError;

use config::{BackendMode, PipelineConfig};
use layout::{validate_id, RunLayout};
use manifest::RunManifest;
use stages::Ctx;

#[derive(Parser)]
#[command(
    name = "trialmatch",
    version,
    about = "Match patients to clinical trials over their clinical notes"
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "trialmatch.toml")]
    config: PathBuf,
    /// Run identifier; derived from the config and input hashes when omitted.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Override the configured backend mode.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DirectionArg {
    /// Rank candidate trials for each patient.
    TrialsForPatient,
    /// Rank candidate patients for each trial.
    PatientsForTrial,
}

impl From<DirectionArg> for Direction {
    fn from(arg: DirectionArg) -> Self {
        match arg {
            DirectionArg::TrialsForPatient => Direction::TrialsForPatient,
            DirectionArg::PatientsForTrial => Direction::PatientsForTrial,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw trial criteria into structured questions and logic.
    Compose,
    /// Filter, sentence-split, and chunk clinical notes per patient.
    Ingest,
    /// Embed chunks into per-patient vector indexes.
    Index,
    /// Answer questions, evaluate criteria, and score patient-trial pairs.
    Match {
        /// Comma-separated patient ids, or "all" (default).
        #[arg(long)]
        patients: Option<String>,
        /// Comma-separated trial ids, or "all" (default).
        #[arg(long)]
        trials: Option<String>,
    },
    /// Order candidates by match score for each subject.
    Rank {
        #[arg(long, value_enum)]
        direction: DirectionArg,
        /// Scoring method (defaults to pipeline.scoring_method).
        #[arg(long)]
        method: Option<ScoringMethod>,
        /// Relevance ground truth; enables metrics output.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Cutoff for the hit-rate metric.
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Compute ranking metrics against relevance ground truth.
    Evaluate {
        #[arg(long, value_enum)]
        direction: DirectionArg,
        #[arg(long)]
        method: Option<ScoringMethod>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Estimate runtime and dollar cost from recorded token usage.
    Cost,
    /// Render a human-readable summary of a completed run.
    Report,
}

fn run(cli: Cli) -> Result<i32> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(mode) = cli.backend {
        config.backend.mode = mode;
    }
    let snapshot = serde_json::to_value(&config)?;
    let hashes = manifest::input_hashes(&config);
    let run_id = match &cli.run_id {
        Some(id) => {
            validate_id("run", id)?;
            id.clone()
        }
        None => manifest::derive_run_id(&snapshot, &hashes),
    };
    log::info!("run id: {run_id}");
    let layout = RunLayout::new(&config.paths.runs_dir, &run_id);
    let manifest = RunManifest::load_or_create(&layout, &config, snapshot, hashes)?;
    let mut ctx = Ctx {
        config,
        layout,
        manifest,
    };

    match cli.command {
        Command::Compose => stages::cmd_compose(&mut ctx),
        Command::Ingest => stages::cmd_ingest(&mut ctx),
        Command::Index => stages::cmd_index(&mut ctx),
        Command::Match { patients, trials } => {
            stages::cmd_match(&mut ctx, patients.as_deref(), trials.as_deref())
        }
        Command::Rank {
            direction,
            method,
            ground_truth,
            k,
        } => stages::cmd_rank(&mut ctx, direction.into(), method, ground_truth.as_deref(), k),
        Command::Evaluate {
            direction,
            method,
            ground_truth,
            k,
        } => stages::cmd_evaluate(&mut ctx, direction.into(), method, ground_truth.as_deref(), k),
        Command::Cost => stages::cmd_cost(&mut ctx),
        Command::Report => report::cmd_report(&mut ctx),
    }
}

/// Transport failures exit 3; everything else is an input error (2).
fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        let transport = matches!(
            cause.downcast_ref::<ComposeError>(),
            Some(ComposeError::Transport { .. })
        ) || matches!(
            cause.downcast_ref::<QaError>(),
            Some(QaError::Transport { .. })
        ) || matches!(
            cause.downcast_ref::<RetrieverError>(),
            Some(RetrieverError::Transport { .. })
        );
        if transport {
            return 3;
        }
    }
    2
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    };
    std::process::exit(code);
}
