//! `divrec`: the offline pipeline and the experiment service behind one binary.
//!
//! A typical run:
//!
//! ```text
//! divrec ingest --synthetic --seed 7 --out data
//! divrec train --data-dir data --model-dir model --seed 7
//! divrec cluster --data-dir data --model-dir model --seed 7
//! divrec cohorts --data-dir data --out model/cohorts.csv
//! divrec assign --cohorts model/cohorts.csv --arm-seed 7 --out model/arms.csv
//! divrec serve --data-dir data --model-dir model
//! ```
//!
//! Exit codes: 0 on success, 1 for bad flags or unusable inputs, 2 for anything else.

mod cohort;
mod common;
mod experiment;
mod failure;
mod ingest;
mod model;
mod serve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use failure::StageResult;

#[derive(Debug, Parser)]
#[command(
    name = "divrec",
    version,
    about = "Diversity-aware movie recommendation experiments"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a MovieLens corpus (or generate one) and write it out normalized.
    Ingest(ingest::IngestArgs),
    /// Fit a base recommender.
    Train(model::TrainArgs),
    /// K-Means over the tag genome.
    Cluster(model::ClusterArgs),
    /// Print a user's re-ranked pages at one diversity level.
    Rerank(model::RerankArgs),
    /// Print one user's rating-history diversity.
    Diversity(cohort::DiversityArgs),
    /// Split users into diverse and non-diverse cohorts.
    Cohorts(cohort::CohortsArgs),
    /// Assign treatments to cohort members.
    Assign(cohort::AssignArgs),
    /// Run the experiment HTTP service.
    Serve(serve::ServeArgs),
    /// Generate a synthetic experiment: events, arms, survey and ground truth.
    Simulate(experiment::SimulateArgs),
    /// Compute metrics per window and run the statistical battery.
    Analyze(experiment::AnalyzeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Cluster(_) => "cluster",
            Command::Rerank(_) => "rerank",
            Command::Diversity(_) => "diversity",
            Command::Cohorts(_) => "cohorts",
            Command::Assign(_) => "assign",
            Command::Serve(_) => "serve",
            Command::Simulate(_) => "simulate",
            Command::Analyze(_) => "analyze",
        }
    }

    fn run(&self) -> StageResult {
        match self {
            Command::Ingest(a) => ingest::run(a),
            Command::Train(a) => model::train(a),
            Command::Cluster(a) => model::cluster(a),
            Command::Rerank(a) => model::rerank(a),
            Command::Diversity(a) => cohort::diversity(a),
            Command::Cohorts(a) => cohort::cohorts(a),
            Command::Assign(a) => cohort::assign(a),
            Command::Serve(a) => serve::run(a),
            Command::Simulate(a) => experiment::simulate(a),
            Command::Analyze(a) => experiment::analyze(a),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version land here too.
            return if e.exit_code() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let default = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)),
        )
        .with_writer(std::io::stderr)
        .init();
    match cli.command.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!(
                "divrec {}: error: {}",
                cli.command.name(),
                failure::render(f.error())
            );
            f.exit_code()
        }
    }
}
