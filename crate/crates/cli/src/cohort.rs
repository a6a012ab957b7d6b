use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::Args;
use divrec_core::corpus::RATINGS_FILE;
use divrec_core::diversity::{
    all_user_diversities, read_cohorts, split_cohorts, user_history_diversity, write_cohorts,
};
use divrec_core::experiment::{read_events, ActivityFilter, DateWindow, Enrollment, EventKind};
use divrec_core::manifest::Manifest;
use divrec_core::{Cohort, UserId};
use tracing::info;

use crate::common::{dir_of, genome, genome_inputs, input, output, ratings, write_manifest};
use crate::failure::{Classify, StageResult};

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub user: u32,
    /// Only count ratings from this UTC day on (YYYY-MM-DD).
    #[arg(long)]
    pub since: Option<NaiveDate>,
}

/// Prints the user's rating-history diversity.
pub fn diversity(args: &DiversityArgs) -> StageResult {
    let ratings = ratings(&args.data_dir, args.since)?;
    let genome = genome(&args.data_dir)?;
    let score =
        user_history_diversity(UserId(args.user), &ratings, &genome).user("scoring history")?;
    println!("{}", score.value());
    Ok(())
}

#[derive(Debug, Args)]
pub struct CohortsArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// CSV with columns user_id,score,cohort; the manifest goes beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Only count ratings from this UTC day on (YYYY-MM-DD). Default: all history.
    #[arg(long)]
    pub since: Option<NaiveDate>,
}

pub fn cohorts(args: &CohortsArgs) -> StageResult {
    let ratings = ratings(&args.data_dir, args.since)?;
    let genome = genome(&args.data_dir)?;
    let (scores, excluded) = all_user_diversities(&ratings, &genome);
    let split = split_cohorts(&scores);
    let dir = dir_of(&args.out);
    crate::common::create_dir(&dir)?;
    write_cohorts(&args.out, &split.members).internal(format!("writing {}", args.out.display()))?;
    info!(
        diverse = split.size(Cohort::Diverse),
        non_diverse = split.size(Cohort::NonDiverse),
        threshold = split.threshold,
        excluded = excluded.len(),
        "cohorts written"
    );

    let mut manifest = Manifest::new("cohorts").param("since", args.since.map(|d| d.to_string()));
    input(&mut manifest, &args.data_dir.join(RATINGS_FILE))?;
    genome_inputs(&mut manifest, &args.data_dir)?;
    output(&mut manifest, &args.out)?;
    write_manifest(&manifest, &dir)
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Cohort file written by `cohorts`.
    #[arg(long)]
    pub cohorts: PathBuf,
    #[arg(long)]
    pub arm_seed: u64,
    /// CSV with columns user_id,cohort,treatment; the manifest goes beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Event log used to apply the activity filter. Without it every cohort member is enrolled.
    #[arg(long, requires = "window")]
    pub events: Option<PathBuf>,
    /// Window the activity filter counts logins and ratings in, e.g. 2021-01-01..2021-12-31.
    #[arg(long)]
    pub window: Option<DateWindow>,
    #[arg(long, default_value_t = ActivityFilter::default().min_logins)]
    pub min_logins: usize,
    #[arg(long, default_value_t = ActivityFilter::default().min_ratings)]
    pub min_ratings: usize,
}

pub fn assign(args: &AssignArgs) -> StageResult {
    let mut members =
        read_cohorts(&args.cohorts).user(format!("reading {}", args.cohorts.display()))?;
    let mut manifest = Manifest::new("assign").seed(args.arm_seed);
    input(&mut manifest, &args.cohorts)?;
    if let (Some(path), Some(window)) = (&args.events, args.window) {
        let file = File::open(path).user(format!("opening {}", path.display()))?;
        let events =
            read_events(BufReader::new(file)).user(format!("reading {}", path.display()))?;
        let mut logins: BTreeMap<UserId, usize> = BTreeMap::new();
        let mut rated: BTreeMap<UserId, BTreeSet<u32>> = BTreeMap::new();
        for e in events.iter().filter(|e| window.contains(e.timestamp)) {
            match e.kind {
                EventKind::Login => *logins.entry(e.user_id).or_default() += 1,
                EventKind::Rating { movie_id, .. } => {
                    rated.entry(e.user_id).or_default().insert(movie_id.0);
                }
                _ => {}
            }
        }
        let filter = ActivityFilter {
            min_logins: args.min_logins,
            min_ratings: args.min_ratings,
        };
        let before = members.len();
        members.retain(|m| {
            let l = logins.get(&m.user_id).copied().unwrap_or(0);
            let r = rated.get(&m.user_id).map_or(0, BTreeSet::len);
            filter.admits(l, r)
        });
        info!(
            eligible = members.len(),
            of = before,
            "activity filter applied"
        );
        manifest = manifest
            .param("window", window.to_string())
            .param("filter", filter);
        input(&mut manifest, path)?;
    }
    let enrollment = Enrollment::new(&members, args.arm_seed);
    let dir = dir_of(&args.out);
    crate::common::create_dir(&dir)?;
    enrollment
        .write_csv(&args.out)
        .internal(format!("writing {}", args.out.display()))?;
    for (arm, n) in enrollment.counts() {
        info!(%arm, users = n, "assigned");
    }
    output(&mut manifest, &args.out)?;
    write_manifest(&manifest, &dir)
}
