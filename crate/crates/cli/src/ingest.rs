use std::fs;
use std::path::PathBuf;

use clap::{ArgGroup, Args};
use divrec_core::corpus::{GENOME_SCORES_FILE, GENOME_TAGS_FILE, MOVIES_FILE, RATINGS_FILE};
use divrec_core::manifest::Manifest;
use divrec_core::synth::{generate, SynthConfig};
use divrec_core::{Corpus, GENOME_DIM};
use tracing::{info, warn};

use crate::common::{create_dir, input, output, write_manifest};
use crate::failure::{Classify, Failure, StageResult};

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data_dir", "synthetic"])))]
pub struct IngestArgs {
    /// MovieLens directory with ratings.csv, movies.csv, genome-scores.csv and genome-tags.csv.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Generate a corpus with planted genome clusters instead of reading one.
    #[arg(long, requires = "seed")]
    pub synthetic: bool,
    /// Seed for --synthetic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory to write the validated corpus, summary.json and the manifest into.
    #[arg(long)]
    pub out: PathBuf,
    /// Synthetic movies with genome vectors.
    #[arg(long, default_value_t = 2000)]
    pub movies: usize,
    /// Synthetic users.
    #[arg(long, default_value_t = 300)]
    pub users: usize,
    /// Planted genome clusters in the synthetic corpus.
    #[arg(long, default_value_t = 24)]
    pub planted_clusters: usize,
}

pub fn run(args: &IngestArgs) -> StageResult {
    let mut manifest = Manifest::new("ingest");
    let corpus = match (&args.data_dir, args.seed) {
        (Some(dir), _) => {
            let (corpus, fills) =
                Corpus::load(dir).user(format!("loading corpus from {}", dir.display()))?;
            for f in &fills {
                warn!(movie = %f.movie_id, missing = f.missing, "genome scores missing; filled with 0.0");
            }
            for name in [
                RATINGS_FILE,
                MOVIES_FILE,
                GENOME_SCORES_FILE,
                GENOME_TAGS_FILE,
            ] {
                input(&mut manifest, &dir.join(name))?;
            }
            corpus
        }
        (None, Some(seed)) => {
            let config = SynthConfig {
                movies: args.movies,
                users: args.users,
                clusters: args.planted_clusters,
                dim: GENOME_DIM,
                ..Default::default()
            };
            if config.clusters == 0 {
                return Err(Failure::user("--planted-clusters must be positive"));
            }
            manifest = manifest.seed(seed).param("synthetic", &config);
            generate(&config, seed).corpus
        }
        (None, None) => unreachable!("clap requires a source"),
    };

    create_dir(&args.out)?;
    corpus
        .write(&args.out)
        .internal(format!("writing corpus to {}", args.out.display()))?;
    let summary = corpus.summary();
    let text = serde_json::to_string_pretty(&summary).internal("serializing the summary")?;
    fs::write(args.out.join("summary.json"), format!("{text}\n"))
        .internal("writing summary.json")?;
    println!("{text}");
    info!(
        users = summary.users,
        movies = summary.movies,
        ratings = summary.ratings,
        "corpus written to {}",
        args.out.display()
    );
    output(&mut manifest, &args.out)?;
    write_manifest(&manifest, &args.out)
}
