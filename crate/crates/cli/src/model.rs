use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::Args;
use divrec_core::clustering::{kmeans_genome, KMeansConfig};
use divrec_core::corpus::RATINGS_FILE;
use divrec_core::manifest::Manifest;
use divrec_core::recsys::{FunkSvdConfig, TrainConfig, DEFAULT_NEIGHBORHOOD};
use divrec_core::rerank::DEFAULT_POOL_SIZE;
use divrec_core::{Algorithm, BaseModel, ClusterModel, DiversityLevel, Engine, UserId};
use divrec_service::config::{CLUSTERS_FILE, MODEL_FILE};
use tracing::{info, warn};

use crate::common::{create_dir, genome, genome_inputs, input, output, ratings, write_manifest};
use crate::failure::{Classify, Failure, StageResult};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory written by `ingest`.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Where model.json and the manifest go.
    #[arg(long)]
    pub model_dir: PathBuf,
    /// peasant (popularity), warrior (item-item) or wizard (FunkSVD).
    #[arg(long, default_value = "wizard")]
    pub algo: Algorithm,
    #[arg(long)]
    pub seed: u64,
    /// FunkSVD latent features.
    #[arg(long, default_value_t = FunkSvdConfig::default().features)]
    pub features: usize,
    /// FunkSVD epochs per feature.
    #[arg(long, default_value_t = FunkSvdConfig::default().epochs_per_feature)]
    pub epochs: usize,
    /// Item-item neighbors kept per movie.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORHOOD)]
    pub neighbors: usize,
}

pub fn train(args: &TrainArgs) -> StageResult {
    let ratings = ratings(&args.data_dir, None)?;
    let config = TrainConfig {
        neighborhood_size: args.neighbors,
        funk: FunkSvdConfig {
            features: args.features,
            epochs_per_feature: args.epochs,
            seed: args.seed,
            ..Default::default()
        },
    };
    info!(algo = %args.algo, ratings = ratings.len(), "training");
    let model = BaseModel::train(args.algo, &ratings, &config).user("training")?;
    create_dir(&args.model_dir)?;
    let path = args.model_dir.join(MODEL_FILE);
    model
        .save(&path)
        .internal(format!("saving {}", path.display()))?;

    let mut manifest = Manifest::new("train")
        .seed(args.seed)
        .param("algo", args.algo)
        .param("config", &config);
    input(&mut manifest, &args.data_dir.join(RATINGS_FILE))?;
    output(&mut manifest, &path)?;
    write_manifest(&manifest, &args.model_dir)
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// clusters.json is written beside the recommender model.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = KMeansConfig::default().max_iters)]
    pub max_iters: usize,
    /// k-means++ starts; the lowest objective wins.
    #[arg(long, default_value_t = KMeansConfig::default().restarts)]
    pub restarts: usize,
    /// Write each cluster's size, rating count and strongest tags here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Tags listed per cluster in the report.
    #[arg(long, default_value_t = 10)]
    pub top_tags: usize,
}

pub fn cluster(args: &ClusterArgs) -> StageResult {
    let genome = genome(&args.data_dir)?;
    let ratings = ratings(&args.data_dir, None)?;
    let config = KMeansConfig {
        k: args.k,
        max_iters: args.max_iters,
        seed: args.seed,
        restarts: args.restarts,
    };
    let mut model = kmeans_genome(&genome, &config).user("clustering the genome")?;
    model.count_ratings(&ratings);
    if !model.converged {
        warn!(
            iterations = model.objective_history.len(),
            "k-means stopped before converging"
        );
    }
    create_dir(&args.model_dir)?;
    let path = args.model_dir.join(CLUSTERS_FILE);
    model
        .save(&path)
        .internal(format!("saving {}", path.display()))?;

    let mut manifest = Manifest::new("cluster")
        .seed(args.seed)
        .param("config", &config);
    genome_inputs(&mut manifest, &args.data_dir)?;
    input(&mut manifest, &args.data_dir.join(RATINGS_FILE))?;
    output(&mut manifest, &path)?;
    if let Some(report) = &args.report {
        let text = cluster_report(&model, &genome, args.top_tags)?;
        fs::write(report, text).internal(format!("writing {}", report.display()))?;
        output(&mut manifest, report)?;
    }
    write_manifest(&manifest, &args.model_dir)
}

fn cluster_report(
    model: &ClusterModel,
    genome: &divrec_core::Genome,
    n: usize,
) -> StageResult<String> {
    let sizes = model.sizes();
    let mut out = String::new();
    writeln!(
        out,
        "k = {}, objective = {:.6}",
        model.k,
        model.objective(genome)
    )
    .unwrap();
    for c in model.cluster_ids() {
        let tags = model
            .top_tags(c, genome.tags(), n)
            .internal("ranking tags")?;
        let names: Vec<&str> = tags.iter().map(|t| t.name.as_str()).collect();
        writeln!(
            out,
            "cluster {c}: {} movies, {} ratings\n  {}",
            sizes[c.index()],
            model.rating_count[c.index()],
            names.join(", ")
        )
        .unwrap();
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub user: u32,
    /// Diversity level, 1 (narrow) to 5 (one movie per cluster).
    #[arg(long, value_parser = clap::value_parser!(i64).range(1..=5))]
    pub level: i64,
    /// Candidates drawn from the base recommender before re-ranking.
    #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
    pub pool_size: usize,
}

/// Prints the three re-ranked pages as JSON lines.
pub fn rerank(args: &RerankArgs) -> StageResult {
    let model_path = args.model_dir.join(MODEL_FILE);
    let model = BaseModel::load(&model_path).user(format!("loading {}", model_path.display()))?;
    let clusters_path = args.model_dir.join(CLUSTERS_FILE);
    let clusters =
        ClusterModel::load(&clusters_path).user(format!("loading {}", clusters_path.display()))?;
    let ratings = ratings(&args.data_dir, None)?;
    if args.pool_size == 0 {
        return Err(Failure::user("--pool-size must be positive"));
    }
    let engine = Engine::new(model, clusters, &ratings).with_pool_size(args.pool_size);
    let level = DiversityLevel::new(args.level).user("parsing --level")?;
    let rec = engine
        .recommend(UserId(args.user), level)
        .user("re-ranking")?;
    if rec.fallback {
        warn!(
            user = args.user,
            "user unknown to the model; pages use popularity scores"
        );
    }
    let mut out = io::stdout().lock();
    for page in &rec.pages {
        serde_json::to_writer(&mut out, page).internal("writing page")?;
        writeln!(out).internal("writing page")?;
    }
    Ok(())
}
