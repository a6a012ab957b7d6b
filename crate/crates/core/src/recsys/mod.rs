//! Base recommenders whose scores form the candidate pool for re-ranking.
//!
//! Three algorithms are available under their product names: `peasant` (movie mean),
//! `warrior` (item-item CF), and `wizard` (Funk SVD). Every personalized model carries a
//! popularity model for users it has never seen.

mod funk_svd;
mod item_item;
mod popularity;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use funk_svd::{FactorModel, FunkSvdConfig, TrainingTrace};
pub use item_item::{ItemItemScore, ItemSimilarityModel, Neighbor, DEFAULT_NEIGHBORHOOD};
pub use popularity::{MovieStats, PopularityModel};

use crate::corpus::{Rating, Ratings};
use crate::ids::{MovieId, UserId};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecsysError {
    #[error("cannot train on an empty rating set")]
    EmptyRatings,
    #[error("training diverged (non-finite factors) at feature {feature}, epoch {epoch}")]
    Diverged { feature: usize, epoch: usize },
    #[error("n must be at least 1")]
    InvalidN,
    #[error("model snapshot schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("model snapshot: {0}")]
    Io(#[from] std::io::Error),
    #[error("model snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

/// One training observation. Ratings are on the half-star grid, but the trainers accept any real
/// value so they can be exercised on synthetic matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub user_id: UserId,
    pub movie_id: MovieId,
    pub value: f64,
}

pub fn observations(ratings: &Ratings) -> Vec<Observation> {
    ratings
        .events()
        .iter()
        .map(|e| Observation {
            user_id: e.user_id,
            movie_id: e.movie_id,
            value: e.rating.stars(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Movie-mean popularity.
    Peasant,
    /// Item-item collaborative filtering.
    Warrior,
    /// Funk SVD.
    Wizard,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Peasant, Algorithm::Warrior, Algorithm::Wizard];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Peasant => "peasant",
            Algorithm::Warrior => "warrior",
            Algorithm::Wizard => "wizard",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?} (expected peasant, warrior or wizard)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub neighborhood_size: usize,
    pub funk: FunkSvdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            neighborhood_size: DEFAULT_NEIGHBORHOOD,
            funk: FunkSvdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Personalized {
    None,
    ItemItem(ItemSimilarityModel),
    Factors(FactorModel),
}

/// A trained base recommender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub algorithm: Algorithm,
    pub popularity: PopularityModel,
    pub personalized: Personalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// The model's own scoring rule.
    Model,
    /// Item-item had no usable neighbors; the user's mean rating.
    UserMean,
    /// Unknown user; the non-personalized movie mean.
    PopularityFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub source: PredictionSource,
}

impl BaseModel {
    pub fn train(
        algorithm: Algorithm,
        ratings: &Ratings,
        config: &TrainConfig,
    ) -> Result<Self, RecsysError> {
        Self::train_observations(algorithm, &observations(ratings), config)
    }

    pub fn train_observations(
        algorithm: Algorithm,
        obs: &[Observation],
        config: &TrainConfig,
    ) -> Result<Self, RecsysError> {
        let popularity = PopularityModel::train(obs)?;
        let personalized = match algorithm {
            Algorithm::Peasant => Personalized::None,
            Algorithm::Warrior => {
                Personalized::ItemItem(ItemSimilarityModel::train(obs, config.neighborhood_size))
            }
            Algorithm::Wizard => Personalized::Factors(FactorModel::train(obs, &config.funk)?),
        };
        Ok(Self {
            algorithm,
            popularity,
            personalized,
        })
    }

    pub fn knows_user(&self, user: UserId) -> bool {
        match &self.personalized {
            Personalized::None => true,
            Personalized::ItemItem(m) => m.knows_user(user),
            Personalized::Factors(m) => m.knows_user(user),
        }
    }

    pub fn predict(&self, user: UserId, movie: MovieId) -> Prediction {
        let fallback = || Prediction {
            score: self.popularity.predict(movie),
            source: PredictionSource::PopularityFallback,
        };
        match &self.personalized {
            Personalized::None => Prediction {
                score: self.popularity.predict(movie),
                source: PredictionSource::Model,
            },
            Personalized::ItemItem(m) => match m.predict(user, movie) {
                Some(ItemItemScore::Neighborhood(s)) => Prediction {
                    score: s.clamp(Rating::MIN, Rating::MAX),
                    source: PredictionSource::Model,
                },
                Some(ItemItemScore::UserMean(s)) => Prediction {
                    score: s.clamp(Rating::MIN, Rating::MAX),
                    source: PredictionSource::UserMean,
                },
                None => fallback(),
            },
            Personalized::Factors(m) => match m.predict(user, movie) {
                Some(score) => Prediction {
                    score,
                    source: PredictionSource::Model,
                },
                None => fallback(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RecsysError> {
        let snapshot = ModelSnapshotRef {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self,
        };
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, &snapshot)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RecsysError> {
        let snapshot: ModelSnapshot = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if snapshot.schema_version != MODEL_SCHEMA_VERSION {
            return Err(RecsysError::SchemaVersion {
                found: snapshot.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok(snapshot.model)
    }
}

#[derive(Serialize)]
struct ModelSnapshotRef<'a> {
    schema_version: u32,
    model: &'a BaseModel,
}

#[derive(Deserialize)]
struct ModelSnapshot {
    schema_version: u32,
    model: BaseModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub movie_id: MovieId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopN {
    /// Sorted by score descending, ties by ascending movie id.
    pub candidates: Vec<ScoredCandidate>,
    /// Fewer than `n` eligible movies existed.
    pub short: bool,
    /// The user was unknown to the model and got popularity scores.
    pub fallback: bool,
}

/// Orders candidates by score descending, then movie id ascending.
pub fn candidate_order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.movie_id.cmp(&b.movie_id))
}

/// The `n` best-scoring movies among `eligible` that are not in `exclude`.
pub fn top_n(
    model: &BaseModel,
    user: UserId,
    n: usize,
    exclude: &HashSet<MovieId>,
    eligible: impl IntoIterator<Item = MovieId>,
) -> Result<TopN, RecsysError> {
    if n == 0 {
        return Err(RecsysError::InvalidN);
    }
    let fallback = !model.knows_user(user);
    let mut scored: Vec<ScoredCandidate> = eligible
        .into_iter()
        .filter(|m| !exclude.contains(m))
        .map(|movie_id| ScoredCandidate {
            movie_id,
            score: model.predict(user, movie_id).score,
        })
        .collect();
    let short = scored.len() < n;
    if !short && scored.len() > n {
        scored.select_nth_unstable_by(n - 1, candidate_order);
        scored.truncate(n);
    }
    scored.sort_by(candidate_order);
    Ok(TopN {
        candidates: scored,
        short,
        fallback,
    })
}
