//! Synthetic MovieLens-shaped corpora with planted genome clusters.
//!
//! Cluster prototypes are built two levels deep: a handful of broad groups, each split into
//! clusters that share part of the group profile. Clusters in the same group are therefore
//! closer to each other than to the rest, which gives the greedy subset selection something
//! real to find.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, Genome, GenomeVector, Movie, Rating, RatingEvent, Ratings, GENOME_DIM,
};
use crate::ids::{MovieId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub movies: usize,
    /// Extra movies with ratings but no genome vector.
    pub unscored_movies: usize,
    pub users: usize,
    pub clusters: usize,
    pub groups: usize,
    pub dim: usize,
    /// Standard deviation of per-movie deviation from its prototype.
    pub noise: f64,
    pub min_ratings: usize,
    pub max_ratings: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            movies: 2000,
            unscored_movies: 0,
            users: 300,
            clusters: 24,
            groups: 6,
            dim: GENOME_DIM,
            noise: 0.08,
            min_ratings: 20,
            max_ratings: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Generating cluster of every genome-scored movie.
    pub planted: BTreeMap<MovieId, usize>,
    pub prototypes: Vec<Vec<f64>>,
    /// Ratings emitted per user.
    pub ratings_per_user: BTreeMap<UserId, usize>,
}

const GENRES: [&str; 8] = [
    "Drama",
    "Comedy",
    "Action",
    "Thriller",
    "Romance",
    "Sci-Fi",
    "Horror",
    "Documentary",
];
/// 2015-01-01T00:00:00Z
const EPOCH_START: i64 = 1_420_070_400;
const SPAN_SECS: i64 = 7 * 365 * 86_400;

pub fn planted_prototypes(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let skewed = |rng: &mut ChaCha8Rng| rng.random::<f64>().powi(3);
    let groups: Vec<Vec<f64>> = (0..config.groups.max(1))
        .map(|_| (0..config.dim).map(|_| skewed(rng)).collect())
        .collect();
    (0..config.clusters)
        .map(|c| {
            let g = &groups[c % groups.len()];
            g.iter().map(|&v| 0.5 * v + 0.5 * skewed(rng)).collect()
        })
        .collect()
}

pub fn generate(config: &SynthConfig, seed: u64) -> SynthCorpus {
    assert!(
        config.clusters > 0 && config.dim >= 2,
        "need clusters and at least two dimensions"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes = planted_prototypes(config, &mut rng);
    let noise = Normal::new(0.0, config.noise.max(0.0)).unwrap();

    let mut movies = BTreeMap::new();
    let mut planted = BTreeMap::new();
    let mut vectors = Vec::with_capacity(config.movies);
    let mut by_cluster: Vec<Vec<MovieId>> = vec![Vec::new(); config.clusters];
    let mut quality = BTreeMap::new();
    let total = config.movies + config.unscored_movies;
    for i in 0..total {
        let id = MovieId(i as u32 + 1);
        let year = 1950 + rng.random_range(0..72);
        let cluster = i % config.clusters;
        movies.insert(
            id,
            Movie::new(
                id,
                format!("Synthetic Movie {} ({year})", id.0),
                GENRES[cluster % GENRES.len()],
            ),
        );
        quality.insert(id, 3.4 + 0.5 * noise_unit(&mut rng));
        if i < config.movies {
            let relevance = prototypes[cluster]
                .iter()
                .map(|&p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            vectors.push(GenomeVector {
                movie_id: id,
                relevance,
            });
            planted.insert(id, cluster);
        }
        by_cluster[cluster].push(id);
    }
    let genome = Genome::new(Genome::numbered_tags(config.dim), vectors)
        .expect("generated vectors are valid");

    // Popularity falls off with position inside each cluster.
    let weights: Vec<WeightedIndex<f64>> = by_cluster
        .iter()
        .map(|ms| WeightedIndex::new((0..ms.len().max(1)).map(|r| 1.0 / (r as f64 + 5.0))).unwrap())
        .collect();
    let mut events = Vec::new();
    let mut ratings_per_user = BTreeMap::new();
    for u in 0..config.users {
        let user = UserId(u as u32 + 1);
        let n_favorites = rng.random_range(1..=3);
        let favorites: Vec<usize> = (0..n_favorites)
            .map(|_| rng.random_range(0..config.clusters))
            .collect();
        let focus: f64 = rng.random_range(0.2..0.95);
        let bias = 0.4 * noise_unit(&mut rng);
        let target = rng
            .random_range(config.min_ratings..=config.max_ratings)
            .min(total);
        let mut seen = BTreeSet::new();
        let mut attempts = 0;
        while seen.len() < target && attempts < target * 50 {
            attempts += 1;
            let cluster = if rng.random::<f64>() < focus {
                favorites[rng.random_range(0..favorites.len())]
            } else {
                rng.random_range(0..config.clusters)
            };
            if by_cluster[cluster].is_empty() {
                continue;
            }
            let movie = by_cluster[cluster][weights[cluster].sample(&mut rng)];
            if !seen.insert(movie) {
                continue;
            }
            let bonus = if favorites.contains(&cluster) {
                0.3
            } else {
                0.0
            };
            let stars = quality[&movie] + bias + bonus + 0.6 * noise_unit(&mut rng);
            let halves = (stars * 2.0).round().clamp(1.0, 10.0) as u8;
            events.push(RatingEvent {
                user_id: user,
                movie_id: movie,
                rating: Rating::from_half_stars(halves).unwrap(),
                timestamp: EPOCH_START + rng.random_range(0..SPAN_SECS),
            });
        }
        ratings_per_user.insert(user, seen.len());
    }

    SynthCorpus {
        corpus: Corpus {
            movies,
            ratings: Ratings::from_events(events),
            genome,
        },
        planted,
        prototypes,
        ratings_per_user,
    }
}

fn noise_unit(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}
