//! K-means over genome vectors and the cluster structure consumed by re-ranking.
//!
//! Clustering uses squared Euclidean distance with k-means++ seeding. Cluster-to-cluster
//! comparisons for subset selection use the Pearson correlation distance of the centroids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Genome, Ratings, TagLabel};
use crate::diversity::Centered;
use crate::ids::{ClusterId, MovieId};

pub const CLUSTER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k-means needs at least k={k} vectors, got {n}")]
    TooFewVectors { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vector for movie {movie} has length {found}, expected {expected}")]
    DimensionMismatch {
        movie: MovieId,
        found: usize,
        expected: usize,
    },
    #[error("cluster {0} does not exist")]
    UnknownCluster(ClusterId),
    #[error("cluster snapshot schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("cluster snapshot: {0}")]
    Io(#[from] std::io::Error),
    #[error("cluster snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Independent k-means++ starts; the run with the lowest final objective is kept.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn one() -> usize {
    1
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 24,
            max_iters: 300,
            seed: 0,
            restarts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: BTreeMap<MovieId, ClusterId>,
    /// Total ratings received by each cluster's member movies.
    pub rating_count: Vec<u64>,
    /// Lloyd objective after each update step.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].to_vec();
        d2.par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.par_iter().map(|p| nearest(p, centroids).0).collect()
}

fn means(points: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        sizes[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&sizes) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, sizes)
}

/// Recomputes centroids for `labels`, filling each empty cluster with the point farthest from
/// its own centroid (taken from a cluster with more than one member).
fn update(points: &[&[f64]], labels: &mut [usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    loop {
        let (centroids, sizes) = means(points, labels, k, dim);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return centroids;
        };
        let far = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .map(|i| (i, sq_dist(points[i], &centroids[labels[i]])))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .expect("n >= k guarantees a cluster with two members")
            .0;
        labels[far] = empty;
    }
}

fn objective(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    history: Vec<f64>,
    converged: bool,
}

fn lloyd(points: &[&[f64]], seeds: &[Vec<f64>], max_iters: usize, dim: usize) -> Run {
    let k = seeds.len();
    let mut labels = assign(points, seeds);
    let mut history = Vec::new();
    let mut converged = false;
    let mut centroids = Vec::new();
    for _ in 0..max_iters.max(1) {
        centroids = update(points, &mut labels, k, dim);
        history.push(objective(points, &labels, &centroids));
        let next = assign(points, &centroids);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    if !converged {
        centroids = update(points, &mut labels, k, dim);
        history.push(objective(points, &labels, &centroids));
    }
    Run {
        labels,
        centroids,
        history,
        converged,
    }
}

/// Lloyd's algorithm from k-means++ seeds, restarted `config.restarts` times; the run with the
/// lowest final objective wins, the earliest on ties. Each run stops at an assignment fixpoint
/// or after `max_iters` update steps. Deterministic for a fixed seed and input order.
pub fn kmeans(
    vectors: &[(MovieId, &[f64])],
    config: &KMeansConfig,
) -> Result<ClusterModel, ClusterError> {
    let k = config.k;
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if vectors.len() < k {
        return Err(ClusterError::TooFewVectors {
            n: vectors.len(),
            k,
        });
    }
    let dim = vectors[0].1.len();
    if let Some((movie, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
        return Err(ClusterError::DimensionMismatch {
            movie: *movie,
            found: v.len(),
            expected: dim,
        });
    }
    let points: Vec<&[f64]> = vectors.iter().map(|(_, v)| *v).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Run> = None;
    for _ in 0..config.restarts.max(1) {
        let seeds = plus_plus_init(&points, k, &mut rng);
        let run = lloyd(&points, &seeds, config.max_iters, dim);
        let last = |r: &Run| *r.history.last().expect("at least one update");
        if best.as_ref().is_none_or(|b| last(&run) < last(b)) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one run");

    let assignment = vectors
        .iter()
        .zip(&run.labels)
        .map(|((m, _), &c)| (*m, ClusterId(c as u32)))
        .collect();
    Ok(ClusterModel {
        k,
        centroids: run.centroids,
        assignment,
        rating_count: vec![0; k],
        objective_history: run.history,
        converged: run.converged,
    })
}

/// Clusters every genome vector.
pub fn kmeans_genome(genome: &Genome, config: &KMeansConfig) -> Result<ClusterModel, ClusterError> {
    let vectors: Vec<(MovieId, &[f64])> = genome
        .iter()
        .map(|v| (v.movie_id, v.relevance.as_slice()))
        .collect();
    kmeans(&vectors, config)
}

impl ClusterModel {
    pub fn cluster_of(&self, movie: MovieId) -> Option<ClusterId> {
        self.assignment.get(&movie).copied()
    }

    pub fn cluster_ids(&self) -> impl Iterator<Item = ClusterId> {
        (0..self.k as u32).map(ClusterId)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for c in self.assignment.values() {
            sizes[c.index()] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: ClusterId) -> impl Iterator<Item = MovieId> + '_ {
        self.assignment
            .iter()
            .filter(move |(_, &c)| c == cluster)
            .map(|(&m, _)| m)
    }

    fn check(&self, c: ClusterId) -> Result<(), ClusterError> {
        if c.index() < self.k {
            Ok(())
        } else {
            Err(ClusterError::UnknownCluster(c))
        }
    }

    /// Sets `rating_count` to the number of ratings each cluster's members received.
    pub fn count_ratings(&mut self, ratings: &Ratings) {
        let mut counts = vec![0u64; self.k];
        for e in ratings.events() {
            if let Some(c) = self.cluster_of(e.movie_id) {
                counts[c.index()] += 1;
            }
        }
        self.rating_count = counts;
    }

    /// Sum of squared distances from each member to its centroid, recomputed from `genome`.
    pub fn objective(&self, genome: &Genome) -> f64 {
        self.assignment
            .iter()
            .filter_map(|(m, c)| {
                genome
                    .get(*m)
                    .map(|v| sq_dist(&v.relevance, &self.centroids[c.index()]))
            })
            .sum()
    }

    pub fn centered_centroids(&self) -> Vec<Centered> {
        self.centroids.iter().map(|c| Centered::new(c)).collect()
    }

    /// Pearson correlation distance between two centroids.
    pub fn pairwise_distance(&self, a: ClusterId, b: ClusterId) -> Result<f64, ClusterError> {
        self.check(a)?;
        self.check(b)?;
        let ca = Centered::new(&self.centroids[a.index()]);
        let cb = Centered::new(&self.centroids[b.index()]);
        Ok(ca.distance(&cb).value)
    }

    /// The `n` tags with the highest centroid relevance, ties by ascending tag id. `n` is clamped
    /// to the genome dimension.
    pub fn top_tags<'t>(
        &self,
        cluster: ClusterId,
        tags: &'t [TagLabel],
        n: usize,
    ) -> Result<Vec<&'t TagLabel>, ClusterError> {
        self.check(cluster)?;
        let centroid = &self.centroids[cluster.index()];
        let mut order: Vec<usize> = (0..centroid.len().min(tags.len())).collect();
        order.sort_by(|&a, &b| centroid[b].total_cmp(&centroid[a]).then(a.cmp(&b)));
        Ok(order.into_iter().take(n).map(|i| &tags[i]).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            schema_version: u32,
            clusters: &'a ClusterModel,
        }
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            w,
            &Snapshot {
                schema_version: CLUSTER_SCHEMA_VERSION,
                clusters: self,
            },
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        #[derive(Deserialize)]
        struct Snapshot {
            schema_version: u32,
            clusters: ClusterModel,
        }
        let s: Snapshot = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if s.schema_version != CLUSTER_SCHEMA_VERSION {
            return Err(ClusterError::SchemaVersion {
                found: s.schema_version,
                expected: CLUSTER_SCHEMA_VERSION,
            });
        }
        Ok(s.clusters)
    }
}
