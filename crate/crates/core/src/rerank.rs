//! Greedy cluster-based re-ranking of the candidate pool into three pages of 24.
//!
//! A diversity level `L` in `1..=5` picks a subset of `min(24, 5L)` clusters, grown greedily from
//! the most-rated cluster by always adding the cluster that keeps the subset's centroid
//! diversity lowest. Each page then takes candidates in score order, admitting a movie only if
//! its cluster is in the subset and the page holds fewer than `ceil(24 / 5L)` movies from that
//! cluster. Candidates are consumed across pages, so no movie repeats within a response.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterModel;
use crate::diversity::{Centered, DiversityScore};
use crate::ids::{ClusterId, MovieId};
use crate::recsys::ScoredCandidate;

/// Slots per page.
pub const PAGE_SIZE: usize = 24;
/// Number of re-ranked pages.
pub const PAGES: usize = 3;
/// Default size of the scored pool handed to re-ranking.
pub const DEFAULT_POOL_SIZE: usize = 600;
/// Clusters added per diversity level.
const CLUSTERS_PER_LEVEL: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("diversity level must be in 1..=5, got {0}")]
    InvalidLevel(i64),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("candidate {0} has no cluster assignment")]
    Unclustered(MovieId),
    #[error("candidate pool is not sorted by score")]
    Unsorted,
    #[error("page {0} is out of range; only the first 3 pages are re-ranked")]
    PageOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct DiversityLevel(u8);

impl DiversityLevel {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;
    /// Level shown at the start of every session.
    pub const SESSION_DEFAULT: DiversityLevel = DiversityLevel(3);
    /// Level of the fixed broad-recommendation carousel.
    pub const BROADEST: DiversityLevel = DiversityLevel(5);

    pub fn new(level: i64) -> Result<Self, RerankError> {
        if (i64::from(Self::MIN)..=i64::from(Self::MAX)).contains(&level) {
            Ok(Self(level as u8))
        } else {
            Err(RerankError::InvalidLevel(level))
        }
    }

    pub fn all() -> impl Iterator<Item = DiversityLevel> {
        (Self::MIN..=Self::MAX).map(DiversityLevel)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// `min(clusters, 5L)`.
    pub fn subset_size(self, clusters: usize) -> usize {
        clusters.min(CLUSTERS_PER_LEVEL * usize::from(self.0))
    }

    /// `ceil(24 / 5L)`.
    pub fn max_per_cluster(self) -> usize {
        PAGE_SIZE.div_ceil(CLUSTERS_PER_LEVEL * usize::from(self.0))
    }
}

impl TryFrom<i64> for DiversityLevel {
    type Error = RerankError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DiversityLevel> for u8 {
    fn from(l: DiversityLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for DiversityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered cluster ids, seed cluster first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSubset(pub Vec<ClusterId>);

impl ClusterSubset {
    pub fn contains(&self, c: ClusterId) -> bool {
        self.0.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The full greedy cluster order for one model. Because each greedy step depends only on the
/// clusters already chosen, the subset for level `L` is the first `min(k, 5L)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPlan {
    order: Vec<ClusterId>,
}

impl SubsetPlan {
    pub fn new(model: &ClusterModel) -> Self {
        Self {
            order: greedy_order(model, model.k),
        }
    }

    pub fn subset(&self, level: DiversityLevel) -> ClusterSubset {
        ClusterSubset(self.order[..level.subset_size(self.order.len())].to_vec())
    }

    pub fn order(&self) -> &[ClusterId] {
        &self.order
    }
}

/// Average of the given pair distances, summed in sorted order as `list_diversity` does.
fn subset_diversity(members: &[usize], dist: &[Vec<f64>]) -> f64 {
    let mut pairs = Vec::with_capacity(members.len() * members.len() / 2);
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            pairs.push(dist[a][b]);
        }
    }
    pairs.sort_unstable_by(f64::total_cmp);
    pairs.iter().sum::<f64>() / pairs.len() as f64
}

fn greedy_order(model: &ClusterModel, size: usize) -> Vec<ClusterId> {
    let k = model.k;
    if k == 0 || size == 0 {
        return Vec::new();
    }
    let centered: Vec<Centered> = model.centered_centroids();
    let dist: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| centered[a].distance(&centered[b]).value)
                .collect()
        })
        .collect();
    let seed = (0..k)
        .max_by(|&a, &b| {
            model.rating_count[a]
                .cmp(&model.rating_count[b])
                .then(b.cmp(&a))
        })
        .expect("k > 0");
    let mut chosen = vec![seed];
    while chosen.len() < size.min(k) {
        let mut best: Option<(usize, f64)> = None;
        let remaining: Vec<usize> = (0..k).filter(|c| !chosen.contains(c)).collect();
        for c in remaining {
            chosen.push(c);
            let d = subset_diversity(&chosen, &dist);
            chosen.pop();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((c, d));
            }
        }
        chosen.push(best.expect("unchosen cluster exists").0);
    }
    chosen.into_iter().map(|c| ClusterId(c as u32)).collect()
}

/// Greedy subset for one level: start from the most-rated cluster (ties to the lower id), then
/// repeatedly append the cluster minimizing centroid diversity of the grown subset (ties to the
/// lower id).
pub fn select_cluster_subset(model: &ClusterModel, level: DiversityLevel) -> ClusterSubset {
    ClusterSubset(greedy_order(model, level.subset_size(model.k)))
}

/// Diversity of a subset's centroids, for reporting.
pub fn subset_centroid_diversity(
    model: &ClusterModel,
    subset: &ClusterSubset,
) -> Option<DiversityScore> {
    let centroids: Vec<&[f64]> = subset
        .0
        .iter()
        .map(|c| model.centroids[c.index()].as_slice())
        .collect();
    crate::diversity::list_diversity(&centroids).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageSlot {
    pub movie_id: MovieId,
    pub score: f64,
    pub cluster: ClusterId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecPage {
    /// 1-based.
    pub page_index: usize,
    pub level: DiversityLevel,
    pub slots: Vec<PageSlot>,
    /// The quota scan could not fill the page and constraints were relaxed.
    pub degraded: bool,
}

impl RecPage {
    pub fn movie_ids(&self) -> impl Iterator<Item = MovieId> + '_ {
        self.slots.iter().map(|s| s.movie_id)
    }

    pub fn cluster_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for s in &self.slots {
            counts[s.cluster.index()] += 1;
        }
        counts
    }
}

/// Scored candidates with their clusters and a consumed flag per entry.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    entries: Vec<PageSlot>,
    used: Vec<bool>,
}

impl CandidatePool {
    /// `candidates` must already be sorted by score descending, ties by ascending movie id.
    pub fn new(
        candidates: &[ScoredCandidate],
        clusters: &ClusterModel,
    ) -> Result<Self, RerankError> {
        if candidates.is_empty() {
            return Err(RerankError::EmptyPool);
        }
        if candidates
            .windows(2)
            .any(|w| crate::recsys::candidate_order(&w[0], &w[1]).is_gt())
        {
            return Err(RerankError::Unsorted);
        }
        let entries = candidates
            .iter()
            .map(|c| {
                clusters
                    .cluster_of(c.movie_id)
                    .map(|cluster| PageSlot {
                        movie_id: c.movie_id,
                        score: c.score,
                        cluster,
                    })
                    .ok_or(RerankError::Unclustered(c.movie_id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let used = vec![false; entries.len()];
        Ok(Self { entries, used })
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }

    /// Takes unused entries in score order while `admit` accepts them and the page has room.
    fn scan(&mut self, page: &mut RecPage, mut admit: impl FnMut(&PageSlot, &RecPage) -> bool) {
        for (entry, used) in self.entries.iter().zip(self.used.iter_mut()) {
            if page.slots.len() >= PAGE_SIZE {
                break;
            }
            if !*used && admit(entry, page) {
                *used = true;
                page.slots.push(*entry);
            }
        }
    }
}

/// Relaxes a page that the quota scan left short: first lift the per-cluster quota inside the
/// subset, then admit out-of-subset candidates, both in score order. Marks the page degraded.
pub fn fallback_fill(page: &mut RecPage, pool: &mut CandidatePool, subset: &ClusterSubset) {
    if page.slots.len() >= PAGE_SIZE {
        return;
    }
    page.degraded = true;
    pool.scan(page, |e, _| subset.contains(e.cluster));
    pool.scan(page, |_, _| true);
}

fn build_page(
    pool: &mut CandidatePool,
    subset: &ClusterSubset,
    level: DiversityLevel,
    k: usize,
    page_index: usize,
) -> RecPage {
    let mut page = RecPage {
        page_index,
        level,
        slots: Vec::with_capacity(PAGE_SIZE),
        degraded: false,
    };
    let quota = level.max_per_cluster();
    let mut counts = vec![0usize; k];
    pool.scan(&mut page, |e, _| {
        let c = e.cluster.index();
        if subset.contains(e.cluster) && counts[c] < quota {
            counts[c] += 1;
            true
        } else {
            false
        }
    });
    fallback_fill(&mut page, pool, subset);
    page
}

/// Builds the three re-ranked pages from a sorted candidate pool.
pub fn rerank_pages(
    candidates: &[ScoredCandidate],
    clusters: &ClusterModel,
    subset: &ClusterSubset,
    level: DiversityLevel,
) -> Result<Vec<RecPage>, RerankError> {
    let mut pool = CandidatePool::new(candidates, clusters)?;
    Ok((1..=PAGES)
        .map(|p| build_page(&mut pool, subset, level, clusters.k, p))
        .collect())
}
