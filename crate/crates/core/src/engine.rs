//! A trained recommender bound to its cluster model: the scored candidate pool for a user and
//! the three re-ranked pages at any diversity level.

use std::collections::{HashMap, HashSet};

use crate::clustering::ClusterModel;
use crate::corpus::Ratings;
use crate::ids::{MovieId, UserId};
use crate::recsys::{top_n, BaseModel, RecsysError, TopN};
use crate::rerank::{
    rerank_pages, DiversityLevel, RecPage, RerankError, SubsetPlan, DEFAULT_POOL_SIZE, PAGES,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Recsys(#[from] RecsysError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
}

#[derive(Debug, Clone)]
pub struct Engine {
    pub model: BaseModel,
    pub clusters: ClusterModel,
    pub pool_size: usize,
    plan: SubsetPlan,
    /// Clustered movies in ascending id order; only these can be recommended.
    eligible: Vec<MovieId>,
    rated: HashMap<UserId, HashSet<MovieId>>,
}

/// Pages, the candidate count they were drawn from, and whether the candidates came from the
/// non-personalized fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub pages: Vec<RecPage>,
    pub pool: usize,
    pub fallback: bool,
}

impl Engine {
    /// `ratings` supplies the movies each user has already rated, which are never recommended.
    pub fn new(model: BaseModel, clusters: ClusterModel, ratings: &Ratings) -> Self {
        let mut rated: HashMap<UserId, HashSet<MovieId>> = HashMap::new();
        for e in ratings.events() {
            rated.entry(e.user_id).or_default().insert(e.movie_id);
        }
        let eligible = clusters.assignment.keys().copied().collect();
        Self {
            plan: SubsetPlan::new(&clusters),
            model,
            clusters,
            pool_size: DEFAULT_POOL_SIZE,
            eligible,
            rated,
        }
    }

    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size;
        self
    }

    pub fn plan(&self) -> &SubsetPlan {
        &self.plan
    }

    pub fn rated(&self, user: UserId) -> Option<&HashSet<MovieId>> {
        self.rated.get(&user)
    }

    /// The best `n` unrated clustered movies by base score.
    pub fn top_picks(&self, user: UserId, n: usize) -> Result<TopN, EngineError> {
        let empty = HashSet::new();
        let exclude = self.rated.get(&user).unwrap_or(&empty);
        Ok(top_n(
            &self.model,
            user,
            n,
            exclude,
            self.eligible.iter().copied(),
        )?)
    }

    /// Re-ranks the top `pool_size` candidates. If that leaves a page degraded, the pool doubles
    /// until every page fills or the catalog runs out. Pages fill in score order, so whenever the
    /// first pool suffices the result is exactly what that pool alone gives.
    pub fn recommend(
        &self,
        user: UserId,
        level: DiversityLevel,
    ) -> Result<Recommendation, EngineError> {
        let subset = self.plan.subset(level);
        let first = self.top_picks(user, self.pool_size)?;
        let pages = rerank_pages(&first.candidates, &self.clusters, &subset, level)?;
        let mut rec = Recommendation {
            pool: first.candidates.len(),
            pages,
            fallback: first.fallback,
        };
        if first.short || !rec.pages.iter().any(|p| p.degraded) {
            return Ok(rec);
        }
        let all = self.top_picks(user, self.eligible.len())?.candidates;
        let mut n = self.pool_size;
        while rec.pages.iter().any(|p| p.degraded) && n < all.len() {
            n = (2 * n).min(all.len());
            rec.pages = rerank_pages(&all[..n], &self.clusters, &subset, level)?;
            rec.pool = n;
        }
        Ok(rec)
    }

    /// One of the re-ranked pages, 1-based.
    pub fn page(
        &self,
        user: UserId,
        level: DiversityLevel,
        page: usize,
    ) -> Result<(RecPage, bool), EngineError> {
        if !(1..=PAGES).contains(&page) {
            return Err(RerankError::PageOutOfRange(page).into());
        }
        let rec = self.recommend(user, level)?;
        let fallback = rec.fallback;
        let p = rec
            .pages
            .into_iter()
            .nth(page - 1)
            .ok_or(RerankError::EmptyPool)?;
        Ok((p, fallback))
    }
}
