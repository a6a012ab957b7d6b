//! Intra-list diversity: the average pairwise Pearson correlation distance between genome
//! vectors, and the median split of users into diverse and non-diverse cohorts.

use std::fmt;
use std::fs::File;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::{Genome, Ratings};
use crate::ids::UserId;

#[derive(Debug, Error, PartialEq)]
pub enum DiversityError {
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pearson distance needs at least two coordinates")]
    TooShort,
    #[error("diversity undefined below two items")]
    TooFewItems,
    #[error("user {0} has fewer than two rated movies with genome vectors")]
    InsufficientHistory(UserId),
}

/// A vector with its mean removed, plus its centered sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct Centered {
    values: Vec<f64>,
    sum_sq: f64,
}

impl Centered {
    pub fn new(x: &[f64]) -> Self {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let values: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let sum_sq = values.iter().map(|v| v * v).sum();
        Self { values, sum_sq }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when the source vector is constant, so its correlation with anything is undefined.
    pub fn is_degenerate(&self) -> bool {
        self.sum_sq == 0.0
    }

    /// `1 - r`. Degenerate pairs are treated as uncorrelated and return `1.0`.
    ///
    /// Symmetric bit-for-bit: the cross sum multiplies coordinate pairs in index order and the
    /// normalizer is a commutative product.
    pub fn distance(&self, other: &Centered) -> PairDistance {
        if self.is_degenerate() || other.is_degenerate() {
            return PairDistance {
                value: 1.0,
                zero_variance: true,
            };
        }
        let cross: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        let r = (cross / (self.sum_sq * other.sum_sq).sqrt()).clamp(-1.0, 1.0);
        PairDistance {
            value: 1.0 - r,
            zero_variance: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDistance {
    pub value: f64,
    /// Set when either input had zero variance.
    pub zero_variance: bool,
}

/// Correlation distance `1 - r` in `[0, 2]`.
pub fn pearson_distance(a: &[f64], b: &[f64]) -> Result<PairDistance, DiversityError> {
    if a.len() != b.len() {
        return Err(DiversityError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(DiversityError::TooShort);
    }
    let d = Centered::new(a).distance(&Centered::new(b));
    if d.zero_variance {
        warn!("pearson distance on a zero-variance vector; treating pair as uncorrelated");
    }
    Ok(d)
}

/// Average pairwise distance of a list, in `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiversityScore(pub f64);

impl DiversityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for DiversityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Mean distance over all ordered pairs `(i, j)`, `i != j`.
pub fn list_diversity<V: AsRef<[f64]>>(items: &[V]) -> Result<DiversityScore, DiversityError> {
    if items.len() < 2 {
        return Err(DiversityError::TooFewItems);
    }
    let dim = items[0].as_ref().len();
    if let Some(bad) = items.iter().find(|v| v.as_ref().len() != dim) {
        return Err(DiversityError::LengthMismatch(dim, bad.as_ref().len()));
    }
    if dim < 2 {
        return Err(DiversityError::TooShort);
    }
    let centered: Vec<Centered> = items.iter().map(|v| Centered::new(v.as_ref())).collect();
    list_diversity_centered(&centered)
}

/// [`list_diversity`] over pre-centered vectors.
///
/// Pair distances are summed in sorted order so that the result does not depend on the order of
/// `items`.
pub fn list_diversity_centered<C: std::borrow::Borrow<Centered> + Sync>(
    items: &[C],
) -> Result<DiversityScore, DiversityError> {
    let n = items.len();
    if n < 2 {
        return Err(DiversityError::TooFewItems);
    }
    let mut pairs: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = items[i].borrow();
            items[i + 1..]
                .iter()
                .map(move |b| a.distance(b.borrow()).value)
        })
        .collect();
    pairs.sort_unstable_by(f64::total_cmp);
    let unordered_sum: f64 = pairs.iter().sum();
    let unordered_pairs = (n * (n - 1) / 2) as f64;
    Ok(DiversityScore(unordered_sum / unordered_pairs))
}

/// Diversity of every movie the user rated that has a genome vector.
pub fn user_history_diversity(
    user: UserId,
    ratings: &Ratings,
    genome: &Genome,
) -> Result<DiversityScore, DiversityError> {
    let centered: Vec<Centered> = ratings
        .for_user(user)
        .iter()
        .filter_map(|e| genome.get(e.movie_id))
        .map(|v| Centered::new(&v.relevance))
        .collect();
    if centered.len() < 2 {
        return Err(DiversityError::InsufficientHistory(user));
    }
    list_diversity_centered(&centered)
}

/// History diversity for every user; users with fewer than two eligible movies are returned
/// separately.
pub fn all_user_diversities(
    ratings: &Ratings,
    genome: &Genome,
) -> (Vec<(UserId, DiversityScore)>, Vec<UserId>) {
    let results: Vec<_> = ratings
        .users()
        .into_iter()
        .map(|u| (u, user_history_diversity(u, ratings, genome)))
        .collect();
    let mut scored = Vec::new();
    let mut excluded = Vec::new();
    for (u, r) in results {
        match r {
            Ok(s) => scored.push((u, s)),
            Err(_) => excluded.push(u),
        }
    }
    (scored, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cohort {
    #[serde(rename = "D")]
    Diverse,
    #[serde(rename = "ND")]
    NonDiverse,
}

impl Cohort {
    pub const ALL: [Cohort; 2] = [Cohort::Diverse, Cohort::NonDiverse];

    pub fn code(self) -> &'static str {
        match self {
            Cohort::Diverse => "D",
            Cohort::NonDiverse => "ND",
        }
    }

    /// Regression coding: diverse is 1, non-diverse is 2.
    pub fn ordinal(self) -> f64 {
        match self {
            Cohort::Diverse => 1.0,
            Cohort::NonDiverse => 2.0,
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "D" => Ok(Cohort::Diverse),
            "ND" => Ok(Cohort::NonDiverse),
            other => Err(format!("unknown cohort {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub user_id: UserId,
    pub score: f64,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSplit {
    /// Members in ascending `(score, user_id)` order; non-diverse users first.
    pub members: Vec<CohortMember>,
    /// Median of all scores.
    pub threshold: f64,
}

impl CohortSplit {
    pub fn cohort(&self, c: Cohort) -> impl Iterator<Item = &CohortMember> {
        self.members.iter().filter(move |m| m.cohort == c)
    }

    pub fn size(&self, c: Cohort) -> usize {
        self.cohort(c).count()
    }
}

/// Rank split at the median. Users are ordered by `(score, user_id)`; the lower `ceil(n/2)`
/// become non-diverse and the rest diverse.
pub fn split_cohorts(scores: &[(UserId, DiversityScore)]) -> CohortSplit {
    let mut ranked: Vec<(UserId, f64)> = scores.iter().map(|&(u, s)| (u, s.0)).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = ranked.len();
    let non_diverse = n.div_ceil(2);
    let threshold = match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => ranked[n / 2].1,
        _ => (ranked[n / 2 - 1].1 + ranked[n / 2].1) / 2.0,
    };
    let members = ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (user_id, score))| CohortMember {
            user_id,
            score,
            cohort: if rank < non_diverse {
                Cohort::NonDiverse
            } else {
                Cohort::Diverse
            },
        })
        .collect();
    CohortSplit { members, threshold }
}

pub fn write_cohorts(path: &Path, members: &[CohortMember]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["user_id", "score", "cohort"])?;
    for m in members {
        w.write_record([
            m.user_id.to_string(),
            m.score.to_string(),
            m.cohort.to_string(),
        ])?;
    }
    w.flush()
}

pub fn read_cohorts(path: &Path) -> io::Result<Vec<CohortMember>> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let mut out = Vec::new();
    for rec in r.deserialize::<(u32, f64, String)>() {
        let (user, score, cohort) = rec.map_err(io::Error::other)?;
        out.push(CohortMember {
            user_id: UserId(user),
            score,
            cohort: cohort.parse().map_err(io::Error::other)?,
        });
    }
    Ok(out)
}
