use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::events::{sessionize, EventKind, InteractionEvent};
use super::DateWindow;
use crate::corpus::Genome;
use crate::diversity::{list_diversity_centered, Centered};
use crate::ids::{MovieId, UserId};

/// Per-user interaction metrics over one window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsRecord {
    pub rating_diversity: f64,
    pub slider_interactions: u64,
    pub page_view_freq: f64,
    pub login_frequency: f64,
    /// Minutes.
    pub total_length: f64,
    pub num_ratings: u64,
    pub wishlist_freq: f64,
    pub avg_rating: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Metric {
    RatingDiversity,
    SliderInteractions,
    PageViewFreq,
    LoginFrequency,
    TotalLength,
    NumRatings,
    WishlistFreq,
    AvgRating,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::RatingDiversity,
        Metric::SliderInteractions,
        Metric::PageViewFreq,
        Metric::LoginFrequency,
        Metric::TotalLength,
        Metric::NumRatings,
        Metric::WishlistFreq,
        Metric::AvgRating,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RatingDiversity => "ratingDiversity",
            Metric::SliderInteractions => "sliderInteractions",
            Metric::PageViewFreq => "pageViewFreq",
            Metric::LoginFrequency => "loginFrequency",
            Metric::TotalLength => "totalLength",
            Metric::NumRatings => "numRatings",
            Metric::WishlistFreq => "wishlistFreq",
            Metric::AvgRating => "avgRating",
        }
    }

    /// `None` only for the average rating of a user who rated nothing.
    pub fn value(self, r: &MetricsRecord) -> Option<f64> {
        match self {
            Metric::RatingDiversity => Some(r.rating_diversity),
            Metric::SliderInteractions => Some(r.slider_interactions as f64),
            Metric::PageViewFreq => Some(r.page_view_freq),
            Metric::LoginFrequency => Some(r.login_frequency),
            Metric::TotalLength => Some(r.total_length),
            Metric::NumRatings => Some(r.num_ratings as f64),
            Metric::WishlistFreq => Some(r.wishlist_freq),
            Metric::AvgRating => r.avg_rating,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// Metrics for one user from the events inside `window`. Ratings are taken from the log's
/// rating events; a movie rated more than once in the window counts once at its latest value.
/// Events belonging to other users are ignored.
pub fn compute_metrics(
    user: UserId,
    events: &[InteractionEvent],
    window: DateWindow,
    genome: &Genome,
    session_timeout_secs: i64,
) -> MetricsRecord {
    let in_window: Vec<InteractionEvent> = events
        .iter()
        .filter(|e| e.user_id == user && window.contains(e.timestamp))
        .cloned()
        .collect();
    let sessions = sessionize(&in_window, session_timeout_secs);
    if sessions.is_empty() {
        return MetricsRecord::default();
    }

    let mut logins = 0u64;
    let mut sliders = 0u64;
    let mut wishlist = 0u64;
    let mut unique_views = 0u64;
    let mut length_secs = 0i64;
    // Sessions come back in canonical order, so the last write per movie is the latest rating.
    let mut rated: BTreeMap<MovieId, u8> = BTreeMap::new();
    for s in &sessions {
        length_secs += s.duration_secs();
        let mut viewed = BTreeSet::new();
        for e in &s.events {
            match &e.kind {
                EventKind::Login => logins += 1,
                EventKind::SliderSet { .. } => sliders += 1,
                EventKind::WishlistAdd { added: true, .. } => wishlist += 1,
                EventKind::PageView { movie_id } => {
                    viewed.insert(*movie_id);
                }
                EventKind::Rating { movie_id, value } => {
                    rated.insert(*movie_id, value.half_stars());
                }
                _ => {}
            }
        }
        unique_views += viewed.len() as u64;
    }

    let n_sessions = sessions.len() as f64;
    let avg_rating = (!rated.is_empty()).then(|| {
        let halves: u64 = rated.values().map(|&h| u64::from(h)).sum();
        halves as f64 / 2.0 / rated.len() as f64
    });
    MetricsRecord {
        rating_diversity: rated_diversity(rated.keys().copied(), genome),
        slider_interactions: sliders,
        page_view_freq: unique_views as f64 / n_sessions,
        login_frequency: logins as f64 / (window.days() / 30.0),
        total_length: length_secs as f64 / 60.0,
        num_ratings: rated.len() as u64,
        wishlist_freq: wishlist as f64 / n_sessions,
        avg_rating,
    }
}

/// Eq. 1 diversity over rated movies that have genome vectors; 0 below two such movies.
pub(crate) fn rated_diversity(movies: impl Iterator<Item = MovieId>, genome: &Genome) -> f64 {
    let centered: Vec<Centered> = movies
        .filter_map(|m| genome.get(m))
        .map(|v| Centered::new(&v.relevance))
        .collect();
    list_diversity_centered(&centered).map_or(0.0, |d| d.0)
}

/// [`compute_metrics`] for every listed user, in parallel.
pub fn compute_all_metrics(
    users: &[UserId],
    events: &[InteractionEvent],
    window: DateWindow,
    genome: &Genome,
    session_timeout_secs: i64,
) -> BTreeMap<UserId, MetricsRecord> {
    let mut by_user: HashMap<UserId, Vec<InteractionEvent>> = HashMap::new();
    for e in events {
        by_user.entry(e.user_id).or_default().push(e.clone());
    }
    users
        .par_iter()
        .map(|&u| {
            let evs = by_user.get(&u).map_or(&[][..], Vec::as_slice);
            (
                u,
                compute_metrics(u, evs, window, genome, session_timeout_secs),
            )
        })
        .collect()
}
