use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Observation, RecsysError};
use crate::ids::MovieId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovieStats {
    pub mean: f64,
    pub count: u64,
}

/// Non-personalized model: every user gets each movie's mean rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityModel {
    pub global_mean: f64,
    pub movies: BTreeMap<MovieId, MovieStats>,
}

impl PopularityModel {
    pub fn train(observations: &[Observation]) -> Result<Self, RecsysError> {
        if observations.is_empty() {
            return Err(RecsysError::EmptyRatings);
        }
        let mut sums: BTreeMap<MovieId, (f64, u64)> = BTreeMap::new();
        let mut total = 0.0;
        for o in observations {
            let e = sums.entry(o.movie_id).or_insert((0.0, 0));
            e.0 += o.value;
            e.1 += 1;
            total += o.value;
        }
        let movies = sums
            .into_iter()
            .map(|(m, (sum, count))| {
                (
                    m,
                    MovieStats {
                        mean: sum / count as f64,
                        count,
                    },
                )
            })
            .collect();
        Ok(Self {
            global_mean: total / observations.len() as f64,
            movies,
        })
    }

    /// Movie mean, or the global mean for unrated movies.
    pub fn predict(&self, movie: MovieId) -> f64 {
        self.movies.get(&movie).map_or(self.global_mean, |s| s.mean)
    }
}
