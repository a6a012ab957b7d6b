//! Item-item collaborative filtering with adjusted cosine similarity.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Observation;
use crate::ids::{MovieId, UserId};

pub const DEFAULT_NEIGHBORHOOD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub movie_id: MovieId,
    pub similarity: f64,
}

/// Per-movie truncated neighbor lists plus the user profiles needed to score against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSimilarityModel {
    pub neighborhood_size: usize,
    /// Neighbors sorted by similarity descending, ties by ascending movie id.
    pub neighbors: BTreeMap<MovieId, Vec<Neighbor>>,
    pub user_means: BTreeMap<UserId, f64>,
    /// Each user's ratings sorted by movie id.
    pub user_ratings: BTreeMap<UserId, Vec<(MovieId, f64)>>,
}

/// Outcome of an item-item prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ItemItemScore {
    Neighborhood(f64),
    /// No positively similar neighbor was rated by the user.
    UserMean(f64),
}

impl ItemSimilarityModel {
    /// Similarity between two movies is the cosine of their user-mean-centered rating vectors,
    /// restricted to users who rated both. Pairs without co-raters, or whose centered co-rating
    /// vectors have zero norm, get no edge.
    pub fn train(observations: &[Observation], neighborhood_size: usize) -> Self {
        let mut by_user: BTreeMap<UserId, Vec<(MovieId, f64)>> = BTreeMap::new();
        for o in observations {
            by_user
                .entry(o.user_id)
                .or_default()
                .push((o.movie_id, o.value));
        }
        for list in by_user.values_mut() {
            list.sort_by_key(|&(m, _)| m);
        }
        let user_means: BTreeMap<UserId, f64> = by_user
            .iter()
            .map(|(&u, list)| (u, list.iter().map(|x| x.1).sum::<f64>() / list.len() as f64))
            .collect();

        let movies: Vec<MovieId> = {
            let mut v: Vec<MovieId> = observations.iter().map(|o| o.movie_id).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let index = |m: MovieId| movies.binary_search(&m).expect("movie indexed");

        // Centered profiles, keyed by dense indices.
        let user_rows: Vec<Vec<(usize, f64)>> = by_user
            .iter()
            .map(|(u, list)| {
                let mu = user_means[u];
                list.iter().map(|&(m, r)| (index(m), r - mu)).collect()
            })
            .collect();
        let mut item_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); movies.len()];
        for (ui, row) in user_rows.iter().enumerate() {
            for &(mi, c) in row {
                item_cols[mi].push((ui, c));
            }
        }

        let n = movies.len();
        let neighbor_lists: Vec<Vec<Neighbor>> = (0..n)
            .into_par_iter()
            .map_init(
                || {
                    (
                        vec![0.0f64; n],
                        vec![0.0f64; n],
                        vec![0.0f64; n],
                        vec![false; n],
                    )
                },
                |(dot, ss_self, ss_other, seen), i| {
                    let mut touched = Vec::new();
                    for &(ui, ci) in &item_cols[i] {
                        for &(j, cj) in &user_rows[ui] {
                            if j == i {
                                continue;
                            }
                            if !seen[j] {
                                seen[j] = true;
                                touched.push(j);
                            }
                            dot[j] += ci * cj;
                            ss_self[j] += ci * ci;
                            ss_other[j] += cj * cj;
                        }
                    }
                    let mut out = Vec::with_capacity(touched.len());
                    for &j in &touched {
                        let norm = (ss_self[j] * ss_other[j]).sqrt();
                        if norm > 0.0 {
                            out.push(Neighbor {
                                movie_id: movies[j],
                                similarity: (dot[j] / norm).clamp(-1.0, 1.0),
                            });
                        }
                        dot[j] = 0.0;
                        ss_self[j] = 0.0;
                        ss_other[j] = 0.0;
                        seen[j] = false;
                    }
                    out.sort_by(|a, b| {
                        b.similarity
                            .total_cmp(&a.similarity)
                            .then(a.movie_id.cmp(&b.movie_id))
                    });
                    out.truncate(neighborhood_size);
                    out
                },
            )
            .collect();

        Self {
            neighborhood_size,
            neighbors: movies.iter().copied().zip(neighbor_lists).collect(),
            user_means,
            user_ratings: by_user,
        }
    }

    pub fn knows_user(&self, user: UserId) -> bool {
        self.user_means.contains_key(&user)
    }

    pub fn similarity(&self, a: MovieId, b: MovieId) -> Option<f64> {
        self.neighbors
            .get(&a)?
            .iter()
            .find(|n| n.movie_id == b)
            .map(|n| n.similarity)
    }

    /// `mean_u + sum(s_ij * (r_uj - mean_u)) / sum(s_ij)` over the movie's positively similar
    /// neighbors that the user rated. Returns `None` for unknown users.
    pub fn predict(&self, user: UserId, movie: MovieId) -> Option<ItemItemScore> {
        let mu = *self.user_means.get(&user)?;
        let rated = &self.user_ratings[&user];
        let mut num = 0.0;
        let mut den = 0.0;
        for n in self.neighbors.get(&movie).into_iter().flatten() {
            if n.similarity <= 0.0 {
                break;
            }
            if let Ok(k) = rated.binary_search_by_key(&n.movie_id, |&(m, _)| m) {
                num += n.similarity * (rated[k].1 - mu);
                den += n.similarity;
            }
        }
        Some(if den > 0.0 {
            ItemItemScore::Neighborhood(mu + num / den)
        } else {
            ItemItemScore::UserMean(mu)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(u: u32, m: u32, v: f64) -> Observation {
        Observation {
            user_id: UserId(u),
            movie_id: MovieId(m),
            value: v,
        }
    }

    #[test]
    fn identical_centered_vectors_have_similarity_one() {
        // users 1 and 2 rate movies 10 and 11 identically relative to their means
        let data = [
            obs(1, 10, 5.0),
            obs(1, 11, 5.0),
            obs(1, 12, 1.0),
            obs(2, 10, 2.0),
            obs(2, 11, 2.0),
            obs(2, 12, 5.0),
        ];
        let model = ItemSimilarityModel::train(&data, 10);
        let s = model.similarity(MovieId(10), MovieId(11)).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn no_common_rater_no_edge() {
        let data = [
            obs(1, 10, 4.0),
            obs(1, 11, 2.0),
            obs(2, 12, 3.0),
            obs(2, 13, 5.0),
        ];
        let model = ItemSimilarityModel::train(&data, 10);
        assert_eq!(model.similarity(MovieId(10), MovieId(12)), None);
        assert!(model.neighbors[&MovieId(10)]
            .iter()
            .all(|n| n.movie_id != MovieId(10)));
    }

    #[test]
    fn truncation_keeps_most_similar() {
        let mut data = Vec::new();
        for u in 0..6u32 {
            for m in 0..8u32 {
                let v = 0.5 + ((u * 7 + m * 3 + u * m) % 10) as f64 / 2.0;
                data.push(obs(u, m, v));
            }
        }
        let full = ItemSimilarityModel::train(&data, 100);
        let cut = ItemSimilarityModel::train(&data, 3);
        for (m, list) in &cut.neighbors {
            assert!(list.len() <= 3);
            assert_eq!(list.as_slice(), &full.neighbors[m][..list.len()]);
        }
    }

    #[test]
    fn unknown_user() {
        let model = ItemSimilarityModel::train(&[obs(1, 1, 3.0), obs(1, 2, 4.0)], 5);
        assert_eq!(model.predict(UserId(9), MovieId(1)), None);
    }
}
