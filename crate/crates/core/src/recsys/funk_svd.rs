//! Biased matrix factorization trained one feature at a time (Funk SVD).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Observation, RecsysError};
use crate::corpus::Rating;
use crate::ids::{MovieId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunkSvdConfig {
    pub features: usize,
    pub epochs_per_feature: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    /// Starting value of every factor entry.
    pub initial_value: f64,
    pub seed: u64,
}

impl Default for FunkSvdConfig {
    fn default() -> Self {
        Self {
            features: 50,
            epochs_per_feature: 125,
            learning_rate: 0.005,
            regularization: 0.02,
            initial_value: 0.1,
            seed: 0,
        }
    }
}

/// Trained factors. Users and movies are stored sorted so lookups are binary searches; factor
/// matrices are row-major with `features` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub features: usize,
    pub global_mean: f64,
    pub users: Vec<UserId>,
    pub movies: Vec<MovieId>,
    pub user_bias: Vec<f64>,
    pub movie_bias: Vec<f64>,
    pub user_factors: Vec<f64>,
    pub movie_factors: Vec<f64>,
}

/// Per-epoch training loss (mean squared error accumulated during the pass), one row per
/// feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub epoch_mse: Vec<Vec<f64>>,
}

impl FactorModel {
    pub fn train(
        observations: &[Observation],
        config: &FunkSvdConfig,
    ) -> Result<Self, RecsysError> {
        Self::train_traced(observations, config).map(|(m, _)| m)
    }

    pub fn train_traced(
        observations: &[Observation],
        config: &FunkSvdConfig,
    ) -> Result<(Self, TrainingTrace), RecsysError> {
        if observations.is_empty() {
            return Err(RecsysError::EmptyRatings);
        }
        let mut users: Vec<UserId> = observations.iter().map(|o| o.user_id).collect();
        users.sort_unstable();
        users.dedup();
        let mut movies: Vec<MovieId> = observations.iter().map(|o| o.movie_id).collect();
        movies.sort_unstable();
        movies.dedup();

        let triples: Vec<(usize, usize, f64)> = observations
            .iter()
            .map(|o| {
                (
                    users.binary_search(&o.user_id).unwrap(),
                    movies.binary_search(&o.movie_id).unwrap(),
                    o.value,
                )
            })
            .collect();
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

        let f_count = config.features;
        let global_mean = triples.iter().map(|t| t.2).sum::<f64>() / triples.len() as f64;
        let mut user_bias = vec![0.0; users.len()];
        let mut movie_bias = vec![0.0; movies.len()];
        let mut pu = vec![config.initial_value; users.len() * f_count];
        let mut qi = vec![config.initial_value; movies.len() * f_count];
        // Contribution of already-finished features to each observation.
        let mut done = vec![0.0; triples.len()];
        let lr = config.learning_rate;
        let reg = config.regularization;
        let mut trace = TrainingTrace::default();

        for f in 0..f_count {
            let mut losses = Vec::with_capacity(config.epochs_per_feature);
            for epoch in 0..config.epochs_per_feature {
                let mut sse = 0.0;
                for &k in &order {
                    let (u, i, r) = triples[k];
                    let (pf, qf) = (u * f_count + f, i * f_count + f);
                    let pred =
                        global_mean + user_bias[u] + movie_bias[i] + done[k] + pu[pf] * qi[qf];
                    let err = r - pred;
                    sse += err * err;
                    user_bias[u] += lr * (err - reg * user_bias[u]);
                    movie_bias[i] += lr * (err - reg * movie_bias[i]);
                    let (p, q) = (pu[pf], qi[qf]);
                    pu[pf] += lr * (err * q - reg * p);
                    qi[qf] += lr * (err * p - reg * q);
                }
                if !sse.is_finite() {
                    return Err(RecsysError::Diverged { feature: f, epoch });
                }
                losses.push(sse / triples.len() as f64);
            }
            for (k, &(u, i, _)) in triples.iter().enumerate() {
                done[k] += pu[u * f_count + f] * qi[i * f_count + f];
            }
            trace.epoch_mse.push(losses);
        }

        let model = Self {
            features: f_count,
            global_mean,
            users,
            movies,
            user_bias,
            movie_bias,
            user_factors: pu,
            movie_factors: qi,
        };
        if !model.is_finite() {
            return Err(RecsysError::Diverged {
                feature: f_count.saturating_sub(1),
                epoch: config.epochs_per_feature,
            });
        }
        Ok((model, trace))
    }

    fn is_finite(&self) -> bool {
        [
            &self.user_bias,
            &self.movie_bias,
            &self.user_factors,
            &self.movie_factors,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn knows_user(&self, user: UserId) -> bool {
        self.users.binary_search(&user).is_ok()
    }

    pub fn user_vector(&self, user: UserId) -> Option<&[f64]> {
        let u = self.users.binary_search(&user).ok()?;
        Some(&self.user_factors[u * self.features..(u + 1) * self.features])
    }

    pub fn movie_vector(&self, movie: MovieId) -> Option<&[f64]> {
        let i = self.movies.binary_search(&movie).ok()?;
        Some(&self.movie_factors[i * self.features..(i + 1) * self.features])
    }

    /// Unclamped `mean + b_u + b_i + p_u . q_i`; unknown movies contribute only the user's bias.
    /// `None` for unknown users.
    pub fn raw_score(&self, user: UserId, movie: MovieId) -> Option<f64> {
        let u = self.users.binary_search(&user).ok()?;
        let mut score = self.global_mean + self.user_bias[u];
        if let Ok(i) = self.movies.binary_search(&movie) {
            let p = &self.user_factors[u * self.features..(u + 1) * self.features];
            let q = &self.movie_factors[i * self.features..(i + 1) * self.features];
            score += self.movie_bias[i] + p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        }
        Some(score)
    }

    /// [`FactorModel::raw_score`] clamped to the rating scale.
    pub fn predict(&self, user: UserId, movie: MovieId) -> Option<f64> {
        self.raw_score(user, movie)
            .map(|s| s.clamp(Rating::MIN, Rating::MAX))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(users: u32, movies: u32) -> Vec<Observation> {
        let mut out = Vec::new();
        for u in 0..users {
            for m in 0..movies {
                let a = 0.5 + (u % 5) as f64 * 0.2;
                let b = -1.0 + (m % 7) as f64 * 0.3;
                out.push(Observation {
                    user_id: UserId(u),
                    movie_id: MovieId(m),
                    value: 3.0 + a * b,
                });
            }
        }
        out
    }

    fn rmse(model: &FactorModel, data: &[Observation]) -> f64 {
        let sse: f64 = data
            .iter()
            .map(|o| (model.predict(o.user_id, o.movie_id).unwrap() - o.value).powi(2))
            .sum();
        (sse / data.len() as f64).sqrt()
    }

    #[test]
    fn rank_one_fits() {
        // Large enough that each factor sees plenty of gradient per epoch.
        let data = rank_one(60, 100);
        let config = FunkSvdConfig {
            features: 5,
            ..Default::default()
        };
        let model = FactorModel::train(&data, &config).unwrap();
        assert!(rmse(&model, &data) < 0.05, "rmse {}", rmse(&model, &data));
    }

    #[test]
    fn same_seed_same_bits() {
        let data = rank_one(10, 12);
        let config = FunkSvdConfig {
            features: 4,
            epochs_per_feature: 20,
            seed: 7,
            ..Default::default()
        };
        let a = FactorModel::train(&data, &config).unwrap();
        let b = FactorModel::train(&data, &config).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.user_factors), bits(&b.user_factors));
        assert_eq!(bits(&a.movie_factors), bits(&b.movie_factors));
        assert_eq!(bits(&a.user_bias), bits(&b.user_bias));
    }

    #[test]
    fn loss_non_increasing_within_feature() {
        let data = rank_one(15, 20);
        let config = FunkSvdConfig {
            features: 3,
            epochs_per_feature: 60,
            learning_rate: 0.001,
            seed: 3,
            ..Default::default()
        };
        let (_, trace) = FactorModel::train_traced(&data, &config).unwrap();
        for (f, losses) in trace.epoch_mse.iter().enumerate() {
            for w in losses.windows(2) {
                assert!(w[1] <= w[0], "feature {f}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn clamps_to_scale() {
        let model = FactorModel {
            features: 1,
            global_mean: 4.0,
            users: vec![UserId(1)],
            movies: vec![MovieId(1)],
            user_bias: vec![0.5],
            movie_bias: vec![0.2],
            user_factors: vec![1.0],
            movie_factors: vec![1.0],
        };
        assert!((model.raw_score(UserId(1), MovieId(1)).unwrap() - 5.7).abs() < 1e-12);
        assert_eq!(model.predict(UserId(1), MovieId(1)), Some(5.0));
    }

    #[test]
    fn divergence_detected() {
        let data = rank_one(5, 5);
        let config = FunkSvdConfig {
            features: 2,
            epochs_per_feature: 50,
            learning_rate: 50.0,
            ..Default::default()
        };
        assert!(matches!(
            FactorModel::train(&data, &config),
            Err(RecsysError::Diverged { .. })
        ));
    }
}
