//! Shared fixtures for the benchmarks in `benches/`.

use divrec_core::clustering::{kmeans_genome, KMeansConfig};
use divrec_core::recsys::TrainConfig;
use divrec_core::synth::{generate, SynthConfig};
use divrec_core::{Algorithm, BaseModel, Engine, Genome};

/// A FunkSVD engine over a planted-cluster corpus of `movies` movies.
pub fn engine(movies: usize, seed: u64) -> (Engine, Genome) {
    let s = generate(
        &SynthConfig {
            movies,
            users: 300,
            ..Default::default()
        },
        seed,
    );
    let mut clusters = kmeans_genome(
        &s.corpus.genome,
        &KMeansConfig {
            seed,
            ..Default::default()
        },
    )
    .expect("synthetic genome clusters");
    clusters.count_ratings(&s.corpus.ratings);
    let model = BaseModel::train(
        Algorithm::Wizard,
        &s.corpus.ratings,
        &TrainConfig::default(),
    )
    .expect("trains");
    (
        Engine::new(model, clusters, &s.corpus.ratings),
        s.corpus.genome,
    )
}
