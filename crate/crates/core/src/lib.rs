//! Diversity-controllable movie recommendation.
//!
//! Base collaborative-filtering recommenders produce a scored candidate pool which is re-ranked
//! by a greedy cluster-quota algorithm at one of five diversity levels. Around that sit the
//! pieces needed to run and analyze a between-subject field experiment: cohort splitting, arm
//! assignment, interaction logging, metric computation, and the statistical tests.

pub mod clustering;
pub mod corpus;
pub mod diversity;
pub mod engine;
pub mod experiment;
pub mod manifest;
pub mod recsys;
pub mod rerank;
pub mod stats;
pub mod synth;

mod ids;

pub use clustering::{ClusterModel, KMeansConfig};
pub use corpus::{
    Corpus, Genome, GenomeVector, Movie, Rating, RatingEvent, Ratings, TagLabel, GENOME_DIM,
};
pub use diversity::{Cohort, DiversityScore};
pub use engine::Engine;
pub use experiment::{Arm, InteractionEvent, MetricsRecord, Treatment};
pub use ids::{ClusterId, MovieId, UserId};
pub use recsys::{Algorithm, BaseModel, ScoredCandidate};
pub use rerank::{DiversityLevel, RecPage};
