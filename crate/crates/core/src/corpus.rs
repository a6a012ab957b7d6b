//! Ingestion of the MovieLens CSV layout: ratings, movies, and the tag genome.
//!
//! The loaded [`Corpus`] is immutable. Ratings are kept as a latest-wins
//! training view: for each `(user, movie)` pair only the event with the
//! greatest timestamp survives, and among equal timestamps the row that
//! appears last in the file wins.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use tracing::warn;

use crate::ids::{MovieId, UserId};

/// Number of tags in the tag genome.
pub const GENOME_DIM: usize = 1128;

pub const RATINGS_FILE: &str = "ratings.csv";
pub const MOVIES_FILE: &str = "movies.csv";
pub const GENOME_SCORES_FILE: &str = "genome-scores.csv";
pub const GENOME_TAGS_FILE: &str = "genome-tags.csv";

const RATINGS_HEADER: [&str; 4] = ["userId", "movieId", "rating", "timestamp"];
const MOVIES_HEADER: [&str; 3] = ["movieId", "title", "genres"];
const SCORES_HEADER: [&str; 3] = ["movieId", "tagId", "relevance"];
const TAGS_HEADER: [&str; 2] = ["tagId", "tag"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: header {found:?} does not match expected {expected:?}", path.display())]
    Header {
        path: PathBuf,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("{}:{line}: {message}", path.display())]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("genome dimension mismatch: expected {expected} tags, found {found}")]
    GenomeDimension { expected: usize, found: usize },
    #[error("invalid genome vector for movie {movie}: {message}")]
    InvalidVector { movie: MovieId, message: String },
    #[error("{source_file} references unknown movie {movie}")]
    UnknownMovie {
        source_file: &'static str,
        movie: MovieId,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// A rating on the half-star grid `0.5, 1.0, ..., 5.0`, stored as a count of half stars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rating(u8);

#[derive(Debug, Clone, PartialEq, Error)]
#[error("rating {0} off half-star grid")]
pub struct OffGridRating(pub f64);

impl Rating {
    pub const MIN: f64 = 0.5;
    pub const MAX: f64 = 5.0;

    pub fn from_stars(stars: f64) -> Result<Self, OffGridRating> {
        let halves = stars * 2.0;
        if !halves.is_finite() || halves.fract() != 0.0 || !(1.0..=10.0).contains(&halves) {
            return Err(OffGridRating(stars));
        }
        Ok(Self(halves as u8))
    }

    pub fn from_half_stars(halves: u8) -> Result<Self, OffGridRating> {
        if (1..=10).contains(&halves) {
            Ok(Self(halves))
        } else {
            Err(OffGridRating(f64::from(halves) / 2.0))
        }
    }

    pub fn stars(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub fn half_stars(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.stars())
    }
}

impl Serialize for Rating {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.stars())
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Rating::from_stars(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingEvent {
    pub user_id: UserId,
    pub movie_id: MovieId,
    pub rating: Rating,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Movie {
    pub movie_id: MovieId,
    pub title: String,
    pub year: Option<i32>,
    pub genres: String,
}

impl Movie {
    pub fn new(movie_id: MovieId, title: impl Into<String>, genres: impl Into<String>) -> Self {
        let title = title.into();
        let year = parse_year(&title);
        Self {
            movie_id,
            title,
            year,
            genres: genres.into(),
        }
    }
}

/// Extracts a trailing `(YYYY)` from a MovieLens title.
fn parse_year(title: &str) -> Option<i32> {
    let t = title.trim_end();
    let inner = t.strip_suffix(')')?;
    let open = inner.rfind('(')?;
    let digits = &inner[open + 1..];
    if digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

/// One genome tag. `tag_id` is the dense position in `0..GENOME_DIM`; `source_id` is the id used
/// in the CSV files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagLabel {
    pub tag_id: usize,
    pub source_id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeVector {
    pub movie_id: MovieId,
    pub relevance: Vec<f64>,
}

impl AsRef<[f64]> for GenomeVector {
    fn as_ref(&self) -> &[f64] {
        &self.relevance
    }
}

/// Tag labels plus a dense relevance vector per movie.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Genome {
    tags: Vec<TagLabel>,
    vectors: BTreeMap<MovieId, GenomeVector>,
}

impl Genome {
    /// Builds a genome from already-dense vectors. Every vector must have `tags.len()` entries in
    /// `[0, 1]`.
    pub fn new(
        tags: Vec<TagLabel>,
        vectors: impl IntoIterator<Item = GenomeVector>,
    ) -> Result<Self> {
        let dim = tags.len();
        let mut map = BTreeMap::new();
        for v in vectors {
            if v.relevance.len() != dim {
                return Err(CorpusError::GenomeDimension {
                    expected: dim,
                    found: v.relevance.len(),
                });
            }
            if let Some(bad) = v.relevance.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(CorpusError::InvalidVector {
                    movie: v.movie_id,
                    message: format!("relevance {bad} outside [0,1]"),
                });
            }
            map.insert(v.movie_id, v);
        }
        Ok(Self { tags, vectors: map })
    }

    /// Tags named `tag0..tag{dim-1}` with source ids `1..=dim`, for synthetic data.
    pub fn numbered_tags(dim: usize) -> Vec<TagLabel> {
        (0..dim)
            .map(|i| TagLabel {
                tag_id: i,
                source_id: i as u32 + 1,
                name: format!("tag{i}"),
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self) -> &[TagLabel] {
        &self.tags
    }

    pub fn get(&self, movie: MovieId) -> Option<&GenomeVector> {
        self.vectors.get(&movie)
    }

    pub fn contains(&self, movie: MovieId) -> bool {
        self.vectors.contains_key(&movie)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vectors in ascending movie id order.
    pub fn iter(&self) -> impl Iterator<Item = &GenomeVector> {
        self.vectors.values()
    }

    pub fn movie_ids(&self) -> impl Iterator<Item = MovieId> + '_ {
        self.vectors.keys().copied()
    }
}

/// A genome movie that had fewer score rows than tags; the gaps were filled with `0.0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenomeFill {
    pub movie_id: MovieId,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenomeLoad {
    pub genome: Genome,
    pub fills: Vec<GenomeFill>,
}

/// Latest-wins training view of the rating log, sorted by `(user, movie)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ratings {
    events: Vec<RatingEvent>,
}

impl Ratings {
    /// Resolves duplicate `(user, movie)` pairs: the greatest timestamp wins, and among equal
    /// timestamps the later element of `events` wins.
    pub fn from_events(events: impl IntoIterator<Item = RatingEvent>) -> Self {
        let mut latest: HashMap<(UserId, MovieId), RatingEvent> = HashMap::new();
        for e in events {
            match latest.get(&(e.user_id, e.movie_id)) {
                Some(prev) if prev.timestamp > e.timestamp => {}
                _ => {
                    latest.insert((e.user_id, e.movie_id), e);
                }
            }
        }
        let mut events: Vec<_> = latest.into_values().collect();
        events.sort_by_key(|e| (e.user_id, e.movie_id));
        Self { events }
    }

    pub fn events(&self) -> &[RatingEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// All ratings of one user, sorted by movie id.
    pub fn for_user(&self, user: UserId) -> &[RatingEvent] {
        let start = self.events.partition_point(|e| e.user_id < user);
        let end = self.events.partition_point(|e| e.user_id <= user);
        &self.events[start..end]
    }

    /// Distinct users in ascending order.
    pub fn users(&self) -> Vec<UserId> {
        let mut out: Vec<UserId> = Vec::new();
        for e in &self.events {
            if out.last() != Some(&e.user_id) {
                out.push(e.user_id);
            }
        }
        out
    }

    pub fn movies(&self) -> BTreeSet<MovieId> {
        self.events.iter().map(|e| e.movie_id).collect()
    }

    /// Ratings with `timestamp >= since`.
    pub fn since(&self, since: i64) -> Ratings {
        Ratings {
            events: self
                .events
                .iter()
                .filter(|e| e.timestamp >= since)
                .copied()
                .collect(),
        }
    }

    /// Number of ratings per movie.
    pub fn counts_by_movie(&self) -> HashMap<MovieId, u64> {
        let mut out = HashMap::new();
        for e in &self.events {
            *out.entry(e.movie_id).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub movies: BTreeMap<MovieId, Movie>,
    pub ratings: Ratings,
    pub genome: Genome,
}

impl Corpus {
    /// Loads `ratings.csv`, `movies.csv`, `genome-scores.csv` and `genome-tags.csv` from `dir`
    /// and checks that every rated or genome-scored movie exists.
    pub fn load(dir: &Path) -> Result<(Self, Vec<GenomeFill>)> {
        let movies = load_movies(&dir.join(MOVIES_FILE))?;
        let ratings = Ratings::from_events(load_ratings(&dir.join(RATINGS_FILE))?);
        let GenomeLoad { genome, fills } =
            load_genome(&dir.join(GENOME_SCORES_FILE), &dir.join(GENOME_TAGS_FILE))?;
        let corpus = Corpus {
            movies,
            ratings,
            genome,
        };
        corpus.check_references()?;
        Ok((corpus, fills))
    }

    pub fn check_references(&self) -> Result<()> {
        if let Some(e) = self
            .ratings
            .events()
            .iter()
            .find(|e| !self.movies.contains_key(&e.movie_id))
        {
            return Err(CorpusError::UnknownMovie {
                source_file: RATINGS_FILE,
                movie: e.movie_id,
            });
        }
        if let Some(m) = self
            .genome
            .movie_ids()
            .find(|m| !self.movies.contains_key(m))
        {
            return Err(CorpusError::UnknownMovie {
                source_file: GENOME_SCORES_FILE,
                movie: m,
            });
        }
        Ok(())
    }

    /// Writes the corpus in the same layout [`Corpus::load`] reads.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_movies(&dir.join(MOVIES_FILE), self.movies.values())?;
        write_ratings(&dir.join(RATINGS_FILE), self.ratings.events())?;
        write_genome(
            &dir.join(GENOME_SCORES_FILE),
            &dir.join(GENOME_TAGS_FILE),
            &self.genome,
        )
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary::of(self)
    }
}

/// Upper bounds (exclusive) of the per-user rating-count histogram; the final bin is open.
pub const ACTIVITY_BIN_EDGES: [u64; 6] = [1, 20, 50, 100, 250, 500];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityBin {
    /// Inclusive lower bound on ratings per user.
    pub min_ratings: u64,
    /// Exclusive upper bound, `None` for the last bin.
    pub max_ratings: Option<u64>,
    pub users: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub users: u64,
    pub movies: u64,
    pub ratings: u64,
    pub genome_movies: u64,
    pub activity: Vec<ActivityBin>,
}

impl CorpusSummary {
    pub fn of(corpus: &Corpus) -> Self {
        let mut per_user: BTreeMap<UserId, u64> = BTreeMap::new();
        for e in corpus.ratings.events() {
            *per_user.entry(e.user_id).or_insert(0) += 1;
        }
        let mut activity: Vec<ActivityBin> = ACTIVITY_BIN_EDGES
            .iter()
            .enumerate()
            .map(|(i, &lo)| ActivityBin {
                min_ratings: lo,
                max_ratings: ACTIVITY_BIN_EDGES.get(i + 1).copied(),
                users: 0,
            })
            .collect();
        for &n in per_user.values() {
            let bin = ACTIVITY_BIN_EDGES.partition_point(|&lo| lo <= n) - 1;
            activity[bin].users += 1;
        }
        Self {
            users: per_user.len() as u64,
            movies: corpus.movies.len() as u64,
            ratings: corpus.ratings.len() as u64,
            genome_movies: corpus.genome.len() as u64,
            activity,
        }
    }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader.headers().map_err(|source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(CorpusError::Header {
            path: path.to_path_buf(),
            found: headers.iter().map(str::to_owned).collect(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(reader)
}

struct RowCtx<'a> {
    path: &'a Path,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, message: impl Into<String>) -> CorpusError {
        CorpusError::Row {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn field<T: std::str::FromStr>(
        &self,
        rec: &csv::StringRecord,
        idx: usize,
        name: &str,
    ) -> Result<T> {
        let raw = rec
            .get(idx)
            .ok_or_else(|| self.err(format!("missing field {name}")))?;
        raw.trim()
            .parse()
            .map_err(|_| self.err(format!("malformed {name} {raw:?}")))
    }
}

fn records(
    path: &Path,
    reader: csv::Reader<File>,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
    reader.into_records().map(move |r| {
        r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
            .map_err(|source| match source.position() {
                Some(pos) => CorpusError::Row {
                    path: path.to_path_buf(),
                    line: pos.line(),
                    message: source.to_string(),
                },
                None => CorpusError::Csv {
                    path: path.to_path_buf(),
                    source,
                },
            })
    })
}

/// Reads `userId,movieId,rating,timestamp` rows in file order. Duplicates are not resolved here;
/// see [`Ratings::from_events`].
pub fn load_ratings(path: &Path) -> Result<Vec<RatingEvent>> {
    let reader = open_csv(path, &RATINGS_HEADER)?;
    let mut out = Vec::new();
    for row in records(path, reader) {
        let (line, rec) = row?;
        let ctx = RowCtx { path, line };
        if rec.len() != 4 {
            return Err(ctx.err(format!("expected 4 fields, found {}", rec.len())));
        }
        let stars: f64 = ctx.field(&rec, 2, "rating")?;
        let rating = Rating::from_stars(stars).map_err(|e| ctx.err(e.to_string()))?;
        out.push(RatingEvent {
            user_id: UserId(ctx.field(&rec, 0, "userId")?),
            movie_id: MovieId(ctx.field(&rec, 1, "movieId")?),
            rating,
            timestamp: ctx.field(&rec, 3, "timestamp")?,
        });
    }
    Ok(out)
}

pub fn load_movies(path: &Path) -> Result<BTreeMap<MovieId, Movie>> {
    let reader = open_csv(path, &MOVIES_HEADER)?;
    let mut out = BTreeMap::new();
    for row in records(path, reader) {
        let (line, rec) = row?;
        let ctx = RowCtx { path, line };
        let id = MovieId(ctx.field(&rec, 0, "movieId")?);
        let title = rec.get(1).unwrap_or_default();
        let genres = rec.get(2).unwrap_or_default();
        if out.insert(id, Movie::new(id, title, genres)).is_some() {
            return Err(ctx.err(format!("duplicate movieId {id}")));
        }
    }
    Ok(out)
}

/// Loads the tag list and the long-format relevance table into dense vectors ordered as the tags
/// file lists them. Movies with missing rows are zero-filled and reported in
/// [`GenomeLoad::fills`].
pub fn load_genome(scores_path: &Path, tags_path: &Path) -> Result<GenomeLoad> {
    let reader = open_csv(tags_path, &TAGS_HEADER)?;
    let mut tags = Vec::new();
    let mut index_of: HashMap<u32, usize> = HashMap::new();
    for row in records(tags_path, reader) {
        let (line, rec) = row?;
        let ctx = RowCtx {
            path: tags_path,
            line,
        };
        let source_id: u32 = ctx.field(&rec, 0, "tagId")?;
        let tag_id = tags.len();
        if index_of.insert(source_id, tag_id).is_some() {
            return Err(ctx.err(format!("duplicate tagId {source_id}")));
        }
        tags.push(TagLabel {
            tag_id,
            source_id,
            name: rec.get(1).unwrap_or_default().to_owned(),
        });
    }
    if tags.len() != GENOME_DIM {
        return Err(CorpusError::GenomeDimension {
            expected: GENOME_DIM,
            found: tags.len(),
        });
    }

    let reader = open_csv(scores_path, &SCORES_HEADER)?;
    // Vectors start as NaN so unfilled slots can be counted after the scan.
    let mut dense: BTreeMap<MovieId, Vec<f64>> = BTreeMap::new();
    for row in records(scores_path, reader) {
        let (line, rec) = row?;
        let ctx = RowCtx {
            path: scores_path,
            line,
        };
        let movie = MovieId(ctx.field(&rec, 0, "movieId")?);
        let source_tag: u32 = ctx.field(&rec, 1, "tagId")?;
        let relevance: f64 = ctx.field(&rec, 2, "relevance")?;
        if !(0.0..=1.0).contains(&relevance) {
            return Err(ctx.err(format!("relevance {relevance} outside [0,1]")));
        }
        let &idx = index_of
            .get(&source_tag)
            .ok_or_else(|| ctx.err(format!("unknown tagId {source_tag}")))?;
        dense
            .entry(movie)
            .or_insert_with(|| vec![f64::NAN; GENOME_DIM])[idx] = relevance;
    }

    let mut fills = Vec::new();
    let mut vectors = Vec::with_capacity(dense.len());
    for (movie_id, mut relevance) in dense {
        let missing = relevance.iter().filter(|x| x.is_nan()).count();
        if missing > 0 {
            warn!(movie = %movie_id, missing, "genome vector incomplete; filling with 0.0");
            relevance
                .iter_mut()
                .filter(|x| x.is_nan())
                .for_each(|x| *x = 0.0);
            fills.push(GenomeFill { movie_id, missing });
        }
        vectors.push(GenomeVector {
            movie_id,
            relevance,
        });
    }
    Ok(GenomeLoad {
        genome: Genome::new(tags, vectors)?,
        fills,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CorpusError + '_ {
    move |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn flush(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_ratings<'a>(
    path: &Path,
    events: impl IntoIterator<Item = &'a RatingEvent>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RATINGS_HEADER).map_err(csv_err(path))?;
    for e in events {
        w.write_record([
            e.user_id.to_string(),
            e.movie_id.to_string(),
            e.rating.to_string(),
            e.timestamp.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    flush(path, w)
}

pub fn write_movies<'a>(path: &Path, movies: impl IntoIterator<Item = &'a Movie>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(MOVIES_HEADER).map_err(csv_err(path))?;
    for m in movies {
        w.write_record([m.movie_id.to_string().as_str(), &m.title, &m.genres])
            .map_err(csv_err(path))?;
    }
    flush(path, w)
}

pub fn write_genome(scores_path: &Path, tags_path: &Path, genome: &Genome) -> Result<()> {
    let mut w = writer(tags_path)?;
    w.write_record(TAGS_HEADER).map_err(csv_err(tags_path))?;
    for t in genome.tags() {
        w.write_record([t.source_id.to_string().as_str(), &t.name])
            .map_err(csv_err(tags_path))?;
    }
    flush(tags_path, w)?;

    let mut w = writer(scores_path)?;
    w.write_record(SCORES_HEADER)
        .map_err(csv_err(scores_path))?;
    for v in genome.iter() {
        let movie = v.movie_id.to_string();
        for (tag, x) in genome.tags().iter().zip(&v.relevance) {
            w.write_record([movie.as_str(), &tag.source_id.to_string(), &x.to_string()])
                .map_err(csv_err(scores_path))?;
        }
    }
    flush(scores_path, w)
}
