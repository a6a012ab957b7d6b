//! Shared server state: the model snapshot, live sessions, and the stores fed by user actions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use divrec_core::clustering::ClusterModel;
use divrec_core::corpus::{load_movies, load_ratings, Ratings, MOVIES_FILE, RATINGS_FILE};
use divrec_core::diversity::read_cohorts;
use divrec_core::experiment::Enrollment;
use divrec_core::experiment::{read_events, EventKind, InteractionEvent};
use divrec_core::{Arm, BaseModel, DiversityLevel, Engine, Movie, MovieId, RatingEvent, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tokio::sync::OwnedMutexGuard;

use crate::config::{ServiceConfig, CLUSTERS_FILE, COHORTS_FILE, ENROLLMENT_FILE, MODEL_FILE};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("model directory {0} has neither {ENROLLMENT_FILE} nor {COHORTS_FILE}")]
    NoEnrollment(PathBuf),
    #[error("event log {path}: {message}")]
    EventLog { path: PathBuf, message: String },
}

fn artifact<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> LoadError + '_ {
    move |e| LoadError::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Everything derived from a training run. Immutable; a retrain builds a new one and swaps it in.
#[derive(Debug)]
pub struct Snapshot {
    pub engine: Engine,
    pub enrollment: Enrollment,
    pub movies: BTreeMap<MovieId, Movie>,
}

impl Snapshot {
    pub fn new(engine: Engine, enrollment: Enrollment, movies: BTreeMap<MovieId, Movie>) -> Self {
        Self {
            engine,
            enrollment,
            movies,
        }
    }

    /// Loads the model, clusters and enrollment from the model directory, and movies and
    /// ratings from the data directory.
    pub fn load(config: &ServiceConfig) -> Result<Self, LoadError> {
        let dir = &config.model_dir;
        let model_path = dir.join(MODEL_FILE);
        let model = BaseModel::load(&model_path).map_err(artifact(&model_path))?;
        let clusters_path = dir.join(CLUSTERS_FILE);
        let clusters = ClusterModel::load(&clusters_path).map_err(artifact(&clusters_path))?;
        let enrollment = load_enrollment(dir, config.arm_seed)?;
        let ratings_path = config.data_dir.join(RATINGS_FILE);
        let ratings =
            Ratings::from_events(load_ratings(&ratings_path).map_err(artifact(&ratings_path))?);
        let movies_path = config.data_dir.join(MOVIES_FILE);
        let movies = if movies_path.exists() {
            load_movies(&movies_path).map_err(artifact(&movies_path))?
        } else {
            BTreeMap::new()
        };
        let engine = Engine::new(model, clusters, &ratings).with_pool_size(config.pool_size);
        Ok(Self::new(engine, enrollment, movies))
    }

    pub fn title(&self, movie: MovieId) -> Option<&str> {
        self.movies.get(&movie).map(|m| m.title.as_str())
    }

    /// Movies a user may act on. Without a catalog only clustered movies are known.
    pub fn knows_movie(&self, movie: MovieId) -> bool {
        self.movies.contains_key(&movie) || self.engine.clusters.cluster_of(movie).is_some()
    }
}

fn load_enrollment(dir: &Path, arm_seed: u64) -> Result<Enrollment, LoadError> {
    let path = dir.join(ENROLLMENT_FILE);
    if path.exists() {
        return Enrollment::read_csv(&path).map_err(artifact(&path));
    }
    let cohorts = dir.join(COHORTS_FILE);
    if cohorts.exists() {
        let members = read_cohorts(&cohorts).map_err(artifact(&cohorts))?;
        return Ok(Enrollment::new(&members, arm_seed));
    }
    Err(LoadError::NoEnrollment(dir.to_path_buf()))
}

/// Seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64)
    }
}

/// A clock that moves only when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        Self(AtomicI64::new(start))
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Append-only JSON-lines event log. Each event is written with a single `write_all` and
/// flushed before the request that caused it returns.
pub struct EventLog {
    sink: Mutex<Box<dyn Write + Send>>,
}

impl EventLog {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        Self {
            sink: Mutex::new(sink),
        }
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(Box::new(file)))
    }

    /// An in-memory log and a handle for reading it back.
    pub fn memory() -> (Self, MemoryLog) {
        let buf = MemoryLog::default();
        (Self::new(Box::new(buf.clone())), buf)
    }

    pub fn append(&self, event: &InteractionEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        sink.write_all(&line)?;
        sink.flush()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryLog(Arc<Mutex<Vec<u8>>>);

impl MemoryLog {
    pub fn events(&self) -> Vec<InteractionEvent> {
        let bytes = self.0.lock().unwrap().clone();
        read_events(bytes.as_slice()).expect("the service writes valid events")
    }

    pub fn line_count(&self) -> usize {
        self.0
            .lock()
            .unwrap()
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
    }
}

impl Write for MemoryLog {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Ratings received through the service, kept for the next training run.
#[derive(Debug, Default)]
pub struct RatingStore {
    events: Mutex<Vec<RatingEvent>>,
    /// Rows are appended in MovieLens `ratings.csv` layout.
    file: Option<PathBuf>,
}

impl RatingStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn appending_to(path: PathBuf) -> Self {
        Self {
            events: Mutex::default(),
            file: Some(path),
        }
    }

    pub fn add(&self, event: RatingEvent) -> io::Result<()> {
        let mut events = self.events.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(path) = &self.file {
            let fresh = !path.exists();
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file);
            if fresh {
                w.write_record(["userId", "movieId", "rating", "timestamp"])?;
            }
            w.write_record([
                event.user_id.to_string(),
                event.movie_id.to_string(),
                event.rating.to_string(),
                event.timestamp.to_string(),
            ])?;
            w.flush()?;
        }
        events.push(event);
        Ok(())
    }

    pub fn events(&self) -> Vec<RatingEvent> {
        self.events.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub token: String,
    pub user_id: UserId,
    pub arm: Arm,
    pub level: DiversityLevel,
    pub last_active: i64,
    /// Set once the session has ended by logout, expiry, or a newer login.
    pub closed: bool,
}

/// A locked session. Holding it serializes requests on the same token.
pub type SessionGuard = OwnedMutexGuard<SessionState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionLookup {
    Unknown,
    Expired,
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SessionState>>>>,
    /// Latest token per user; a new login ends the previous session.
    current: Mutex<HashMap<UserId, String>>,
    acknowledged: Mutex<HashSet<UserId>>,
    wishlists: Mutex<HashMap<UserId, HashSet<MovieId>>>,
    pub ratings: RatingStore,
    log: EventLog,
    clock: Arc<dyn Clock>,
    tokens: Mutex<ChaCha8Rng>,
    pub session_timeout_secs: i64,
}

impl AppState {
    pub fn new(
        snapshot: Snapshot,
        log: EventLog,
        ratings: RatingStore,
        clock: Arc<dyn Clock>,
        seed: Option<u64>,
    ) -> Self {
        let rng = match seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
            sessions: Mutex::default(),
            current: Mutex::default(),
            acknowledged: Mutex::default(),
            wishlists: Mutex::default(),
            ratings,
            log,
            clock,
            tokens: Mutex::new(rng),
            session_timeout_secs: divrec_core::experiment::DEFAULT_SESSION_TIMEOUT_SECS,
        }
    }

    pub fn with_session_timeout(mut self, secs: i64) -> Self {
        self.session_timeout_secs = secs;
        self
    }

    /// Builds the production state from a resolved config, replaying any existing event log so
    /// acknowledgments and wishlists survive a restart.
    pub fn open(config: &ServiceConfig) -> Result<Self, LoadError> {
        let snapshot = Snapshot::load(config)?;
        let log_path = config.event_log_path();
        let log_err = |message: String| LoadError::EventLog {
            path: log_path.clone(),
            message,
        };
        let history = match File::open(&log_path) {
            Ok(f) => read_events(BufReader::new(f)).map_err(|e| log_err(e.to_string()))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(log_err(e.to_string())),
        };
        let log = EventLog::open(&log_path).map_err(|e| log_err(e.to_string()))?;
        let state = Self::new(
            snapshot,
            log,
            RatingStore::appending_to(config.data_dir.join(RATINGS_FILE)),
            Arc::new(SystemClock),
            config.seed,
        )
        .with_session_timeout(config.session_timeout_secs);
        state.replay(&history);
        Ok(state)
    }

    fn replay(&self, history: &[InteractionEvent]) {
        let mut acked = self.acknowledged.lock().unwrap();
        let mut wishlists = self.wishlists.lock().unwrap();
        for e in history {
            match e.kind {
                EventKind::InfoAck => {
                    acked.insert(e.user_id);
                }
                EventKind::WishlistAdd { movie_id, .. } => {
                    wishlists.entry(e.user_id).or_default().insert(movie_id);
                }
                _ => {}
            }
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    /// Atomically replaces the model snapshot. Requests already running keep the old one.
    pub fn swap_snapshot(&self, next: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(next);
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    fn new_token(&self) -> String {
        let bytes: [u8; 16] = self.tokens.lock().unwrap().random();
        hex::encode(bytes)
    }

    /// Opens a session at the default level and returns it locked.
    pub async fn open_session(&self, user_id: UserId, arm: Arm) -> SessionGuard {
        let token = self.new_token();
        let session = Arc::new(tokio::sync::Mutex::new(SessionState {
            token: token.clone(),
            user_id,
            arm,
            level: DiversityLevel::SESSION_DEFAULT,
            last_active: self.now(),
            closed: false,
        }));
        let guard = session.clone().lock_owned().await;
        let previous = self.current.lock().unwrap().insert(user_id, token.clone());
        let mut sessions = self.sessions.lock().unwrap();
        if let Some(old) = previous {
            sessions.remove(&old);
        }
        sessions.insert(token, session);
        guard
    }

    /// Locks the session behind `token`, refreshing its activity time.
    pub async fn session(&self, token: &str) -> Result<SessionGuard, SessionLookup> {
        let entry = self.sessions.lock().unwrap().get(token).cloned();
        let mut guard = entry.ok_or(SessionLookup::Unknown)?.lock_owned().await;
        if guard.closed {
            return Err(SessionLookup::Unknown);
        }
        let now = self.now();
        if now - guard.last_active >= self.session_timeout_secs {
            guard.closed = true;
            self.forget(&guard);
            return Err(SessionLookup::Expired);
        }
        guard.last_active = now;
        Ok(guard)
    }

    pub fn close_session(&self, session: &mut SessionGuard) {
        session.closed = true;
        self.forget(session);
    }

    fn forget(&self, session: &SessionState) {
        self.sessions.lock().unwrap().remove(&session.token);
        let mut current = self.current.lock().unwrap();
        if current.get(&session.user_id) == Some(&session.token) {
            current.remove(&session.user_id);
        }
    }

    pub fn is_acknowledged(&self, user: UserId) -> bool {
        self.acknowledged.lock().unwrap().contains(&user)
    }

    pub fn acknowledge(&self, user: UserId) {
        self.acknowledged.lock().unwrap().insert(user);
    }

    /// Logs the addition and updates the set under one lock, so the log and the set cannot
    /// disagree about whether the movie was new. Returns that flag.
    pub fn wishlist_add(&self, session: &SessionState, movie: MovieId) -> io::Result<bool> {
        let mut lists = self.wishlists.lock().unwrap_or_else(|p| p.into_inner());
        let added = !lists
            .get(&session.user_id)
            .is_some_and(|s| s.contains(&movie));
        self.record(
            session,
            EventKind::WishlistAdd {
                movie_id: movie,
                added,
            },
        )?;
        lists.entry(session.user_id).or_default().insert(movie);
        Ok(added)
    }

    pub fn wishlist(&self, user: UserId) -> Vec<MovieId> {
        let mut v: Vec<_> = self
            .wishlists
            .lock()
            .unwrap()
            .get(&user)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        v.sort();
        v
    }

    /// Appends one event for `session`, stamped with the current time and its token.
    pub fn record(&self, session: &SessionState, kind: EventKind) -> io::Result<()> {
        let mut event = InteractionEvent::new(session.user_id, self.now(), kind);
        event.token = Some(session.token.clone());
        self.log.append(&event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use divrec_core::corpus::Rating;

    #[test]
    fn rating_store_appends_movielens_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.csv");
        let store = RatingStore::appending_to(path.clone());
        for (m, stars) in [(10, 4.5), (11, 1.0)] {
            store
                .add(RatingEvent {
                    user_id: UserId(7),
                    movie_id: MovieId(m),
                    rating: Rating::from_stars(stars).unwrap(),
                    timestamp: 100,
                })
                .unwrap();
        }
        let loaded = load_ratings(&path).unwrap();
        assert_eq!(loaded, store.events());
    }

    #[test]
    fn memory_log_round_trips() {
        let (log, mem) = EventLog::memory();
        log.append(&InteractionEvent::new(UserId(1), 5, EventKind::Login))
            .unwrap();
        assert_eq!(mem.line_count(), 1);
        assert_eq!(mem.events()[0].kind, EventKind::Login);
    }
}
