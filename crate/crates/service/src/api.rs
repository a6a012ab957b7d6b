//! Request handlers. Every successful state-changing request appends exactly one event-log line,
//! written before any in-memory state changes so a failed write leaves nothing half-applied.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use divrec_core::corpus::Rating;
use divrec_core::diversity::Cohort;
use divrec_core::experiment::EventKind;
use divrec_core::rerank::{RecPage, PAGES, PAGE_SIZE};
use divrec_core::{ClusterId, DiversityLevel, MovieId, RatingEvent, Treatment, UserId};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::{AppState, Snapshot};

pub const BROAD_CAROUSEL_TITLE: &str = "Broad Recommendations";
pub const TOP_PICKS_TITLE: &str = "Top Picks";

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/session", post(create_session))
        .route("/ack", post(acknowledge))
        .route("/logout", post(logout))
        .route("/home", get(home))
        .route("/broad", get(broad))
        .route("/level", post(set_level))
        .route("/rating", post(rate))
        .route("/wishlist", post(wishlist))
        .route("/event", post(client_event))
        .with_state(state)
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub movie_id: MovieId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterId>,
}

#[derive(Debug, Deserialize)]
pub struct SessionRequest {
    pub user_id: UserId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResponse {
    pub token: String,
    /// e.g. `ND-BRC_DS`.
    pub arm: String,
    pub cohort: Cohort,
    pub treatment: Treatment,
    pub level: DiversityLevel,
    /// Present on every login until the user acknowledges it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_message: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct TokenBody {
    pub token: String,
}

#[derive(Debug, Deserialize)]
pub struct TokenQuery {
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carousel {
    pub title: String,
    pub items: Vec<Item>,
    /// Whether the slider page is reachable from this carousel.
    pub adjustable: bool,
    /// Current-level indicator, shown only where the level can be adjusted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<DiversityLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeResponse {
    pub treatment: Treatment,
    pub top_picks: Carousel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broad: Option<Carousel>,
    /// The user is unknown to the model and sees popularity-based picks.
    pub fallback: bool,
}

#[derive(Debug, Deserialize)]
pub struct BroadQuery {
    pub token: String,
    #[serde(default = "first_page")]
    pub page: usize,
}

fn first_page() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadResponse {
    pub page_index: usize,
    pub pages: usize,
    pub level: DiversityLevel,
    pub adjustable: bool,
    /// Cluster constraints were relaxed to fill the page.
    pub degraded: bool,
    pub fallback: bool,
    pub items: Vec<Item>,
}

#[derive(Debug, Deserialize)]
pub struct LevelRequest {
    pub token: String,
    pub level: i64,
}

#[derive(Debug, Deserialize)]
pub struct RatingRequest {
    pub token: String,
    pub movie_id: MovieId,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingResponse {
    pub movie_id: MovieId,
    pub value: Rating,
}

#[derive(Debug, Deserialize)]
pub struct WishlistRequest {
    pub token: String,
    pub movie_id: MovieId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishlistResponse {
    pub movie_id: MovieId,
    /// False when the movie was already on the wishlist.
    pub added: bool,
    pub size: usize,
}

#[derive(Debug, Deserialize)]
pub struct EventRequest {
    pub token: String,
    #[serde(flatten)]
    pub event: ClientEvent,
}

/// Interaction events the client reports on its own.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientEvent {
    PageView { movie_id: MovieId },
    CarouselClick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logged {
    pub logged: bool,
}

const LOGGED: Logged = Logged { logged: true };

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SessionRequest>,
) -> ApiResult<SessionResponse> {
    let arm = state
        .snapshot()
        .enrollment
        .arm(req.user_id)
        .map_err(|_| ApiError::NotFound(format!("user {} is not enrolled", req.user_id)))?;
    let mut session = state.open_session(req.user_id, arm).await;
    if let Err(e) = state.record(&session, EventKind::Login) {
        state.close_session(&mut session);
        return Err(e.into());
    }
    Ok(Json(SessionResponse {
        token: session.token.clone(),
        arm: arm.to_string(),
        cohort: arm.cohort,
        treatment: arm.treatment,
        level: session.level,
        info_message: (!state.is_acknowledged(req.user_id)).then(|| arm.treatment.info_message()),
    }))
}

async fn acknowledge(
    State(state): State<Arc<AppState>>,
    Json(req): Json<TokenBody>,
) -> ApiResult<Logged> {
    let session = state.session(&req.token).await?;
    state.record(&session, EventKind::InfoAck)?;
    state.acknowledge(session.user_id);
    Ok(Json(LOGGED))
}

async fn logout(
    State(state): State<Arc<AppState>>,
    Json(req): Json<TokenBody>,
) -> ApiResult<Logged> {
    let mut session = state.session(&req.token).await?;
    state.record(&session, EventKind::Logout)?;
    state.close_session(&mut session);
    Ok(Json(LOGGED))
}

async fn home(
    State(state): State<Arc<AppState>>,
    Query(q): Query<TokenQuery>,
) -> ApiResult<HomeResponse> {
    let session = state.session(&q.token).await?;
    let snapshot = state.snapshot();
    let (user, treatment, level) = (session.user_id, session.arm.treatment, session.level);
    drop(session);
    blocking(move || {
        let picks = snapshot.engine.top_picks(user, PAGE_SIZE)?;
        let top_picks = Carousel {
            title: TOP_PICKS_TITLE.to_string(),
            items: picks
                .candidates
                .iter()
                .map(|c| item(&snapshot, c.movie_id, c.score, None))
                .collect(),
            adjustable: false,
            level: None,
        };
        let broad = match treatment {
            Treatment::Control => None,
            Treatment::Brc | Treatment::BrcDs => {
                let level = carousel_level(treatment, level);
                let (page, _) = snapshot.engine.page(user, level, 1)?;
                Some(Carousel {
                    title: BROAD_CAROUSEL_TITLE.to_string(),
                    items: page_items(&snapshot, &page),
                    adjustable: treatment.has_slider(),
                    level: treatment.has_slider().then_some(level),
                })
            }
        };
        Ok(HomeResponse {
            treatment,
            top_picks,
            broad,
            fallback: picks.fallback,
        })
    })
    .await
}

async fn broad(
    State(state): State<Arc<AppState>>,
    Query(q): Query<BroadQuery>,
) -> ApiResult<BroadResponse> {
    let session = state.session(&q.token).await?;
    let treatment = session.arm.treatment;
    if !treatment.has_broad_carousel() {
        return Err(ApiError::Forbidden(
            "broad recommendations are not available in this arm",
        ));
    }
    let level = carousel_level(treatment, session.level);
    let user = session.user_id;
    drop(session);
    let snapshot = state.snapshot();
    blocking(move || broad_page(&snapshot, user, treatment, level, q.page)).await
}

async fn set_level(
    State(state): State<Arc<AppState>>,
    Json(req): Json<LevelRequest>,
) -> ApiResult<BroadResponse> {
    let mut session = state.session(&req.token).await?;
    let treatment = session.arm.treatment;
    if !treatment.has_slider() {
        return Err(ApiError::Forbidden(
            "the diversity slider is not available in this arm",
        ));
    }
    let level = DiversityLevel::new(req.level).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let snapshot = state.snapshot();
    let user = session.user_id;
    // Compute before logging so a failed re-rank leaves neither a log line nor a level change.
    let page = blocking(move || broad_page(&snapshot, user, treatment, level, 1)).await?;
    state.record(&session, EventKind::SliderSet { level: level.get() })?;
    session.level = level;
    Ok(page)
}

async fn rate(
    State(state): State<Arc<AppState>>,
    Json(req): Json<RatingRequest>,
) -> ApiResult<RatingResponse> {
    let session = state.session(&req.token).await?;
    known_movie(&state, req.movie_id)?;
    let value = Rating::from_stars(req.value).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    state.record(
        &session,
        EventKind::Rating {
            movie_id: req.movie_id,
            value,
        },
    )?;
    state.ratings.add(RatingEvent {
        user_id: session.user_id,
        movie_id: req.movie_id,
        rating: value,
        timestamp: state.now(),
    })?;
    Ok(Json(RatingResponse {
        movie_id: req.movie_id,
        value,
    }))
}

async fn wishlist(
    State(state): State<Arc<AppState>>,
    Json(req): Json<WishlistRequest>,
) -> ApiResult<WishlistResponse> {
    let session = state.session(&req.token).await?;
    known_movie(&state, req.movie_id)?;
    let added = state.wishlist_add(&session, req.movie_id)?;
    Ok(Json(WishlistResponse {
        movie_id: req.movie_id,
        added,
        size: state.wishlist(session.user_id).len(),
    }))
}

async fn client_event(
    State(state): State<Arc<AppState>>,
    Json(req): Json<EventRequest>,
) -> ApiResult<Logged> {
    let session = state.session(&req.token).await?;
    let kind = match req.event {
        ClientEvent::PageView { movie_id } => {
            known_movie(&state, movie_id)?;
            EventKind::PageView { movie_id }
        }
        ClientEvent::CarouselClick => {
            let treatment = session.arm.treatment;
            if !treatment.has_broad_carousel() {
                return Err(ApiError::Forbidden(
                    "there is no broad carousel in this arm",
                ));
            }
            EventKind::CarouselClick { treatment }
        }
    };
    state.record(&session, kind)?;
    Ok(Json(LOGGED))
}

/// BRC always shows the broadest level; BRC_DS shows the session's level.
fn carousel_level(treatment: Treatment, session_level: DiversityLevel) -> DiversityLevel {
    if treatment.has_slider() {
        session_level
    } else {
        DiversityLevel::BROADEST
    }
}

fn broad_page(
    snapshot: &Snapshot,
    user: UserId,
    treatment: Treatment,
    level: DiversityLevel,
    page: usize,
) -> Result<BroadResponse, ApiError> {
    let (p, fallback) = snapshot.engine.page(user, level, page)?;
    Ok(BroadResponse {
        page_index: p.page_index,
        pages: PAGES,
        level: p.level,
        adjustable: treatment.has_slider(),
        degraded: p.degraded,
        fallback,
        items: page_items(snapshot, &p),
    })
}

fn page_items(snapshot: &Snapshot, page: &RecPage) -> Vec<Item> {
    page.slots
        .iter()
        .map(|s| item(snapshot, s.movie_id, s.score, Some(s.cluster)))
        .collect()
}

fn item(snapshot: &Snapshot, movie_id: MovieId, score: f64, cluster: Option<ClusterId>) -> Item {
    Item {
        movie_id,
        title: snapshot.title(movie_id).map(str::to_string),
        score,
        cluster,
    }
}

fn known_movie(state: &AppState, movie: MovieId) -> Result<(), ApiError> {
    if state.snapshot().knows_movie(movie) {
        Ok(())
    } else {
        Err(ApiError::NotFound(format!("unknown movie {movie}")))
    }
}

/// Runs recommendation work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map(Json)
}
