//! HTTP service for the live experiment.
//!
//! A login opens a session bound to the user's experiment arm. The arm decides what the home
//! page shows: Control sees only top picks, BRC adds a broad carousel fixed at the highest
//! diversity level, and BRC_DS adds the same carousel at an adjustable level that starts at 3
//! in every session. Everything the user does is appended to a JSON-lines event log, which is
//! the only input the metrics pipeline needs.
//!
//! | method | path        | body / query                          |
//! |--------|-------------|---------------------------------------|
//! | POST   | `/session`  | `{user_id}`                           |
//! | POST   | `/ack`      | `{token}`                             |
//! | POST   | `/logout`   | `{token}`                             |
//! | GET    | `/home`     | `?token=`                             |
//! | GET    | `/broad`    | `?token=&page=1..3`                   |
//! | POST   | `/level`    | `{token, level}`                      |
//! | POST   | `/rating`   | `{token, movie_id, value}`            |
//! | POST   | `/wishlist` | `{token, movie_id}`                   |
//! | POST   | `/event`    | `{token, kind: page_view, movie_id}` or `{token, kind: carousel_click}` |

pub mod api;
pub mod config;
pub mod error;
pub mod state;

use std::sync::Arc;

pub use api::router;
pub use config::{ConfigLayer, ServiceConfig};
pub use error::ApiError;
pub use state::{
    AppState, Clock, EventLog, ManualClock, MemoryLog, RatingStore, Snapshot, SystemClock,
};

/// Serves until the `shutdown` future completes.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
