//! Submission and leaderboard service.
//!
//! Submissions are scored with the same pipeline as the CLI, stored as
//! canonical bytes keyed by their SHA-256, and ranked on a main board and
//! four parameter tracks.

pub mod api;
pub mod board;
pub mod store;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

pub use api::{router, ApiError, SharedStore};
pub use board::{leaderboard, Board, BoardEntry};
pub use store::{content_id, CanonicalFile, Payload, Store, StoreError, SubmissionRecord};

/// Serves the HTTP API on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Store) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(RwLock::new(store)))).await
}
