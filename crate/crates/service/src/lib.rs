//! HTTP front end over a loaded decision-support configuration.

pub mod access_log;
pub mod api;
pub mod state;

use std::net::SocketAddr;

use axum::routing::{get, post};
use axum::Router;

pub use access_log::AccessLog;
pub use api::{ScoreResponse, SnapshotBody};
pub use state::{AppState, Loaded};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/policies", get(api::policies))
        .route("/score", post(api::score))
        .route("/evidence", post(api::evidence))
        .route("/soundness", get(api::soundness))
        .route("/panels/{id}", get(api::panel))
        .route("/config", post(api::config))
        .route("/snapshot", get(api::export).post(api::import))
        .layer(axum::middleware::from_fn_with_state(state.clone(), access_log::middleware))
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
