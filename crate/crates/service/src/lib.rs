//! Live decision sessions.
//!
//! A session holds one protocol configuration and an append-only event
//! log; its state is a fold over that log. [`store::Store`] keeps sessions
//! in memory and, optionally, as JSON-lines files; [`api::router`] exposes
//! them over HTTP.

pub mod api;
pub mod config;
pub mod error;
pub mod session;
pub mod store;

use std::sync::Arc;

pub use config::{Protocol, SessionConfig};
pub use error::{ServiceError, ValidationError};
pub use session::{Event, EventKind, Session, Status};
pub use store::Store;

/// Serves the API on `listener` until Ctrl-C.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    token: Option<String>,
) -> std::io::Result<()> {
    let app = api::router(store, token);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
}
