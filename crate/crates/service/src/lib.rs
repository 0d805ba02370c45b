//! Interactive preference optimization sessions over HTTP.
//!
//! A client creates a session, asks for the next duel, reports which side
//! won and reads the current Condorcet winner with its score table. Each
//! session is an append-only event log (`<events>/<id>.jsonl`) replayed on
//! startup.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::router;
pub use error::{ErrorBody, ServiceError, ServiceResult};
pub use session::{SessionConfig, SessionSpec};
pub use store::SessionStore;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Event log directory; `None` keeps sessions in memory only.
    pub events_dir: Option<PathBuf>,
    /// Built UI assets, served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let store = match &config.events_dir {
        Some(dir) => SessionStore::open(dir).map_err(std::io::Error::other)?,
        None => SessionStore::in_memory(),
    };
    let app = router(Arc::new(store), config.ui_dir.clone());
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
