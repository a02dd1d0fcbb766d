//! HTTP JSON API over a knowledge base and an analysis workspace.
//!
//! Reads run against an immutable knowledge-base snapshot; writes are
//! serialised, validated, persisted and then swapped in as a new snapshot.

mod api;
mod error;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use axum::routing::{get, post, put};
use axum::Router;
use iopscope_core::export::write_atomic;
use iopscope_core::kb::{load_kb, save_kb, KbError, KnowledgeBase};
use iopscope_core::review::{DelayTable, ReviewError};
use iopscope_core::Workspace;
use thiserror::Error;
use tokio::sync::Mutex;

pub use api::{KbView, NodePatch, ReviewDecision, WhatIfRequest, WhatIfResponse};
pub use error::ApiError;

#[derive(Debug, Error)]
pub enum StartError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Kb { path: PathBuf, source: KbError },
    #[error("{path}: {source}")]
    Delays { path: PathBuf, source: ReviewError },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

/// Shared service state.
pub struct AppState {
    kb: ArcSwap<KnowledgeBase>,
    kb_path: Option<PathBuf>,
    workspace: Workspace,
    delays: DelayTable,
    writer: Mutex<()>,
}

impl AppState {
    pub fn new(kb: KnowledgeBase, workspace: Workspace) -> Self {
        Self {
            kb: ArcSwap::from_pointee(kb),
            kb_path: None,
            workspace,
            delays: DelayTable::default(),
            writer: Mutex::new(()),
        }
    }

    /// Loads and validates the KB file; accepted edits are written back to it.
    pub fn open(kb_path: &Path, workspace: Workspace, delays: Option<&Path>) -> Result<Self, StartError> {
        let text = std::fs::read_to_string(kb_path).map_err(|source| StartError::Io {
            path: kb_path.to_path_buf(),
            source,
        })?;
        let kb = load_kb(&text).map_err(|source| StartError::Kb {
            path: kb_path.to_path_buf(),
            source,
        })?;
        let delays = match delays {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| StartError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                DelayTable::parse(&text).map_err(|source| StartError::Delays {
                    path: p.to_path_buf(),
                    source,
                })?
            }
            None => DelayTable::default(),
        };
        let mut state = Self::new(kb, workspace);
        state.kb_path = Some(kb_path.to_path_buf());
        state.delays = delays;
        Ok(state)
    }

    pub fn with_delays(mut self, delays: DelayTable) -> Self {
        self.delays = delays;
        self
    }

    pub fn snapshot(&self) -> Arc<KnowledgeBase> {
        self.kb.load_full()
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    fn persist(&self, kb: &KnowledgeBase) -> Result<(), ApiError> {
        if let Some(path) = &self.kb_path {
            write_atomic(path, save_kb(kb).as_bytes()).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(api::health))
        .route("/api/v1/kb", get(api::get_kb))
        .route("/api/v1/kb/nodes/{id}", put(api::put_node))
        .route("/api/v1/whatif", post(api::post_whatif))
        .route("/api/v1/series/{id}", get(api::get_series))
        .route("/api/v1/spectrogram/{id}", get(api::get_spectrogram))
        .route("/api/v1/detections", get(api::get_detections))
        .route("/api/v1/report", get(api::get_report))
        .route("/api/v1/review", get(api::get_review))
        .route("/api/v1/review/{index}/accept", post(api::accept_review))
        .route("/api/v1/review/{index}/reject", post(api::reject_review))
        .fallback(api::no_route)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<(), StartError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| StartError::Bind { addr, source })?;
    log::info!(
        "listening on http://{}",
        listener.local_addr().map_err(StartError::Serve)?
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StartError::Serve)
}

/// Blocking entry point for the command line.
pub fn run(state: AppState, addr: SocketAddr) -> Result<(), StartError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(StartError::Serve)?;
    runtime.block_on(serve(Arc::new(state), addr))
}
