//! HTTP session service for the interactive loop: load a scene, render views,
//! collect clicks, segment, apply toolbox ops and undo.

pub mod error;
pub mod jobs;
mod routes;
pub mod session;

use std::collections::HashMap;
use std::sync::{Arc, PoisonError, RwLock};

use axum::Router;
use tokio::sync::Semaphore;

pub use error::ApiError;
use jobs::Jobs;
use session::SessionSlot;

/// Default number of jobs that may compute at once.
pub const DEFAULT_WORKERS: usize = 4;

/// Reads `GSCULPT_WORKERS`, falling back to [`DEFAULT_WORKERS`] when unset or invalid.
pub fn workers_from_env() -> usize {
    std::env::var("GSCULPT_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(DEFAULT_WORKERS)
}

#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    jobs: Jobs,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(workers: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                sessions: RwLock::new(HashMap::new()),
                jobs: Jobs::default(),
                workers: Arc::new(Semaphore::new(workers.max(1))),
            }),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
    }

    fn insert_session(&self, slot: SessionSlot) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.inner
            .sessions
            .write()
            .unwrap_or_else(PoisonError::into_inner)
            .insert(id.clone(), Arc::new(slot));
        id
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(DEFAULT_WORKERS)
    }
}

pub fn router(state: AppState) -> Router {
    routes::router(state)
}
