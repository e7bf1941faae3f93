use std::collections::HashMap;
use std::sync::{Arc, Mutex, PoisonError, RwLock};

use serde::Serialize;
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: String,
    pub kind: &'static str,
    pub session_id: String,
    pub state: JobState,
    /// Fraction of the work done, in [0, 1].
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// Shared handle a running job updates.
#[derive(Debug, Clone)]
pub struct JobHandle(Arc<Mutex<JobStatus>>);

impl JobHandle {
    fn update(&self, f: impl FnOnce(&mut JobStatus)) {
        f(&mut self.0.lock().unwrap_or_else(PoisonError::into_inner));
    }

    pub fn snapshot(&self) -> JobStatus {
        self.0.lock().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn id(&self) -> String {
        self.snapshot().id
    }

    pub fn start(&self) {
        self.update(|s| s.state = JobState::Running);
    }

    pub fn step(&self, step: usize, steps: usize, loss: f64) {
        self.update(|s| {
            s.progress = step as f64 / steps.max(1) as f64;
            s.loss_trace.get_or_insert_with(Vec::new).push(loss);
        });
    }

    pub fn finish(&self, result: Result<Value, ApiError>) {
        self.update(|s| {
            match result {
                Ok(v) => {
                    s.state = JobState::Done;
                    s.progress = 1.0;
                    s.result = Some(v);
                }
                Err(e) => {
                    s.state = JobState::Failed;
                    s.error = Some(e);
                }
            }
        });
    }
}

#[derive(Debug, Default)]
pub struct Jobs {
    map: RwLock<HashMap<String, JobHandle>>,
}

impl Jobs {
    pub fn create(&self, kind: &'static str, session_id: &str) -> JobHandle {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let handle = JobHandle(Arc::new(Mutex::new(JobStatus {
            id: id.clone(),
            kind,
            session_id: session_id.to_string(),
            state: JobState::Queued,
            progress: 0.0,
            loss_trace: None,
            result: None,
            error: None,
        })));
        self.map.write().unwrap_or_else(PoisonError::into_inner).insert(id, handle.clone());
        handle
    }

    pub fn get(&self, id: &str) -> Option<JobHandle> {
        self.map.read().unwrap_or_else(PoisonError::into_inner).get(id).cloned()
    }
}
