use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: String,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// Background jobs; at most one runs at a time.
#[derive(Default)]
pub struct Jobs {
    inner: Mutex<JobTable>,
}

#[derive(Default)]
struct JobTable {
    next: u64,
    jobs: HashMap<u64, Job>,
    running: Option<u64>,
}

impl Jobs {
    pub fn get(&self, id: u64) -> Option<Job> {
        self.inner.lock().expect("job table").jobs.get(&id).cloned()
    }

    /// Starts `work` on the blocking pool unless another job is running.
    pub fn start<F>(self: &Arc<Self>, kind: &str, work: F) -> Result<Job, ApiError>
    where
        F: FnOnce() -> Result<Value, ApiError> + Send + 'static,
    {
        let job = {
            let mut t = self.inner.lock().expect("job table");
            if let Some(id) = t.running {
                let mut e = ApiError::new(
                    axum::http::StatusCode::CONFLICT,
                    "job_running",
                    format!("job {id} is still running"),
                );
                e.details = Some(serde_json::json!({ "job": id }));
                return Err(e);
            }
            t.next += 1;
            let job = Job {
                id: t.next,
                kind: kind.to_string(),
                state: JobState::Running,
                result: None,
                error: None,
            };
            t.running = Some(job.id);
            t.jobs.insert(job.id, job.clone());
            job
        };
        let jobs = Arc::clone(self);
        let id = job.id;
        tokio::task::spawn_blocking(move || {
            let outcome = work();
            let mut t = jobs.inner.lock().expect("job table");
            t.running = None;
            if let Some(j) = t.jobs.get_mut(&id) {
                match outcome {
                    Ok(v) => {
                        j.state = JobState::Succeeded;
                        j.result = Some(v);
                    }
                    Err(e) => {
                        j.state = JobState::Failed;
                        j.error = Some(e);
                    }
                }
            }
        });
        Ok(job)
    }
}
