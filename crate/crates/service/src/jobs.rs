//! In-memory store of calibration jobs. Finished jobs are dropped `ttl`
//! after completion; expiry is checked on every access.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use wincrt_core::api::{ErrorBody, JobState, JobStatus};
use wincrt_core::generative::DesignInputEstimate;

struct Entry {
    status: JobStatus,
    finished: Option<Instant>,
}

pub(crate) struct JobStore {
    jobs: Mutex<HashMap<String, Entry>>,
    next: AtomicU64,
    ttl: Duration,
}

impl JobStore {
    pub(crate) fn new(ttl: Duration) -> Self {
        JobStore { jobs: Mutex::new(HashMap::new()), next: AtomicU64::new(1), ttl }
    }

    fn purge(&self, jobs: &mut HashMap<String, Entry>) {
        jobs.retain(|_, e| e.finished.is_none_or(|t| t.elapsed() <= self.ttl));
    }

    pub(crate) fn create(&self) -> JobStatus {
        let id = format!("job-{}", self.next.fetch_add(1, Ordering::Relaxed));
        let status = JobStatus { id: id.clone(), state: JobState::Queued, result: None, error: None };
        let mut jobs = self.jobs.lock().unwrap();
        self.purge(&mut jobs);
        jobs.insert(id, Entry { status: status.clone(), finished: None });
        status
    }

    pub(crate) fn update(
        &self,
        id: &str,
        state: JobState,
        result: Option<DesignInputEstimate>,
        error: Option<ErrorBody>,
    ) {
        let mut jobs = self.jobs.lock().unwrap();
        if let Some(e) = jobs.get_mut(id) {
            e.status.state = state;
            e.status.result = result;
            e.status.error = error;
            if state.is_finished() {
                e.finished = Some(Instant::now());
            }
        }
    }

    pub(crate) fn get(&self, id: &str) -> Option<JobStatus> {
        let mut jobs = self.jobs.lock().unwrap();
        self.purge(&mut jobs);
        jobs.get(id).map(|e| e.status.clone())
    }
}
