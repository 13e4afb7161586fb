use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use crate::backend::BackendError;
use crate::digest::Digest;
use crate::event::Event;
use crate::ids::{JobId, ProjectId};
use crate::job::JobState;

use super::{lock, EngineError, QueuedJob, Shared};

/// Worker loop: pull jobs until the queue sender is dropped.
pub(super) fn run(shared: Arc<Shared>, rx: Arc<Mutex<mpsc::Receiver<QueuedJob>>>) {
    loop {
        let next = rx.lock().expect("queue receiver poisoned").recv();
        match next {
            Ok(q) => shared.run_job(&q.project, &q.job),
            Err(_) => return,
        }
    }
}

impl Shared {
    /// Runs one queued job to completion and commits its outcome.
    pub(super) fn run_job(&self, pid: &ProjectId, job_id: &JobId) {
        if let Err(e) = self.try_run_job(pid, job_id) {
            tracing::error!(project = %pid, job = %job_id, error = %e, "job bookkeeping failed");
        }
    }

    fn try_run_job(&self, pid: &ProjectId, job_id: &JobId) -> Result<(), EngineError> {
        let slot = self.slot(pid)?;
        let (request, node_id) = {
            let mut guard = lock(&slot);
            let job = guard.state.job(job_id)?.clone();
            match job.state {
                JobState::Queued => {
                    self.commit(pid, &mut guard, Event::JobStarted { job_id: job_id.clone() })?;
                }
                // Interrupted mid-run by a restart; run it again.
                JobState::Running => {}
                JobState::Done | JobState::Failed => return Ok(()),
            }
            (job.request, job.node_id)
        };

        let store = &self.store;
        let source = |d: &Digest| store.get_blob(pid, d).ok();
        let outcome = catch_unwind(AssertUnwindSafe(|| self.backend.generate(&request, &source)))
            .unwrap_or_else(|_| Err(BackendError::Server("backend panicked".into())));
        let outcome = outcome
            .map_err(|e| e.to_string())
            .and_then(|blob| self.put_blob(pid, &blob.bytes).map_err(|e| e.to_string()));

        let event = match outcome {
            Ok(image) => Event::NodeCompleted {
                job_id: job_id.clone(),
                node_id,
                image,
            },
            Err(error) => {
                tracing::warn!(project = %pid, job = %job_id, %error, "generation failed");
                Event::NodeFailed {
                    job_id: job_id.clone(),
                    node_id,
                    error,
                }
            }
        };
        let mut guard = lock(&slot);
        self.commit(pid, &mut guard, event)?;
        Ok(())
    }
}
