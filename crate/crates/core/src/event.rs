use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::ids::{JobId, NodeId};
use crate::job::Job;
use crate::node::{Project, VersionNode};
use crate::params::GenerationParams;
use crate::tutor::TutorExchange;

/// Everything that can happen to a project. The log of these is the only
/// persisted state; see [`crate::state::ProjectState`] for the fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    ProjectCreated {
        project: Project,
        root: VersionNode,
    },
    NodeCreated {
        node: VersionNode,
    },
    ControlAttached {
        node_id: NodeId,
        control_image: Digest,
        params: GenerationParams,
    },
    JobQueued {
        job: Job,
    },
    JobStarted {
        job_id: JobId,
    },
    NodeCompleted {
        job_id: JobId,
        node_id: NodeId,
        image: Digest,
    },
    NodeFailed {
        job_id: JobId,
        node_id: NodeId,
        error: String,
    },
    Activated {
        node_id: NodeId,
    },
    TutorAsked {
        exchange: TutorExchange,
    },
    NodeLabeled {
        node_id: NodeId,
        label: String,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::ProjectCreated { .. } => "project_created",
            Event::NodeCreated { .. } => "node_created",
            Event::ControlAttached { .. } => "control_attached",
            Event::JobQueued { .. } => "job_queued",
            Event::JobStarted { .. } => "job_started",
            Event::NodeCompleted { .. } => "node_completed",
            Event::NodeFailed { .. } => "node_failed",
            Event::Activated { .. } => "activated",
            Event::TutorAsked { .. } => "tutor_asked",
            Event::NodeLabeled { .. } => "node_labeled",
        }
    }

    /// Name used on the client event stream. Job and completion events keep
    /// their own names; everything else is a generic project update.
    pub fn stream_name(&self) -> &'static str {
        match self {
            Event::JobQueued { .. }
            | Event::JobStarted { .. }
            | Event::NodeCompleted { .. }
            | Event::NodeFailed { .. } => self.kind(),
            _ => "project_updated",
        }
    }

    /// One-line action summary shown to the tutor.
    pub fn summary(&self) -> String {
        let origin = |n: &VersionNode| {
            serde_json::to_value(n.origin)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default()
        };
        match self {
            Event::NodeCreated { node } => {
                format!("node_created: {} at {} stage", origin(node), node.stage)
            }
            Event::JobQueued { job } => format!("job_queued: {} stage", job.request.stage),
            Event::NodeFailed { error, .. } => format!("node_failed: {error}"),
            Event::Activated { node_id } => format!("activated: {node_id}"),
            Event::TutorAsked { exchange } => {
                format!("tutor_asked: {}", exchange.context.question)
            }
            Event::NodeLabeled { label, .. } => format!("node_labeled: {label}"),
            other => other.kind().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
    pub at: DateTime<Utc>,
}
