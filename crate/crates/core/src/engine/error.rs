use crate::backend::BackendError;
use crate::ids::{JobId, NodeId, ProjectId};
use crate::params::{Canvas, ParamsError};
use crate::node::StageViolation;
use crate::request::RequestError;
use crate::state::ApplyError;
use crate::store::StoreError;
use crate::tutor::TutorError;
use crate::Digest;

/// How an error should be surfaced to a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    NotFound,
    Conflict,
    Unavailable,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("theme is empty")]
    EmptyTheme,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("label is empty")]
    EmptyLabel,
    #[error("project {0} not found")]
    ProjectNotFound(ProjectId),
    #[error("node {0} not found")]
    NodeNotFound(NodeId),
    #[error("job {0} not found")]
    JobNotFound(JobId),
    #[error("blob {0} not found")]
    BlobNotFound(Digest),
    #[error("node {0} is already pending")]
    AlreadyPending(NodeId),
    #[error("node {0} is already completed")]
    AlreadyCompleted(NodeId),
    #[error("node {0} is not completed")]
    NotCompleted(NodeId),
    #[error("node {0} is not a draft")]
    NotDraft(NodeId),
    #[error("node {0} is at the finish stage: no next stage")]
    NoNextStage(NodeId),
    #[error("node {node} does not belong to project {project}")]
    ForeignNode { node: NodeId, project: ProjectId },
    #[error("nodes {0} and {1} belong to different projects")]
    CrossProject(NodeId, NodeId),
    #[error("empty selection: mask has no set pixels")]
    EmptySelection,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: Canvas, actual: Canvas },
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error(transparent)]
    Stage(#[from] StageViolation),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tutor(#[from] TutorError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("state transition rejected: {0}")]
    Apply(#[from] ApplyError),
    #[error("timed out waiting")]
    WaitTimeout,
    #[error("engine is shutting down")]
    ShuttingDown,
}

impl EngineError {
    /// Machine-readable code, drawn from a closed set.
    pub fn code(&self) -> &'static str {
        use EngineError::*;
        match self {
            EmptyTheme | EmptyPrompt | EmptyLabel | Params(_) | Request(_) => "validation_failed",
            ProjectNotFound(_) | NodeNotFound(_) | JobNotFound(_) | BlobNotFound(_) => "not_found",
            AlreadyPending(_) => "already_pending",
            AlreadyCompleted(_) => "already_completed",
            NotCompleted(_) => "not_completed",
            NotDraft(_) => "not_draft",
            NoNextStage(_) => "no_next_stage",
            ForeignNode { .. } => "foreign_node",
            CrossProject(..) => "cross_project",
            EmptySelection => "empty_selection",
            DimensionMismatch { .. } => "dimension_mismatch",
            UndecodableImage(_) => "undecodable_image",
            Stage(_) => "stage_violation",
            Backend(BackendError::MissingCapability(_)) => "capability_missing",
            Backend(BackendError::InvalidRequest(_)) => "validation_failed",
            Backend(_) => "backend_unavailable",
            Tutor(TutorError::EmptyQuestion) => "validation_failed",
            Tutor(TutorError::ForeignNode { .. }) => "foreign_node",
            Tutor(_) => "backend_unavailable",
            Store(StoreError::BlobNotFound(_)) | Store(StoreError::ProjectNotFound(_)) => {
                "not_found"
            }
            Store(_) => "storage_failure",
            Apply(_) => "illegal_transition",
            WaitTimeout => "timeout",
            ShuttingDown => "backend_unavailable",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.code() {
            "validation_failed" | "foreign_node" | "cross_project" | "empty_selection"
            | "dimension_mismatch" | "undecodable_image" | "capability_missing" => {
                ErrorClass::Validation
            }
            "not_found" => ErrorClass::NotFound,
            "already_pending" | "already_completed" | "not_completed" | "not_draft"
            | "no_next_stage" | "stage_violation" | "illegal_transition" => ErrorClass::Conflict,
            "backend_unavailable" | "timeout" => ErrorClass::Unavailable,
            _ => ErrorClass::Internal,
        }
    }
}

/// Every code [`EngineError::code`] can return.
pub const ERROR_CODES: &[&str] = &[
    "validation_failed",
    "not_found",
    "already_pending",
    "already_completed",
    "not_completed",
    "not_draft",
    "no_next_stage",
    "foreign_node",
    "cross_project",
    "empty_selection",
    "dimension_mismatch",
    "undecodable_image",
    "stage_violation",
    "capability_missing",
    "backend_unavailable",
    "storage_failure",
    "illegal_transition",
    "timeout",
];
