use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::ids::{NodeId, ProjectId};
use crate::params::{Canvas, GenerationParams};
use crate::stage::StageKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub theme: String,
    pub canvas_size: Canvas,
    pub created_at: DateTime<Utc>,
    pub root_node: NodeId,
    pub active_node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Draft,
    Pending,
    Completed,
    Failed,
}

/// Which operation produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOrigin {
    Root,
    Advance,
    Regenerate,
    Inpaint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionNode {
    pub id: NodeId,
    pub project_id: ProjectId,
    pub parent: Option<NodeId>,
    pub stage: StageKind,
    pub origin: NodeOrigin,
    /// Subject text the stage template is applied to.
    pub subject: String,
    /// Full effective prompt sent to the backend.
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub seed: u64,
    pub params: GenerationParams,
    pub image: Option<Digest>,
    pub control_image: Option<Digest>,
    pub mask: Option<Digest>,
    pub status: NodeStatus,
    pub created_at: DateTime<Utc>,
    pub label: Option<String>,
}

impl VersionNode {
    pub fn is_completed(&self) -> bool {
        self.status == NodeStatus::Completed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StageViolation {
    #[error("stage skip: {from} cannot have a {to} child")]
    StageSkip { from: StageKind, to: StageKind },
    #[error("backward stage: {from} cannot have a {to} child")]
    Backward { from: StageKind, to: StageKind },
    #[error("mask on stage advance: inpainting keeps the parent's stage ({from})")]
    MaskOnAdvance { from: StageKind },
}

/// Checks the stage-monotonicity rule for a prospective child of `parent`.
///
/// A child either keeps its parent's stage (revision, branch, inpaint) or moves
/// exactly one stage forward without a mask.
pub fn validate_child(
    parent: &VersionNode,
    child_stage: StageKind,
    has_mask: bool,
) -> Result<(), StageViolation> {
    validate_stage_step(parent.stage, child_stage, has_mask)
}

pub fn validate_stage_step(
    from: StageKind,
    to: StageKind,
    has_mask: bool,
) -> Result<(), StageViolation> {
    if to == from {
        return Ok(());
    }
    if to < from {
        return Err(StageViolation::Backward { from, to });
    }
    if from.next() != Some(to) {
        return Err(StageViolation::StageSkip { from, to });
    }
    if has_mask {
        return Err(StageViolation::MaskOnAdvance { from });
    }
    Ok(())
}
