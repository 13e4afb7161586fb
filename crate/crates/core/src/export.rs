use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::ids::{NodeId, ProjectId};
use crate::node::{NodeOrigin, NodeStatus};
use crate::params::Canvas;
use crate::stage::StageKind;
use crate::state::ProjectState;

pub const TREE_FORMAT: &str = "sakugaflow-tree/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub stage: StageKind,
    pub origin: NodeOrigin,
    pub status: NodeStatus,
    pub prompt: String,
    pub seed: u64,
    pub image: Option<Digest>,
    pub mask: Option<Digest>,
    pub control_image: Option<Digest>,
    pub label: Option<String>,
}

/// Stable, timestamp-free summary of a project's version tree. Nodes appear
/// in creation order, edges in child creation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub format: String,
    pub project_id: ProjectId,
    pub theme: String,
    pub canvas: Canvas,
    pub root: NodeId,
    pub active: NodeId,
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl TreeDocument {
    pub fn from_state(state: &ProjectState) -> Self {
        let nodes: Vec<TreeNode> = state
            .tree
            .iter()
            .map(|n| TreeNode {
                id: n.id.clone(),
                parent: n.parent.clone(),
                stage: n.stage,
                origin: n.origin,
                status: n.status,
                prompt: n.prompt.clone(),
                seed: n.seed,
                image: n.image,
                mask: n.mask,
                control_image: n.control_image,
                label: n.label.clone(),
            })
            .collect();
        let edges = nodes
            .iter()
            .filter_map(|n| n.parent.clone().map(|p| (p, n.id.clone())))
            .collect();
        TreeDocument {
            format: TREE_FORMAT.into(),
            project_id: state.project.id.clone(),
            theme: state.project.theme.clone(),
            canvas: state.project.canvas_size,
            root: state.project.root_node.clone(),
            active: state.project.active_node.clone(),
            nodes,
            edges,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("tree serializes");
        s.push('\n');
        s
    }
}
