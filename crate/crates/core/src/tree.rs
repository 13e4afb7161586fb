use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;
use crate::node::VersionNode;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    Duplicate(NodeId),
    #[error("parent {0} does not exist")]
    MissingParent(NodeId),
    #[error("tree already has a root")]
    SecondRoot,
}

/// The branching version history of one project.
///
/// Nodes are kept in creation order; each node has at most one parent, so the
/// history is a tree rooted at the first node inserted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<VersionNode>", into = "Vec<VersionNode>")]
pub struct VersionTree {
    nodes: Vec<VersionNode>,
    index: BTreeMap<NodeId, usize>,
}

impl From<Vec<VersionNode>> for VersionTree {
    fn from(nodes: Vec<VersionNode>) -> Self {
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        VersionTree { nodes, index }
    }
}

impl From<VersionTree> for Vec<VersionNode> {
    fn from(tree: VersionTree) -> Self {
        tree.nodes
    }
}

impl VersionTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<&VersionNode> {
        self.nodes.first()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &NodeId) -> Option<&VersionNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn get_mut(&mut self, id: &NodeId) -> Option<&mut VersionNode> {
        self.index.get(id).map(|&i| &mut self.nodes[i])
    }

    pub fn node(&self, id: &NodeId) -> Result<&VersionNode, TreeError> {
        self.get(id).ok_or_else(|| TreeError::UnknownNode(id.clone()))
    }

    /// Nodes in creation order.
    pub fn iter(&self) -> impl Iterator<Item = &VersionNode> {
        self.nodes.iter()
    }

    pub fn check_insert(&self, node: &VersionNode) -> Result<(), TreeError> {
        if self.contains(&node.id) {
            return Err(TreeError::Duplicate(node.id.clone()));
        }
        match &node.parent {
            None if !self.is_empty() => Err(TreeError::SecondRoot),
            Some(p) if !self.contains(p) => Err(TreeError::MissingParent(p.clone())),
            _ => Ok(()),
        }
    }

    pub fn insert(&mut self, node: VersionNode) -> Result<(), TreeError> {
        self.check_insert(&node)?;
        self.index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
        Ok(())
    }

    pub fn children<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a VersionNode> + 'a {
        self.nodes
            .iter()
            .filter(move |n| n.parent.as_ref() == Some(id))
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn lineage(&self, id: &NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = Vec::new();
        let mut cursor = Some(self.node(id)?);
        while let Some(node) = cursor {
            path.push(node.id.clone());
            cursor = match &node.parent {
                Some(p) => Some(self.node(p)?),
                None => None,
            };
            if path.len() > self.nodes.len() {
                // Parent links loop; insertion rules make this unreachable.
                return Err(TreeError::UnknownNode(id.clone()));
            }
        }
        path.reverse();
        Ok(path)
    }

    pub fn is_ancestor(&self, ancestor: &NodeId, of: &NodeId) -> Result<bool, TreeError> {
        Ok(self.lineage(of)?.contains(ancestor))
    }

    /// Lowest common ancestor; a node is its own ancestor.
    pub fn lowest_common_ancestor(&self, a: &NodeId, b: &NodeId) -> Result<NodeId, TreeError> {
        let la = self.lineage(a)?;
        let lb = self.lineage(b)?;
        la.iter()
            .zip(lb.iter())
            .take_while(|(x, y)| x == y)
            .last()
            .map(|(x, _)| x.clone())
            .ok_or_else(|| TreeError::UnknownNode(a.clone()))
    }

    /// Verifies single root, reachability of every node from it, and acyclicity.
    pub fn check_structure(&self) -> Result<(), TreeError> {
        let roots = self.nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 {
            return Err(TreeError::SecondRoot);
        }
        for node in &self.nodes {
            let mut seen = HashSet::new();
            let mut cursor = node;
            while let Some(p) = &cursor.parent {
                if !seen.insert(p.clone()) {
                    return Err(TreeError::UnknownNode(p.clone()));
                }
                cursor = self.node(p)?;
            }
        }
        Ok(())
    }
}
