//! Project state as a left fold over its event log.
//!
//! The engine commits an event by validating it against the current state,
//! appending it to the store, then applying it. Replay runs the same
//! validate-and-apply over the stored log, so every invariant the engine
//! relies on is re-checked on load.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::event::{Event, EventRecord};
use crate::ids::{JobId, NodeId};
use crate::job::{Job, JobState};
use crate::node::{validate_stage_step, NodeOrigin, NodeStatus, Project, StageViolation, VersionNode};
use crate::stage::StageKind;
use crate::tree::{TreeError, VersionTree};
use crate::tutor::TutorExchange;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApplyError {
    #[error("event seq {got}, expected {expected}")]
    Sequence { expected: u64, got: u64 },
    #[error("log must start with project_created")]
    MissingGenesis,
    #[error("project_created after genesis")]
    DuplicateGenesis,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} already exists")]
    DuplicateJob(JobId),
    #[error("node {node} is {status:?}, {needed}")]
    NodeStatus {
        node: NodeId,
        status: NodeStatus,
        needed: &'static str,
    },
    #[error("job {job} cannot move from {from:?} to {to:?}")]
    JobTransition {
        job: JobId,
        from: JobState,
        to: JobState,
    },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Stage(#[from] StageViolation),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project: Project,
    pub tree: VersionTree,
    pub jobs: BTreeMap<JobId, Job>,
    pub exchanges: Vec<TutorExchange>,
    /// Seq the next event must carry; equals the number of events applied.
    pub next_seq: u64,
}

fn invariant(cond: bool, msg: impl FnOnce() -> String) -> Result<(), ApplyError> {
    if cond {
        Ok(())
    } else {
        Err(ApplyError::Invariant(msg()))
    }
}

impl ProjectState {
    /// State after the first event, which must be `project_created` at seq 0.
    pub fn genesis(record: &EventRecord) -> Result<Self, ApplyError> {
        let Event::ProjectCreated { project, root } = &record.event else {
            return Err(ApplyError::MissingGenesis);
        };
        if record.seq != 0 {
            return Err(ApplyError::Sequence {
                expected: 0,
                got: record.seq,
            });
        }
        invariant(root.parent.is_none(), || "root has a parent".into())?;
        invariant(root.stage == StageKind::Rough, || "root is not a rough node".into())?;
        invariant(root.status == NodeStatus::Draft, || "root is not a draft".into())?;
        invariant(root.origin == NodeOrigin::Root, || "root origin mismatch".into())?;
        invariant(root.project_id == project.id, || "root belongs elsewhere".into())?;
        invariant(
            project.root_node == root.id && project.active_node == root.id,
            || "project pointers must reference the root".into(),
        )?;
        let mut tree = VersionTree::new();
        tree.insert(root.clone())?;
        Ok(ProjectState {
            project: project.clone(),
            tree,
            jobs: BTreeMap::new(),
            exchanges: Vec::new(),
            next_seq: 1,
        })
    }

    /// Folds a whole log.
    pub fn replay(records: &[EventRecord]) -> Result<Self, ApplyError> {
        let (first, rest) = records.split_first().ok_or(ApplyError::MissingGenesis)?;
        let mut state = Self::genesis(first)?;
        for record in rest {
            state.apply(record)?;
        }
        Ok(state)
    }

    pub fn node(&self, id: &NodeId) -> Result<&VersionNode, ApplyError> {
        self.tree
            .get(id)
            .ok_or_else(|| ApplyError::UnknownNode(id.clone()))
    }

    pub fn job(&self, id: &JobId) -> Result<&Job, ApplyError> {
        self.jobs
            .get(id)
            .ok_or_else(|| ApplyError::UnknownJob(id.clone()))
    }

    pub fn active_node(&self) -> &VersionNode {
        self.tree
            .get(&self.project.active_node)
            .expect("active node exists")
    }

    pub fn apply(&mut self, record: &EventRecord) -> Result<(), ApplyError> {
        if record.seq != self.next_seq {
            return Err(ApplyError::Sequence {
                expected: self.next_seq,
                got: record.seq,
            });
        }
        self.validate(&record.event)?;
        self.apply_validated(record);
        Ok(())
    }

    /// Checks `event` against the current state without changing anything.
    pub fn validate(&self, event: &Event) -> Result<(), ApplyError> {
        match event {
            Event::ProjectCreated { .. } => Err(ApplyError::DuplicateGenesis),
            Event::NodeCreated { node } => self.validate_new_node(node),
            Event::ControlAttached { node_id, .. } => {
                self.require_status(node_id, &[NodeStatus::Draft], "must be a draft")
            }
            Event::JobQueued { job } => {
                if self.jobs.contains_key(&job.id) {
                    return Err(ApplyError::DuplicateJob(job.id.clone()));
                }
                invariant(job.state == JobState::Queued, || "new job must be queued".into())?;
                let node = self.node(&job.node_id)?;
                invariant(job.request.stage == node.stage, || "job stage mismatch".into())?;
                self.require_status(
                    &job.node_id,
                    &[NodeStatus::Draft, NodeStatus::Failed],
                    "must be draft or failed to generate",
                )
            }
            Event::JobStarted { job_id } => self.require_job_move(job_id, JobState::Running),
            Event::NodeCompleted { job_id, node_id, .. } => {
                self.require_job_move(job_id, JobState::Done)?;
                self.require_job_node(job_id, node_id)?;
                self.require_status(node_id, &[NodeStatus::Pending], "must be pending")
            }
            Event::NodeFailed { job_id, node_id, .. } => {
                self.require_job_move(job_id, JobState::Failed)?;
                self.require_job_node(job_id, node_id)?;
                self.require_status(node_id, &[NodeStatus::Pending], "must be pending")
            }
            Event::Activated { node_id } => self.node(node_id).map(|_| ()),
            Event::TutorAsked { exchange } => {
                let node = self.node(&exchange.node_id)?;
                invariant(exchange.context.stage == node.stage, || {
                    "exchange stage differs from node stage".into()
                })
            }
            Event::NodeLabeled { node_id, .. } => self.node(node_id).map(|_| ()),
        }
    }

    fn validate_new_node(&self, node: &VersionNode) -> Result<(), ApplyError> {
        self.tree.check_insert(node)?;
        invariant(node.project_id == self.project.id, || "node belongs elsewhere".into())?;
        invariant(node.status == NodeStatus::Draft && node.image.is_none(), || {
            "new nodes start as empty drafts".into()
        })?;
        let parent_id = node
            .parent
            .as_ref()
            .ok_or_else(|| ApplyError::Invariant("only the root may lack a parent".into()))?;
        let parent = self.node(parent_id)?;
        if parent.status != NodeStatus::Completed {
            return Err(ApplyError::NodeStatus {
                node: parent.id.clone(),
                status: parent.status,
                needed: "must be completed to have children",
            });
        }
        validate_stage_step(parent.stage, node.stage, node.mask.is_some())?;
        invariant(node.mask.is_some() == (node.origin == NodeOrigin::Inpaint), || {
            "mask present iff node is an inpaint".into()
        })?;
        invariant(
            (node.origin == NodeOrigin::Advance) == (node.stage != parent.stage),
            || "only advances change stage".into(),
        )
    }

    fn require_status(
        &self,
        id: &NodeId,
        allowed: &[NodeStatus],
        needed: &'static str,
    ) -> Result<(), ApplyError> {
        let node = self.node(id)?;
        if allowed.contains(&node.status) {
            Ok(())
        } else {
            Err(ApplyError::NodeStatus {
                node: id.clone(),
                status: node.status,
                needed,
            })
        }
    }

    fn require_job_move(&self, id: &JobId, to: JobState) -> Result<(), ApplyError> {
        let job = self.job(id)?;
        if job.state.can_move_to(to) {
            Ok(())
        } else {
            Err(ApplyError::JobTransition {
                job: id.clone(),
                from: job.state,
                to,
            })
        }
    }

    fn require_job_node(&self, job: &JobId, node: &NodeId) -> Result<(), ApplyError> {
        invariant(&self.job(job)?.node_id == node, || {
            format!("job {job} does not belong to node {node}")
        })
    }

    /// Applies an event that already passed [`validate`](Self::validate).
    pub fn apply_validated(&mut self, record: &EventRecord) {
        let at = record.at;
        match &record.event {
            Event::ProjectCreated { .. } => unreachable!("rejected by validate"),
            Event::NodeCreated { node } => {
                self.project.active_node = node.id.clone();
                self.tree.insert(node.clone()).expect("validated insert");
            }
            Event::ControlAttached {
                node_id,
                control_image,
                params,
            } => {
                let node = self.node_mut(node_id);
                node.control_image = Some(*control_image);
                node.params = params.clone();
            }
            Event::JobQueued { job } => {
                let mut job = job.clone();
                job.submitted_at = at;
                self.node_mut(&job.node_id).status = NodeStatus::Pending;
                self.jobs.insert(job.id.clone(), job);
            }
            Event::JobStarted { job_id } => {
                self.job_mut(job_id).state = JobState::Running;
            }
            Event::NodeCompleted {
                job_id,
                node_id,
                image,
            } => {
                let job = self.job_mut(job_id);
                job.state = JobState::Done;
                job.finished_at = Some(at);
                let node = self.node_mut(node_id);
                node.image = Some(*image);
                node.status = NodeStatus::Completed;
            }
            Event::NodeFailed {
                job_id,
                node_id,
                error,
            } => {
                let job = self.job_mut(job_id);
                job.state = JobState::Failed;
                job.error = Some(error.clone());
                job.finished_at = Some(at);
                self.node_mut(node_id).status = NodeStatus::Failed;
            }
            Event::Activated { node_id } => {
                self.project.active_node = node_id.clone();
            }
            Event::TutorAsked { exchange } => self.exchanges.push(exchange.clone()),
            Event::NodeLabeled { node_id, label } => {
                self.node_mut(node_id).label = Some(label.clone());
            }
        }
        self.next_seq += 1;
    }

    fn node_mut(&mut self, id: &NodeId) -> &mut VersionNode {
        self.tree.get_mut(id).expect("validated node")
    }

    fn job_mut(&mut self, id: &JobId) -> &mut Job {
        self.jobs.get_mut(id).expect("validated job")
    }

    /// Whole-state invariant check, used by tests and after replay.
    pub fn check_invariants(&self) -> Result<(), ApplyError> {
        self.tree.check_structure()?;
        let root = self
            .tree
            .root()
            .ok_or_else(|| ApplyError::Invariant("empty tree".into()))?;
        invariant(
            root.id == self.project.root_node && root.stage == StageKind::Rough,
            || "root pointer or stage wrong".into(),
        )?;
        invariant(self.tree.contains(&self.project.active_node), || {
            "active node missing".into()
        })?;
        for node in self.tree.iter() {
            if let Some(p) = &node.parent {
                let parent = self.node(p)?;
                validate_stage_step(parent.stage, node.stage, node.mask.is_some())?;
            }
            invariant(node.is_completed() == node.image.is_some(), || {
                format!("node {} image/status mismatch", node.id)
            })?;
        }
        for job in self.jobs.values() {
            if job.state == JobState::Done {
                let node = self.node(&job.node_id)?;
                invariant(node.is_completed(), || format!("job {} done, node not", job.id))?;
            }
        }
        Ok(())
    }
}
