//! Stage-aware tutoring: context assembly from the project event log, a
//! deterministic offline rule table, and a client for a chat-completion
//! style HTTP service.

mod offline;
mod remote;
mod render;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use offline::{offline_answer, stage_rule, StageRule};
pub use remote::{RemoteTutor, RemoteTutorConfig, WireChatMessage, WireChatRequest, WireChatResponse};
pub use render::{render_message, CONTEXT_TEMPLATE, PERSONA};

use crate::event::EventRecord;
use crate::ids::{ExchangeId, NodeId};
use crate::node::{Project, VersionNode};
use crate::stage::StageKind;

pub const DEFAULT_ACTION_WINDOW: usize = 5;
pub const DEFAULT_MAX_RENDERED_ACTIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TutorContext {
    pub project_theme: String,
    pub stage: StageKind,
    pub node_prompt: String,
    /// Newest last.
    pub recent_actions: Vec<String>,
    pub question: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TutorSource {
    Offline,
    RemoteLlm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TutorExchange {
    pub id: ExchangeId,
    pub node_id: NodeId,
    pub context: TutorContext,
    pub answer: String,
    pub source: TutorSource,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TutorError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("node {node} does not belong to project {project}")]
    ForeignNode { node: String, project: String },
    #[error("tutor transport error: {0}")]
    Transport(String),
    #[error("tutor response malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone)]
pub struct TutorConfig {
    pub window: usize,
    pub max_rendered_actions: usize,
    pub remote: Option<RemoteTutorConfig>,
    pub fallback: bool,
}

impl Default for TutorConfig {
    fn default() -> Self {
        TutorConfig {
            window: DEFAULT_ACTION_WINDOW,
            max_rendered_actions: DEFAULT_MAX_RENDERED_ACTIONS,
            remote: None,
            fallback: true,
        }
    }
}

/// Builds the context the tutor sees for a question about `node`.
///
/// `log` is the project's full event log; the newest `window` entries become
/// `recent_actions`.
pub fn assemble_context(
    project: &Project,
    node: &VersionNode,
    log: &[EventRecord],
    question: &str,
    window: usize,
) -> Result<TutorContext, TutorError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(TutorError::EmptyQuestion);
    }
    if node.project_id != project.id {
        return Err(TutorError::ForeignNode {
            node: node.id.to_string(),
            project: project.id.to_string(),
        });
    }
    let start = log.len().saturating_sub(window);
    Ok(TutorContext {
        project_theme: project.theme.clone(),
        stage: node.stage,
        node_prompt: node.prompt.clone(),
        recent_actions: log[start..].iter().map(|r| r.event.summary()).collect(),
        question: question.to_string(),
    })
}

/// Answers with the remote service when configured, else (or on failure, when
/// fallback is enabled) with the offline rule table.
pub struct Tutor {
    config: TutorConfig,
    remote: Option<RemoteTutor>,
}

impl Tutor {
    pub fn new(config: TutorConfig) -> Self {
        let remote = config.remote.clone().map(RemoteTutor::new);
        Tutor { config, remote }
    }

    pub fn config(&self) -> &TutorConfig {
        &self.config
    }

    pub fn answer(&self, ctx: &TutorContext) -> Result<(String, TutorSource), TutorError> {
        let Some(remote) = &self.remote else {
            return Ok((offline_answer(ctx), TutorSource::Offline));
        };
        match remote.answer(ctx, self.config.max_rendered_actions) {
            Ok(text) => Ok((text, TutorSource::RemoteLlm)),
            Err(e) if self.config.fallback => {
                tracing::warn!(error = %e, "remote tutor failed, answering offline");
                Ok((offline_answer(ctx), TutorSource::Offline))
            }
            Err(e) => Err(e),
        }
    }
}
