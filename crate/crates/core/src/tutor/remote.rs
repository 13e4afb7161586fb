use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::tutor::render::{render_message, PERSONA};
use crate::tutor::{TutorContext, TutorError};

#[derive(Debug, Clone)]
pub struct RemoteTutorConfig {
    pub endpoint: String,
    pub timeout: Duration,
}

impl RemoteTutorConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteTutorConfig {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of `POST {tutor_endpoint}/v1/chat`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireChatRequest {
    pub system: String,
    pub messages: Vec<WireChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireChatResponse {
    pub content: String,
}

pub struct RemoteTutor {
    config: RemoteTutorConfig,
    agent: Agent,
}

impl RemoteTutor {
    pub fn new(config: RemoteTutorConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        RemoteTutor { config, agent }
    }

    pub fn wire_request(ctx: &TutorContext, max_actions: usize) -> WireChatRequest {
        WireChatRequest {
            system: PERSONA.trim_end().to_string(),
            messages: vec![WireChatMessage {
                role: "user".into(),
                content: render_message(ctx, max_actions),
            }],
        }
    }

    pub fn answer(&self, ctx: &TutorContext, max_actions: usize) -> Result<String, TutorError> {
        let body = Self::wire_request(ctx, max_actions);
        let mut response = self
            .agent
            .post(format!("{}/v1/chat", self.config.endpoint))
            .send_json(&body)
            .map_err(|e| TutorError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(TutorError::Transport(format!("HTTP {}: {text}", status.as_u16())));
        }
        let reply: WireChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| TutorError::Malformed(e.to_string()))?;
        if reply.content.trim().is_empty() {
            return Err(TutorError::Malformed("empty content".into()));
        }
        Ok(reply.content)
    }
}
