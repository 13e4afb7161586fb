//! Client for an external diffusion server speaking the `/v1/generate` +
//! `/v1/jobs/{id}` polling protocol.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::backend::{Backend, BackendDescriptor, BackendError, BackendKind, BlobSource, Capability};
use crate::digest::Digest;
use crate::raster::{ImageBlob, Rgba};
use crate::request::GenerationRequest;
use crate::stage::StageKind;

pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Overall budget for one generation, submit through final poll.
    pub timeout: Duration,
    pub poll_interval: Duration,
    pub capabilities: BTreeSet<Capability>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: DEFAULT_REMOTE_TIMEOUT,
            poll_interval: Duration::from_millis(200),
            capabilities: BackendDescriptor::all_capabilities(),
        }
    }
}

/// Body of `POST {endpoint}/v1/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireGenerateRequest {
    pub stage: StageKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_prompt: Option<String>,
    pub seed: u64,
    pub strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_strength: Option<f64>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_image_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSubmitted {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireJobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireJobStatus {
    pub state: WireJobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    descriptor: BackendDescriptor,
    agent: Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let descriptor = BackendDescriptor {
            name: "remote-diffusion".into(),
            kind: BackendKind::RemoteDiffusion,
            endpoint: Some(config.endpoint.clone()),
            capabilities: config.capabilities.clone(),
        };
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        RemoteBackend {
            config,
            descriptor,
            agent,
        }
    }

    pub fn wire_request(
        request: &GenerationRequest,
        blobs: &dyn BlobSource,
    ) -> Result<WireGenerateRequest, BackendError> {
        let encode = |d: &Option<Digest>| -> Result<Option<String>, BackendError> {
            d.as_ref()
                .map(|d| blobs.fetch(d).map(|bytes| B64.encode(bytes)))
                .transpose()
        };
        Ok(WireGenerateRequest {
            stage: request.stage,
            prompt: request.prompt.clone(),
            negative_prompt: request.negative_prompt.clone(),
            seed: request.seed,
            strength: request.params.strength,
            control_strength: request
                .control_image
                .map(|_| request.params.control_strength),
            width: request.canvas.width,
            height: request.canvas.height,
            base_image_b64: encode(&request.base_image)?,
            mask_b64: encode(&request.mask)?,
            control_image_b64: encode(&request.control_image)?,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint, path)
    }

    fn cancel(&self, job_id: &str) {
        if let Err(e) = self.agent.delete(self.url(&format!("/v1/jobs/{job_id}"))).call() {
            tracing::warn!(job_id, error = %e, "remote cancel failed");
        }
    }

    fn read_error(mut response: ureq::http::Response<ureq::Body>) -> BackendError {
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().unwrap_or_default();
        let message = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| {
                v.get("error")
                    .or_else(|| v.get("message"))
                    .and_then(|m| m.as_str().map(str::to_string))
            })
            .unwrap_or(text);
        BackendError::Server(format!("HTTP {status}: {message}"))
    }
}

fn transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(
        &self,
        request: &GenerationRequest,
        blobs: &dyn BlobSource,
    ) -> Result<ImageBlob, BackendError> {
        self.precheck(request)?;
        let deadline = Instant::now() + self.config.timeout;
        let body = Self::wire_request(request, blobs)?;

        let mut response = self
            .agent
            .post(self.url("/v1/generate"))
            .send_json(&body)
            .map_err(transport)?;
        if !response.status().is_success() {
            return Err(Self::read_error(response));
        }
        let submitted: WireSubmitted = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;

        loop {
            if Instant::now() >= deadline {
                self.cancel(&submitted.job_id);
                return Err(BackendError::Timeout);
            }
            let polled = self
                .agent
                .get(self.url(&format!("/v1/jobs/{}", submitted.job_id)))
                .call();
            let mut response = match polled {
                Ok(r) => r,
                Err(ureq::Error::Timeout(_)) => {
                    self.cancel(&submitted.job_id);
                    return Err(BackendError::Timeout);
                }
                Err(e) => return Err(transport(e)),
            };
            if !response.status().is_success() {
                return Err(Self::read_error(response));
            }
            let status: WireJobStatus = response
                .body_mut()
                .read_json()
                .map_err(|e| BackendError::Malformed(e.to_string()))?;
            match status.state {
                WireJobState::Queued | WireJobState::Running => {
                    let left = deadline.saturating_duration_since(Instant::now());
                    std::thread::sleep(self.config.poll_interval.min(left));
                }
                WireJobState::Failed => {
                    return Err(BackendError::Server(
                        status.error.unwrap_or_else(|| "remote job failed".into()),
                    ))
                }
                WireJobState::Done => {
                    let b64 = status
                        .image_b64
                        .ok_or_else(|| BackendError::Malformed("done without image_b64".into()))?;
                    let bytes = B64
                        .decode(b64.as_bytes())
                        .map_err(|e| BackendError::Malformed(e.to_string()))?;
                    let raster = Rgba::decode_png(&bytes)
                        .map_err(|e| BackendError::Malformed(e.to_string()))?;
                    if raster.canvas != request.canvas {
                        return Err(BackendError::Malformed(format!(
                            "image is {}, requested {}",
                            raster.canvas, request.canvas
                        )));
                    }
                    // Re-encode so stored bytes follow the local PNG settings.
                    return Ok(ImageBlob::from_rgba(&raster)?);
                }
            }
        }
    }
}
