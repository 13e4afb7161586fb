//! Image generation backends.
//!
//! A backend turns a [`GenerationRequest`] into an [`ImageBlob`]. Inputs the
//! request refers to by digest (base image, mask, control image) are fetched
//! through a [`BlobSource`]. `generate` blocks; [`submit`] runs it on a thread
//! and hands back a [`BackendJob`].

mod cache;
mod mock;
mod remote;

use std::collections::BTreeSet;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{CachedBackend, DEFAULT_CACHE_ENTRIES};
pub use mock::{mock_fill, mock_generate, MockBackend, SplitMix64};
pub use remote::{
    RemoteBackend, RemoteConfig, WireGenerateRequest, WireJobState, WireJobStatus, WireSubmitted,
    DEFAULT_REMOTE_TIMEOUT,
};

use crate::digest::Digest;
use crate::raster::{ImageBlob, RasterError};
use crate::request::{GenerationRequest, RequestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    ControlImage,
    Inpaint,
    Img2Img,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Mock,
    RemoteDiffusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub capabilities: BTreeSet<Capability>,
}

impl BackendDescriptor {
    pub fn all_capabilities() -> BTreeSet<Capability> {
        [Capability::ControlImage, Capability::Inpaint, Capability::Img2Img]
            .into_iter()
            .collect()
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::RemoteDiffusion if self.endpoint.is_none() => Err(
                BackendError::Config("remote diffusion backend requires an endpoint".into()),
            ),
            BackendKind::Mock if self.capabilities != Self::all_capabilities() => Err(
                BackendError::Config("mock backend must declare every capability".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Capabilities `request` needs that this backend lacks.
    pub fn missing_for(&self, request: &GenerationRequest) -> Vec<Capability> {
        required_capabilities(request)
            .into_iter()
            .filter(|c| !self.capabilities.contains(c))
            .collect()
    }
}

pub fn required_capabilities(request: &GenerationRequest) -> BTreeSet<Capability> {
    let mut needed = BTreeSet::new();
    if request.mask.is_some() {
        needed.insert(Capability::Inpaint);
    } else if request.base_image.is_some() {
        needed.insert(Capability::Img2Img);
    }
    if request.control_image.is_some() {
        needed.insert(Capability::ControlImage);
    }
    needed
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend lacks capability {0:?}")]
    MissingCapability(Vec<Capability>),
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
    #[error("input blob {digest}: {reason}")]
    Input { digest: Digest, reason: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server error: {0}")]
    Server(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("timeout")]
    Timeout,
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("raster error: {0}")]
    Raster(String),
}

impl From<RasterError> for BackendError {
    fn from(e: RasterError) -> Self {
        BackendError::Raster(e.to_string())
    }
}

/// Read access to stored blobs by digest.
pub trait BlobSource: Send + Sync {
    fn fetch(&self, digest: &Digest) -> Result<Vec<u8>, BackendError>;
}

impl<F> BlobSource for F
where
    F: Fn(&Digest) -> Option<Vec<u8>> + Send + Sync,
{
    fn fetch(&self, digest: &Digest) -> Result<Vec<u8>, BackendError> {
        self(digest).ok_or_else(|| BackendError::Input {
            digest: *digest,
            reason: "not found".into(),
        })
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Produces the image for `request`, blocking until done.
    fn generate(
        &self,
        request: &GenerationRequest,
        blobs: &dyn BlobSource,
    ) -> Result<ImageBlob, BackendError>;

    /// Rejects requests this backend cannot serve, before any work or I/O.
    fn precheck(&self, request: &GenerationRequest) -> Result<(), BackendError> {
        request.validate()?;
        let missing = self.descriptor().missing_for(request);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(BackendError::MissingCapability(missing))
        }
    }
}

/// Handle to a generation running on its own thread.
pub struct BackendJob {
    rx: mpsc::Receiver<Result<ImageBlob, BackendError>>,
}

impl BackendJob {
    pub fn wait(self) -> Result<ImageBlob, BackendError> {
        self.rx
            .recv()
            .unwrap_or_else(|_| Err(BackendError::Transport("worker vanished".into())))
    }

    pub fn wait_timeout(self, timeout: Duration) -> Result<ImageBlob, BackendError> {
        match self.rx.recv_timeout(timeout) {
            Ok(result) => result,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(BackendError::Timeout),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(BackendError::Transport("worker vanished".into()))
            }
        }
    }
}

/// Prechecks synchronously, then runs the generation on a new thread.
pub fn submit(
    backend: Arc<dyn Backend>,
    request: GenerationRequest,
    blobs: Arc<dyn BlobSource>,
) -> Result<BackendJob, BackendError> {
    backend.precheck(&request)?;
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(backend.generate(&request, blobs.as_ref()));
    });
    Ok(BackendJob { rx })
}
