//! Command-line driver: scripted sessions, tree export and the HTTP server.

pub mod runner;
pub mod script;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sakugaflow_core::backend::{Backend, MockBackend, RemoteBackend, RemoteConfig};
use sakugaflow_core::tutor::RemoteTutorConfig;
use sakugaflow_core::{Canvas, TutorConfig};

#[derive(Debug, Parser)]
#[command(name = "sakugaflow", version, about = "Staged illustration pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run a session script and write images, tree.json and tutor.json.
    Run(RunArgs),
    /// Print the version tree of a project directory as JSON.
    Export(ExportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKindArg {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock", env = "SAKUGAFLOW_BACKEND")]
    pub backend: BackendKindArg,
    /// Base URL of the diffusion server (remote backend).
    #[arg(long, env = "SAKUGAFLOW_BACKEND_ENDPOINT")]
    pub backend_endpoint: Option<String>,
    /// Seconds allowed for one remote generation.
    #[arg(long, default_value_t = 120)]
    pub backend_timeout: u64,
    /// Base URL of the tutor chat service; the offline tutor is used without it.
    #[arg(long, env = "SAKUGAFLOW_TUTOR_ENDPOINT")]
    pub tutor_endpoint: Option<String>,
    /// Answer offline when the remote tutor fails.
    #[arg(long, value_enum, default_value = "on", env = "SAKUGAFLOW_TUTOR_FALLBACK")]
    pub tutor_fallback: Toggle,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("--backend remote requires --backend-endpoint")]
    MissingEndpoint,
    #[error("invalid size `{0}`; expected WIDTHxHEIGHT, e.g. 512x512")]
    Size(String),
}

impl BackendArgs {
    pub fn build(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        Ok(match self.backend {
            BackendKindArg::Mock => Arc::new(MockBackend::new()),
            BackendKindArg::Remote => {
                let endpoint = self.backend_endpoint.clone().ok_or(ConfigError::MissingEndpoint)?;
                let mut config = RemoteConfig::new(endpoint);
                config.timeout = Duration::from_secs(self.backend_timeout);
                Arc::new(RemoteBackend::new(config))
            }
        })
    }

    pub fn tutor(&self) -> TutorConfig {
        TutorConfig {
            remote: self.tutor_endpoint.clone().map(RemoteTutorConfig::new),
            fallback: self.tutor_fallback == Toggle::On,
            ..TutorConfig::default()
        }
    }
}

/// `WIDTHxHEIGHT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size(pub Canvas);

impl FromStr for Size {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Size(s.to_string());
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let w = w.trim().parse().map_err(|_| bad())?;
        let h = h.trim().parse().map_err(|_| bad())?;
        Canvas::new(w, h).map(Size).map_err(|_| bad())
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub script: PathBuf,
    /// Artifact directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the engine's event log and blobs here instead of a temp dir.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Seed for ids and unseeded generations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Canvas size for the project.
    #[arg(long, default_value = "512x512")]
    pub size: Size,
    /// Disable the generation result cache.
    #[arg(long)]
    pub no_cache: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// A project directory (`<data-dir>/<project-id>`).
    pub project_dir: PathBuf,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "data", env = "SAKUGAFLOW_DATA_DIR")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080", env = "SAKUGAFLOW_LISTEN")]
    pub listen: SocketAddr,
    /// Concurrent generation jobs.
    #[arg(long, default_value_t = 2, env = "SAKUGAFLOW_PARALLEL_JOBS")]
    pub parallel_jobs: usize,
    /// Result cache entries; 0 disables the cache.
    #[arg(long, default_value_t = 256)]
    pub cache_entries: usize,
    /// Browser origin allowed to call the API (repeatable; `*` for any).
    #[arg(long = "cors-origin", env = "SAKUGAFLOW_CORS_ORIGIN", value_delimiter = ',')]
    pub cors_origins: Vec<String>,
    /// Serve the built companion UI from this directory.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

impl RunArgs {
    pub fn options(&self) -> Result<runner::RunOptions, ConfigError> {
        let mut options = runner::RunOptions::new(&self.out, self.backend.build()?);
        options.data_dir = self.data_dir.clone();
        options.seed = self.seed;
        options.canvas = self.size.0;
        options.cache = !self.no_cache;
        options.tutor = self.backend.tutor();
        Ok(options)
    }
}
