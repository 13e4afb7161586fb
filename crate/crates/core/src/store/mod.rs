//! Durable per-project storage.
//!
//! ```text
//! <data-dir>/<project-id>/
//!     events.log      "SKGF1" then frames: u32 LE len | u32 LE crc32 | JSON record
//!     snapshot.bin    "SKGF1" | u64 LE seq | u32 LE crc32 | u32 LE len | JSON state
//!     blobs/ab/abcdef...   content-addressed by SHA-256
//! ```
//!
//! The log is the source of truth; snapshots only shorten replay.

mod blobs;
mod log;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};

pub use blobs::BlobDir;
pub use log::{decode_log, encode_frame, LogWriter, MAGIC};

use crate::digest::Digest;
use crate::event::{Event, EventRecord};
use crate::ids::ProjectId;
use crate::state::{ApplyError, ProjectState};

pub const EVENTS_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.bin";
pub const BLOBS_DIR: &str = "blobs";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 256;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("project {0} not found")]
    ProjectNotFound(ProjectId),
    #[error("project {0} already exists")]
    ProjectExists(ProjectId),
    #[error("corrupt event log {path}: {reason} (last valid seq: {})", last_valid_seq.map_or("none".to_string(), |s| s.to_string()))]
    CorruptLog {
        path: PathBuf,
        last_valid_seq: Option<u64>,
        reason: String,
    },
    #[error("replay of {project} failed: {source}")]
    Replay {
        project: ProjectId,
        #[source]
        source: ApplyError,
    },
    #[error("blob {0} not found")]
    BlobNotFound(Digest),
    #[error("empty blob")]
    EmptyBlob,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of loading a project from disk.
#[derive(Debug, Clone)]
pub struct Replayed {
    pub state: ProjectState,
    pub log: Vec<EventRecord>,
    /// Seq of the snapshot the fold started from, if one was used.
    pub from_snapshot: Option<u64>,
}

pub struct Store {
    root: PathBuf,
    sync: bool,
    writers: Mutex<HashMap<ProjectId, Arc<Mutex<LogWriter>>>>,
}

impl Store {
    /// Opens (creating if needed) a data directory. With `sync`, every append
    /// is fsynced before it returns.
    pub fn open(root: impl Into<PathBuf>, sync: bool) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Store {
            root,
            sync,
            writers: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_dir(&self, project: &ProjectId) -> PathBuf {
        self.root.join(project.as_str())
    }

    pub fn blobs(&self, project: &ProjectId) -> BlobDir {
        BlobDir::new(self.project_dir(project).join(BLOBS_DIR))
    }

    /// Project ids with an event log under the data directory, sorted.
    pub fn list_projects(&self) -> Result<Vec<ProjectId>, StoreError> {
        let mut out = BTreeSet::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.path().join(EVENTS_FILE).is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    out.insert(ProjectId::new(name));
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Creates the project directory and writes the genesis event at seq 0.
    pub fn create_project(
        &self,
        project: &ProjectId,
        genesis: Event,
        at: DateTime<Utc>,
    ) -> Result<EventRecord, StoreError> {
        let dir = self.project_dir(project);
        if dir.join(EVENTS_FILE).exists() {
            return Err(StoreError::ProjectExists(project.clone()));
        }
        fs::create_dir_all(dir.join(BLOBS_DIR)).map_err(io_err(&dir))?;
        let mut writer = LogWriter::create(&dir.join(EVENTS_FILE), self.sync)?;
        let record = writer.append(genesis, at)?;
        self.writers
            .lock()
            .expect("writers poisoned")
            .insert(project.clone(), Arc::new(Mutex::new(writer)));
        Ok(record)
    }

    fn writer(&self, project: &ProjectId) -> Result<Arc<Mutex<LogWriter>>, StoreError> {
        let mut writers = self.writers.lock().expect("writers poisoned");
        if let Some(w) = writers.get(project) {
            return Ok(w.clone());
        }
        let path = self.project_dir(project).join(EVENTS_FILE);
        if !path.is_file() {
            return Err(StoreError::ProjectNotFound(project.clone()));
        }
        let writer = Arc::new(Mutex::new(LogWriter::open(&path, self.sync)?));
        writers.insert(project.clone(), writer.clone());
        Ok(writer)
    }

    /// Appends an event, assigning the next seq. Durable before return when
    /// the store was opened with `sync`.
    pub fn append(
        &self,
        project: &ProjectId,
        event: Event,
        at: DateTime<Utc>,
    ) -> Result<EventRecord, StoreError> {
        let writer = self.writer(project)?;
        let mut writer = writer.lock().expect("writer poisoned");
        writer.append(event, at)
    }

    pub fn read_log(&self, project: &ProjectId) -> Result<Vec<EventRecord>, StoreError> {
        let path = self.project_dir(project).join(EVENTS_FILE);
        if !path.is_file() {
            return Err(StoreError::ProjectNotFound(project.clone()));
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        decode_log(&bytes).map_err(|(last_valid_seq, reason)| StoreError::CorruptLog {
            path,
            last_valid_seq,
            reason,
        })
    }

    pub fn put_blob(&self, project: &ProjectId, bytes: &[u8]) -> Result<Digest, StoreError> {
        self.blobs(project).put(bytes)
    }

    pub fn get_blob(&self, project: &ProjectId, digest: &Digest) -> Result<Vec<u8>, StoreError> {
        self.blobs(project).get(digest)
    }

    pub fn write_snapshot(&self, project: &ProjectId, state: &ProjectState) -> Result<(), StoreError> {
        let dir = self.project_dir(project);
        log::write_snapshot(&dir.join(SNAPSHOT_FILE), state, self.sync)
    }

    pub fn read_snapshot(&self, project: &ProjectId) -> Result<Option<ProjectState>, StoreError> {
        let path = self.project_dir(project).join(SNAPSHOT_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        Ok(log::read_snapshot(&path))
    }

    /// Rebuilds the project from snapshot (when present and consistent with
    /// the log) plus the log tail.
    pub fn replay(&self, project: &ProjectId) -> Result<Replayed, StoreError> {
        let log = self.read_log(project)?;
        let snapshot = self
            .read_snapshot(project)?
            .filter(|s| s.next_seq >= 1 && s.next_seq <= log.len() as u64);
        let wrap = |source| StoreError::Replay {
            project: project.clone(),
            source,
        };
        let (state, from_snapshot) = match snapshot {
            Some(mut state) => {
                let from = state.next_seq - 1;
                for record in &log[state.next_seq as usize..] {
                    state.apply(record).map_err(wrap)?;
                }
                (state, Some(from))
            }
            None => (ProjectState::replay(&log).map_err(wrap)?, None),
        };
        Ok(Replayed {
            state,
            log,
            from_snapshot,
        })
    }

    /// Replay ignoring any snapshot.
    pub fn replay_full(&self, project: &ProjectId) -> Result<Replayed, StoreError> {
        let log = self.read_log(project)?;
        let state = ProjectState::replay(&log).map_err(|source| StoreError::Replay {
            project: project.clone(),
            source,
        })?;
        Ok(Replayed {
            state,
            log,
            from_snapshot: None,
        })
    }

    /// Deletes blobs no event references. Returns how many were removed.
    pub fn gc_blobs(&self, project: &ProjectId) -> Result<usize, StoreError> {
        let log = self.read_log(project)?;
        let referenced = referenced_digests(&log);
        self.blobs(project).retain(|d| referenced.contains(d))
    }

    /// Replays a standalone project directory (its name is the project id).
    pub fn replay_dir(dir: &Path) -> Result<Replayed, StoreError> {
        let dir = fs::canonicalize(dir).map_err(io_err(dir))?;
        let parent = dir.parent().unwrap_or(Path::new("/")).to_path_buf();
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .map(ProjectId::new)
            .ok_or_else(|| StoreError::ProjectNotFound(ProjectId::new(dir.display().to_string())))?;
        let store = Store {
            root: parent,
            sync: false,
            writers: Mutex::new(HashMap::new()),
        };
        store.replay(&id)
    }
}

/// Every digest mentioned by any event payload.
pub fn referenced_digests(log: &[EventRecord]) -> BTreeSet<Digest> {
    let mut out = BTreeSet::new();
    let add_node = |out: &mut BTreeSet<Digest>, n: &crate::node::VersionNode| {
        out.extend(n.image.iter().chain(n.mask.iter()).chain(n.control_image.iter()));
    };
    for record in log {
        match &record.event {
            Event::ProjectCreated { root, .. } => add_node(&mut out, root),
            Event::NodeCreated { node } => add_node(&mut out, node),
            Event::ControlAttached { control_image, .. } => {
                out.insert(*control_image);
            }
            Event::JobQueued { job } => {
                let r = &job.request;
                out.extend(r.base_image.iter().chain(r.mask.iter()).chain(r.control_image.iter()));
            }
            Event::NodeCompleted { image, .. } => {
                out.insert(*image);
            }
            _ => {}
        }
    }
    out
}
