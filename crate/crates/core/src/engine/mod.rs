//! The pipeline engine: project lifecycle, stage operations on the version
//! tree, and the generation job queue.
//!
//! Every state change is an [`Event`] committed through one path: validate
//! against the in-memory [`ProjectState`], append to the store, apply, then
//! publish. Each project has its own mutex, so writes to one project are
//! serialized while different projects proceed in parallel. Jobs run on a
//! fixed worker pool fed by a single FIFO queue; with `parallel_jobs == 0`
//! they run inline inside [`Engine::generate`].

mod error;
mod worker;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::Utc;
use tokio::sync::broadcast;

pub use error::{EngineError, ErrorClass, ERROR_CODES};

use crate::backend::{Backend, CachedBackend, DEFAULT_CACHE_ENTRIES};
use crate::compare::{diff_params, diff_prompts, ComparedNode, ComparisonReport};
use crate::digest::Digest;
use crate::event::{Event, EventRecord};
use crate::export::TreeDocument;
use crate::ids::{IdGen, JobId, NodeId, ProjectId};
use crate::job::{Job, JobState};
use crate::node::{validate_child, NodeOrigin, NodeStatus, Project, VersionNode};
use crate::params::{Canvas, GenerationParams};
use crate::prompt::{merge_subject, render_prompt};
use crate::raster::{ImageBlob, MaskRegion, Rgba};
use crate::request::GenerationRequest;
use crate::stage::StageKind;
use crate::state::ProjectState;
use crate::store::{referenced_digests, Store, StoreError, DEFAULT_SNAPSHOT_EVERY};
use crate::tutor::{assemble_context, Tutor, TutorConfig, TutorExchange};

pub const DEFAULT_PARALLEL_JOBS: usize = 2;
const EVENT_CHANNEL_CAPACITY: usize = 4096;

/// Called after every commit with the post-commit state, under the project lock.
pub type CommitObserver = Arc<dyn Fn(&ProjectId, &ProjectState, &EventRecord) + Send + Sync>;

#[derive(Clone)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    /// Worker threads for generation jobs; 0 runs jobs inline.
    pub parallel_jobs: usize,
    /// Result cache size; 0 disables the cache.
    pub cache_entries: usize,
    /// Write a snapshot whenever the event count is a multiple of this; 0 never.
    pub snapshot_every: u64,
    pub sync_writes: bool,
    /// Fixed seed for ids and default seeds, making sessions reproducible.
    pub id_seed: Option<u64>,
    pub tutor: TutorConfig,
    pub default_canvas: Canvas,
    pub observer: Option<CommitObserver>,
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        EngineConfig {
            data_dir: data_dir.into(),
            parallel_jobs: DEFAULT_PARALLEL_JOBS,
            cache_entries: DEFAULT_CACHE_ENTRIES,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            sync_writes: true,
            id_seed: None,
            tutor: TutorConfig::default(),
            default_canvas: Canvas::DEFAULT,
            observer: None,
        }
    }
}

/// A committed event tagged with its project, as broadcast to subscribers.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectEvent {
    pub project: ProjectId,
    pub record: EventRecord,
}

/// Optional overrides for [`Engine::regenerate`]; unset fields are inherited.
#[derive(Debug, Clone, Default)]
pub struct RegenerateOptions {
    /// Replacement subject text; the stage template is applied to it.
    pub prompt: Option<String>,
    pub negative_prompt: Option<String>,
    /// Defaults to a fresh random seed.
    pub seed: Option<u64>,
    pub params: Option<GenerationParams>,
}

struct Slot {
    state: ProjectState,
    log: Vec<EventRecord>,
}

struct QueuedJob {
    project: ProjectId,
    job: JobId,
}

pub(crate) struct Shared {
    store: Store,
    backend: Arc<dyn Backend>,
    cache: Option<Arc<CachedBackend>>,
    ids: IdGen,
    tutor: Tutor,
    snapshot_every: u64,
    observer: Option<CommitObserver>,
    projects: RwLock<HashMap<ProjectId, Arc<Mutex<Slot>>>>,
    node_index: RwLock<HashMap<NodeId, ProjectId>>,
    job_index: RwLock<HashMap<JobId, ProjectId>>,
    blob_index: RwLock<HashMap<Digest, ProjectId>>,
    events: broadcast::Sender<ProjectEvent>,
    commits: Mutex<u64>,
    committed: Condvar,
}

pub struct Engine {
    shared: Arc<Shared>,
    queue: Mutex<Option<mpsc::Sender<QueuedJob>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    inline: bool,
    skipped: Vec<(ProjectId, String)>,
}

fn lock(slot: &Mutex<Slot>) -> MutexGuard<'_, Slot> {
    slot.lock().expect("project lock poisoned")
}

impl Engine {
    /// Opens the data directory, replays every project found there, starts
    /// the worker pool and resumes jobs that had not finished.
    pub fn open(config: EngineConfig, backend: Arc<dyn Backend>) -> Result<Self, EngineError> {
        backend.descriptor().validate()?;
        let store = Store::open(&config.data_dir, config.sync_writes)?;
        let (cache, backend): (Option<Arc<CachedBackend>>, Arc<dyn Backend>) =
            if config.cache_entries > 0 {
                let cached = Arc::new(CachedBackend::new(backend, config.cache_entries));
                (Some(cached.clone()), cached)
            } else {
                (None, backend)
            };
        let ids = match config.id_seed {
            Some(seed) => IdGen::seeded(seed),
            None => IdGen::random(),
        };
        let (events, _) = broadcast::channel(EVENT_CHANNEL_CAPACITY);
        let shared = Arc::new(Shared {
            store,
            backend,
            cache,
            ids,
            tutor: Tutor::new(config.tutor.clone()),
            snapshot_every: config.snapshot_every,
            observer: config.observer.clone(),
            projects: RwLock::new(HashMap::new()),
            node_index: RwLock::new(HashMap::new()),
            job_index: RwLock::new(HashMap::new()),
            blob_index: RwLock::new(HashMap::new()),
            events,
            commits: Mutex::new(0),
            committed: Condvar::new(),
        });

        let mut skipped = Vec::new();
        let mut resume = Vec::new();
        for pid in shared.store.list_projects()? {
            match shared.store.replay(&pid) {
                Ok(replayed) => {
                    for job in replayed.state.jobs.values() {
                        if !job.state.is_terminal() {
                            resume.push(QueuedJob {
                                project: pid.clone(),
                                job: job.id.clone(),
                            });
                        }
                    }
                    shared.register(&pid, replayed.state, replayed.log);
                }
                Err(e) => {
                    tracing::error!(project = %pid, error = %e, "skipping unreadable project");
                    skipped.push((pid, e.to_string()));
                }
            }
        }

        let inline = config.parallel_jobs == 0;
        let mut engine = Engine {
            shared,
            queue: Mutex::new(None),
            workers: Mutex::new(Vec::new()),
            inline,
            skipped,
        };
        if !inline {
            let (tx, rx) = mpsc::channel::<QueuedJob>();
            let rx = Arc::new(Mutex::new(rx));
            let workers = (0..config.parallel_jobs)
                .map(|i| {
                    let shared = engine.shared.clone();
                    let rx = rx.clone();
                    std::thread::Builder::new()
                        .name(format!("gen-worker-{i}"))
                        .spawn(move || worker::run(shared, rx))
                        .expect("spawn worker")
                })
                .collect();
            engine.queue = Mutex::new(Some(tx));
            engine.workers = Mutex::new(workers);
        }
        for queued in resume {
            engine.dispatch(queued);
        }
        Ok(engine)
    }

    /// Projects that failed to replay when the engine was opened.
    pub fn skipped_projects(&self) -> &[(ProjectId, String)] {
        &self.skipped
    }

    pub fn store(&self) -> &Store {
        &self.shared.store
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.shared.backend
    }

    pub fn cache(&self) -> Option<&Arc<CachedBackend>> {
        self.shared.cache.as_ref()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ProjectEvent> {
        self.shared.events.subscribe()
    }

    fn dispatch(&self, queued: QueuedJob) {
        if self.inline {
            self.shared.run_job(&queued.project, &queued.job);
            return;
        }
        let sent = self
            .queue
            .lock()
            .expect("queue poisoned")
            .as_ref()
            .map(|tx| tx.send(queued));
        if !matches!(sent, Some(Ok(()))) {
            tracing::error!("job queue closed; job left queued");
        }
    }

    // ---- project lifecycle -------------------------------------------------

    /// Creates a project whose root is a draft rough-sketch node for `theme`.
    pub fn create_project(
        &self,
        theme: &str,
        canvas: Option<Canvas>,
        seed: Option<u64>,
    ) -> Result<Project, EngineError> {
        let theme = theme.trim();
        if theme.is_empty() {
            return Err(EngineError::EmptyTheme);
        }
        let canvas = canvas.unwrap_or(Canvas::DEFAULT);
        canvas.validate()?;
        let s = &self.shared;
        let now = Utc::now();
        let pid = s.ids.project();
        let root_id = s.ids.node();
        let root = VersionNode {
            id: root_id.clone(),
            project_id: pid.clone(),
            parent: None,
            stage: StageKind::Rough,
            origin: NodeOrigin::Root,
            subject: theme.to_string(),
            prompt: render_prompt(StageKind::Rough, theme),
            negative_prompt: None,
            seed: seed.unwrap_or_else(|| s.ids.seed()),
            params: GenerationParams::default(),
            image: None,
            control_image: None,
            mask: None,
            status: NodeStatus::Draft,
            created_at: now,
            label: None,
        };
        let project = Project {
            id: pid.clone(),
            theme: theme.to_string(),
            canvas_size: canvas,
            created_at: now,
            root_node: root_id.clone(),
            active_node: root_id,
        };
        let genesis = Event::ProjectCreated {
            project: project.clone(),
            root,
        };
        let record = s.store.create_project(&pid, genesis, now)?;
        let state = ProjectState::genesis(&record)?;
        let slot = s.register(&pid, state, vec![record.clone()]);
        {
            let guard = lock(&slot);
            s.after_commit(&pid, &guard.state, &record);
        }
        Ok(project)
    }

    pub fn project(&self, id: &ProjectId) -> Result<Project, EngineError> {
        let slot = self.shared.slot(id)?;
        let project = lock(&slot).state.project.clone();
        Ok(project)
    }

    pub fn list_projects(&self) -> Vec<Project> {
        let slots: Vec<_> = self
            .shared
            .projects
            .read()
            .expect("projects poisoned")
            .values()
            .cloned()
            .collect();
        let mut out: Vec<Project> = slots.iter().map(|s| lock(s).state.project.clone()).collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        out
    }

    /// Clone of the full in-memory state of a project.
    pub fn state(&self, id: &ProjectId) -> Result<ProjectState, EngineError> {
        let slot = self.shared.slot(id)?;
        let state = lock(&slot).state.clone();
        Ok(state)
    }

    pub fn node(&self, id: &NodeId) -> Result<VersionNode, EngineError> {
        let (_, slot) = self.shared.slot_for_node(id)?;
        let guard = lock(&slot);
        Ok(guard.state.node(id)?.clone())
    }

    pub fn job(&self, id: &JobId) -> Result<Job, EngineError> {
        let pid = self
            .shared
            .job_index
            .read()
            .expect("job index poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::JobNotFound(id.clone()))?;
        let slot = self.shared.slot(&pid)?;
        let guard = lock(&slot);
        Ok(guard.state.job(id)?.clone())
    }

    /// The project's version tree as a stable export document.
    pub fn export_tree(&self, id: &ProjectId) -> Result<TreeDocument, EngineError> {
        let slot = self.shared.slot(id)?;
        let doc = TreeDocument::from_state(&lock(&slot).state);
        Ok(doc)
    }

    pub fn lineage(&self, id: &NodeId) -> Result<Vec<NodeId>, EngineError> {
        let (_, slot) = self.shared.slot_for_node(id)?;
        let guard = lock(&slot);
        guard
            .state
            .tree
            .lineage(id)
            .map_err(|e| EngineError::Apply(e.into()))
    }

    /// Events with `seq >= from`, in order.
    pub fn events_since(&self, id: &ProjectId, from: u64) -> Result<Vec<EventRecord>, EngineError> {
        let slot = self.shared.slot(id)?;
        let guard = lock(&slot);
        let start = (from as usize).min(guard.log.len());
        Ok(guard.log[start..].to_vec())
    }

    pub fn exchanges(&self, id: &ProjectId) -> Result<Vec<TutorExchange>, EngineError> {
        let slot = self.shared.slot(id)?;
        let exchanges = lock(&slot).state.exchanges.clone();
        Ok(exchanges)
    }

    /// Raw bytes of any blob known to the engine.
    pub fn blob(&self, digest: &Digest) -> Result<Vec<u8>, EngineError> {
        let pid = self
            .shared
            .blob_index
            .read()
            .expect("blob index poisoned")
            .get(digest)
            .cloned()
            .ok_or(EngineError::BlobNotFound(*digest))?;
        self.shared
            .store
            .get_blob(&pid, digest)
            .map_err(|e| match e {
                StoreError::BlobNotFound(d) => EngineError::BlobNotFound(d),
                other => other.into(),
            })
    }

    // ---- stage operations --------------------------------------------------

    /// Queues generation for a draft (or failed) node.
    pub fn generate(&self, node_id: &NodeId) -> Result<Job, EngineError> {
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let job = {
            let mut guard = lock(&slot);
            let node = guard.state.node(node_id)?.clone();
            match node.status {
                NodeStatus::Pending => return Err(EngineError::AlreadyPending(node.id)),
                NodeStatus::Completed => return Err(EngineError::AlreadyCompleted(node.id)),
                NodeStatus::Draft | NodeStatus::Failed => {}
            }
            let request = build_request(&guard.state, &node)?;
            s.backend.precheck(&request)?;
            let job = Job {
                id: s.ids.job(),
                node_id: node.id.clone(),
                request,
                state: JobState::Queued,
                error: None,
                submitted_at: Utc::now(),
                finished_at: None,
            };
            s.commit(&pid, &mut guard, Event::JobQueued { job: job.clone() })?;
            guard.state.job(&job.id)?.clone()
        };
        self.dispatch(QueuedJob {
            project: pid,
            job: job.id.clone(),
        });
        Ok(job)
    }

    /// Creates a draft child at the next stage. The subject gains
    /// `prompt_delta` and the next stage's template; the seed is inherited
    /// unless `seed` overrides it.
    pub fn advance_stage(
        &self,
        node_id: &NodeId,
        prompt_delta: &str,
        seed: Option<u64>,
    ) -> Result<VersionNode, EngineError> {
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let mut guard = lock(&slot);
        let parent = completed(&guard.state, node_id)?;
        let next = parent
            .stage
            .next()
            .ok_or_else(|| EngineError::NoNextStage(node_id.clone()))?;
        validate_child(&parent, next, false)?;
        let subject = merge_subject(&parent.subject, prompt_delta);
        let child = VersionNode {
            id: s.ids.node(),
            project_id: pid.clone(),
            parent: Some(parent.id.clone()),
            stage: next,
            origin: NodeOrigin::Advance,
            prompt: render_prompt(next, &subject),
            subject,
            negative_prompt: parent.negative_prompt.clone(),
            seed: seed.unwrap_or(parent.seed),
            params: without_control(&parent.params),
            image: None,
            control_image: None,
            mask: None,
            status: NodeStatus::Draft,
            created_at: Utc::now(),
            label: None,
        };
        s.commit(&pid, &mut guard, Event::NodeCreated { node: child.clone() })?;
        Ok(child)
    }

    /// Creates a same-stage draft child with the given overrides.
    pub fn regenerate(
        &self,
        node_id: &NodeId,
        options: RegenerateOptions,
    ) -> Result<VersionNode, EngineError> {
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let mut guard = lock(&slot);
        let parent = completed(&guard.state, node_id)?;
        let subject = match options.prompt {
            Some(p) if p.trim().is_empty() => return Err(EngineError::EmptyPrompt),
            Some(p) => p.trim().to_string(),
            None => parent.subject.clone(),
        };
        let mut params = match options.params {
            Some(p) => p.normalized()?,
            None => parent.params.clone(),
        };
        params.control_source = parent.params.control_source;
        let child = VersionNode {
            id: s.ids.node(),
            project_id: pid.clone(),
            parent: Some(parent.id.clone()),
            stage: parent.stage,
            origin: NodeOrigin::Regenerate,
            prompt: render_prompt(parent.stage, &subject),
            subject,
            negative_prompt: options.negative_prompt.or_else(|| parent.negative_prompt.clone()),
            seed: options.seed.unwrap_or_else(|| s.ids.seed()),
            params,
            image: None,
            control_image: parent.control_image,
            mask: None,
            status: NodeStatus::Draft,
            created_at: Utc::now(),
            label: None,
        };
        s.commit(&pid, &mut guard, Event::NodeCreated { node: child.clone() })?;
        Ok(child)
    }

    /// Creates a same-stage draft child that regenerates only the masked region.
    pub fn inpaint(
        &self,
        node_id: &NodeId,
        mask: &MaskRegion,
        region_prompt: &str,
    ) -> Result<VersionNode, EngineError> {
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let mut guard = lock(&slot);
        let parent = completed(&guard.state, node_id)?;
        let canvas = guard.state.project.canvas_size;
        if mask.canvas() != canvas {
            return Err(EngineError::DimensionMismatch {
                expected: canvas,
                actual: mask.canvas(),
            });
        }
        if mask.is_empty() {
            return Err(EngineError::EmptySelection);
        }
        let png = mask
            .to_png()
            .map_err(|e| EngineError::UndecodableImage(e.to_string()))?;
        let mask_digest = s.put_blob(&pid, &png)?;
        let subject = merge_subject(&parent.subject, region_prompt);
        let child = VersionNode {
            id: s.ids.node(),
            project_id: pid.clone(),
            parent: Some(parent.id.clone()),
            stage: parent.stage,
            origin: NodeOrigin::Inpaint,
            prompt: render_prompt(parent.stage, &subject),
            subject,
            negative_prompt: parent.negative_prompt.clone(),
            seed: parent.seed,
            params: without_control(&parent.params),
            image: None,
            control_image: None,
            mask: Some(mask_digest),
            status: NodeStatus::Draft,
            created_at: Utc::now(),
            label: None,
        };
        s.commit(&pid, &mut guard, Event::NodeCreated { node: child.clone() })?;
        Ok(child)
    }

    /// Attaches a user sketch as the control image of a draft node, scaling
    /// it (nearest neighbour) to the canvas when sizes differ.
    pub fn attach_control_image(
        &self,
        node_id: &NodeId,
        image_bytes: &[u8],
    ) -> Result<VersionNode, EngineError> {
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let mut guard = lock(&slot);
        let node = guard.state.node(node_id)?.clone();
        if node.status != NodeStatus::Draft {
            return Err(EngineError::NotDraft(node.id));
        }
        let raster =
            Rgba::decode_png(image_bytes).map_err(|e| EngineError::UndecodableImage(e.to_string()))?;
        let canvas = guard.state.project.canvas_size;
        let mut params = node.params.clone();
        params.control_source = (raster.canvas != canvas).then_some(raster.canvas);
        let blob = ImageBlob::from_rgba(&raster.resize_nearest(canvas))
            .map_err(|e| EngineError::UndecodableImage(e.to_string()))?;
        let digest = s.put_blob(&pid, &blob.bytes)?;
        s.commit(
            &pid,
            &mut guard,
            Event::ControlAttached {
                node_id: node_id.clone(),
                control_image: digest,
                params,
            },
        )?;
        Ok(guard.state.node(node_id)?.clone())
    }

    /// Points the project at `node_id`. Nothing is modified or deleted;
    /// activating the current node is a no-op.
    pub fn activate(&self, project_id: &ProjectId, node_id: &NodeId) -> Result<Project, EngineError> {
        let s = &self.shared;
        let slot = s.slot(project_id)?;
        let mut guard = lock(&slot);
        if !guard.state.tree.contains(node_id) {
            let owner = s.node_index.read().expect("node index poisoned").get(node_id).cloned();
            return Err(match owner {
                Some(_) => EngineError::ForeignNode {
                    node: node_id.clone(),
                    project: project_id.clone(),
                },
                None => EngineError::NodeNotFound(node_id.clone()),
            });
        }
        if &guard.state.project.active_node != node_id {
            s.commit(
                project_id,
                &mut guard,
                Event::Activated {
                    node_id: node_id.clone(),
                },
            )?;
        }
        Ok(guard.state.project.clone())
    }

    pub fn label(&self, node_id: &NodeId, label: &str) -> Result<VersionNode, EngineError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(EngineError::EmptyLabel);
        }
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let mut guard = lock(&slot);
        s.commit(
            &pid,
            &mut guard,
            Event::NodeLabeled {
                node_id: node_id.clone(),
                label: label.to_string(),
            },
        )?;
        Ok(guard.state.node(node_id)?.clone())
    }

    /// Side-by-side report for two completed nodes of one project.
    pub fn compare(&self, a: &NodeId, b: &NodeId) -> Result<ComparisonReport, EngineError> {
        let s = &self.shared;
        let (pa, slot) = s.slot_for_node(a)?;
        let (pb, _) = s.slot_for_node(b)?;
        if pa != pb {
            return Err(EngineError::CrossProject(a.clone(), b.clone()));
        }
        let (na, nb, lca) = {
            let guard = lock(&slot);
            let na = guard.state.node(a)?.clone();
            let nb = guard.state.node(b)?.clone();
            let lca = guard
                .state
                .tree
                .lowest_common_ancestor(a, b)
                .map_err(|e| EngineError::Apply(e.into()))?;
            (na, nb, lca)
        };
        let ca = ComparedNode::of(&na).ok_or_else(|| EngineError::NotCompleted(a.clone()))?;
        let cb = ComparedNode::of(&nb).ok_or_else(|| EngineError::NotCompleted(b.clone()))?;
        let decode = |d: &Digest| -> Result<Rgba, EngineError> {
            let bytes = s.store.get_blob(&pa, d)?;
            Rgba::decode_png(&bytes).map_err(|e| EngineError::UndecodableImage(e.to_string()))
        };
        let ra = decode(&ca.image)?;
        let rb = decode(&cb.image)?;
        let differing_pixels = ra
            .count_differing(&rb)
            .map_err(|e| EngineError::UndecodableImage(e.to_string()))?;
        Ok(ComparisonReport {
            prompt_diff: diff_prompts(&ca.prompt, &cb.prompt),
            params_diff: diff_params(&ca, &cb),
            total_pixels: ra.canvas.pixels() as u64,
            differing_pixels,
            lowest_common_ancestor: lca,
            a: ca,
            b: cb,
        })
    }

    // ---- tutor ---------------------------------------------------------------

    /// Asks the tutor about `node_id` and records the exchange.
    pub fn ask(&self, node_id: &NodeId, question: &str) -> Result<TutorExchange, EngineError> {
        let s = &self.shared;
        let (pid, slot) = s.slot_for_node(node_id)?;
        let context = {
            let guard = lock(&slot);
            let node = guard.state.node(node_id)?;
            assemble_context(
                &guard.state.project,
                node,
                &guard.log,
                question,
                s.tutor.config().window,
            )?
        };
        // The remote tutor may be slow; no project lock is held while it answers.
        let (answer, source) = s.tutor.answer(&context)?;
        let exchange = TutorExchange {
            id: s.ids.exchange(),
            node_id: node_id.clone(),
            context,
            answer,
            source,
            created_at: Utc::now(),
        };
        let mut guard = lock(&slot);
        s.commit(
            &pid,
            &mut guard,
            Event::TutorAsked {
                exchange: exchange.clone(),
            },
        )?;
        Ok(exchange)
    }

    /// Asks about the project's active node.
    pub fn ask_active(&self, project_id: &ProjectId, question: &str) -> Result<TutorExchange, EngineError> {
        let active = self.project(project_id)?.active_node;
        self.ask(&active, question)
    }

    // ---- waiting -------------------------------------------------------------

    fn wait_until<T>(
        &self,
        timeout: Duration,
        mut check: impl FnMut() -> Result<Option<T>, EngineError>,
    ) -> Result<T, EngineError> {
        let deadline = Instant::now() + timeout;
        loop {
            let seen = *self.shared.commits.lock().expect("commit counter poisoned");
            if let Some(v) = check()? {
                return Ok(v);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(EngineError::WaitTimeout);
            }
            let guard = self.shared.commits.lock().expect("commit counter poisoned");
            let _ = self
                .shared
                .committed
                .wait_timeout_while(guard, deadline - now, |c| *c == seen)
                .expect("commit counter poisoned");
        }
    }

    /// Blocks until the node is completed or failed.
    pub fn wait_for_node(&self, node_id: &NodeId, timeout: Duration) -> Result<VersionNode, EngineError> {
        self.wait_until(timeout, || {
            let node = self.node(node_id)?;
            Ok(matches!(node.status, NodeStatus::Completed | NodeStatus::Failed).then_some(node))
        })
    }

    pub fn wait_for_job(&self, job_id: &JobId, timeout: Duration) -> Result<Job, EngineError> {
        self.wait_until(timeout, || {
            let job = self.job(job_id)?;
            Ok(job.state.is_terminal().then_some(job))
        })
    }

    /// Blocks until every job of the project is done or failed.
    pub fn wait_idle(&self, project_id: &ProjectId, timeout: Duration) -> Result<(), EngineError> {
        self.wait_until(timeout, || {
            let state = self.state(project_id)?;
            Ok(state.jobs.values().all(|j| j.state.is_terminal()).then_some(()))
        })
    }

    /// Stops accepting jobs and joins the workers once the queue drains.
    pub fn shutdown(&self) {
        self.queue.lock().expect("queue poisoned").take();
        let workers = std::mem::take(&mut *self.workers.lock().expect("workers poisoned"));
        for w in workers {
            let _ = w.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn completed(state: &ProjectState, id: &NodeId) -> Result<VersionNode, EngineError> {
    let node = state.node(id)?;
    if node.status != NodeStatus::Completed {
        return Err(EngineError::NotCompleted(id.clone()));
    }
    Ok(node.clone())
}

fn without_control(params: &GenerationParams) -> GenerationParams {
    GenerationParams {
        control_source: None,
        ..params.clone()
    }
}

/// Request for generating `node`. Non-rough nodes build on their parent's
/// image; rough nodes only do so when inpainting.
pub fn build_request(state: &ProjectState, node: &VersionNode) -> Result<GenerationRequest, EngineError> {
    let base_image = match &node.parent {
        None => None,
        Some(_) if node.stage == StageKind::Rough && node.mask.is_none() => None,
        Some(p) => {
            let parent = state.node(p)?;
            Some(
                parent
                    .image
                    .ok_or_else(|| EngineError::NotCompleted(parent.id.clone()))?,
            )
        }
    };
    let request = GenerationRequest {
        stage: node.stage,
        prompt: node.prompt.clone(),
        negative_prompt: node.negative_prompt.clone(),
        base_image,
        mask: node.mask,
        control_image: node.control_image,
        seed: node.seed,
        params: node.params.clone(),
        canvas: state.project.canvas_size,
    };
    request.validate()?;
    Ok(request)
}

impl Shared {
    fn register(&self, pid: &ProjectId, state: ProjectState, log: Vec<EventRecord>) -> Arc<Mutex<Slot>> {
        {
            let mut nodes = self.node_index.write().expect("node index poisoned");
            for node in state.tree.iter() {
                nodes.insert(node.id.clone(), pid.clone());
            }
            let mut jobs = self.job_index.write().expect("job index poisoned");
            for id in state.jobs.keys() {
                jobs.insert(id.clone(), pid.clone());
            }
            let mut blobs = self.blob_index.write().expect("blob index poisoned");
            for digest in referenced_digests(&log) {
                blobs.insert(digest, pid.clone());
            }
        }
        let slot = Arc::new(Mutex::new(Slot { state, log }));
        self.projects
            .write()
            .expect("projects poisoned")
            .insert(pid.clone(), slot.clone());
        slot
    }

    fn slot(&self, id: &ProjectId) -> Result<Arc<Mutex<Slot>>, EngineError> {
        self.projects
            .read()
            .expect("projects poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::ProjectNotFound(id.clone()))
    }

    fn slot_for_node(&self, id: &NodeId) -> Result<(ProjectId, Arc<Mutex<Slot>>), EngineError> {
        let pid = self
            .node_index
            .read()
            .expect("node index poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::NodeNotFound(id.clone()))?;
        let slot = self.slot(&pid)?;
        Ok((pid, slot))
    }

    fn put_blob(&self, pid: &ProjectId, bytes: &[u8]) -> Result<Digest, EngineError> {
        let digest = self.store.put_blob(pid, bytes)?;
        self.blob_index
            .write()
            .expect("blob index poisoned")
            .insert(digest, pid.clone());
        Ok(digest)
    }

    /// Validate, persist, apply, publish.
    fn commit(&self, pid: &ProjectId, slot: &mut Slot, event: Event) -> Result<EventRecord, EngineError> {
        slot.state.validate(&event)?;
        let record = self.store.append(pid, event, Utc::now())?;
        debug_assert_eq!(record.seq, slot.state.next_seq);
        slot.state.apply_validated(&record);
        match &record.event {
            Event::NodeCreated { node } => {
                self.node_index
                    .write()
                    .expect("node index poisoned")
                    .insert(node.id.clone(), pid.clone());
            }
            Event::JobQueued { job } => {
                self.job_index
                    .write()
                    .expect("job index poisoned")
                    .insert(job.id.clone(), pid.clone());
            }
            _ => {}
        }
        slot.log.push(record.clone());
        if self.snapshot_every > 0 && slot.state.next_seq.is_multiple_of(self.snapshot_every) {
            if let Err(e) = self.store.write_snapshot(pid, &slot.state) {
                tracing::warn!(project = %pid, error = %e, "snapshot failed");
            }
        }
        self.after_commit(pid, &slot.state, &record);
        Ok(record)
    }

    fn after_commit(&self, pid: &ProjectId, state: &ProjectState, record: &EventRecord) {
        if let Some(observer) = &self.observer {
            observer(pid, state, record);
        }
        let _ = self.events.send(ProjectEvent {
            project: pid.clone(),
            record: record.clone(),
        });
        *self.commits.lock().expect("commit counter poisoned") += 1;
        self.committed.notify_all();
    }
}
