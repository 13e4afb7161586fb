//! Executes a session script against an embedded engine.
//!
//! Nodes created by `project`, `advance`, `regenerate` and `inpaint` start
//! as drafts. A draft is generated (and awaited) right before the next
//! command that needs a finished node, or at the end of the script, so a
//! `control` line can still attach a sketch to it first.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use sakugaflow_core::backend::Backend;
use sakugaflow_core::{
    Canvas, Engine, EngineConfig, EngineError, MaskRegion, NodeId, NodeStatus, ProjectId,
    RegenerateOptions, StageKind, TutorConfig, TutorSource,
};
use serde::Serialize;

use crate::script::{parse, Command, ParseError, Step};

pub const DEFAULT_JOB_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Engine data directory; a temporary one is used when unset.
    pub data_dir: Option<PathBuf>,
    /// Seeds ids and default seeds, so equal scripts give equal artifacts.
    pub seed: u64,
    pub backend: Arc<dyn Backend>,
    pub cache: bool,
    pub canvas: Canvas,
    pub tutor: TutorConfig,
    pub job_timeout: Duration,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>, backend: Arc<dyn Backend>) -> Self {
        RunOptions {
            out: out.into(),
            data_dir: None,
            seed: 0,
            backend,
            cache: true,
            canvas: Canvas::DEFAULT,
            tutor: TutorConfig::default(),
            job_timeout: DEFAULT_JOB_TIMEOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}:{source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line} ({command}): {source}")]
    Step {
        line: usize,
        command: &'static str,
        #[source]
        source: EngineError,
    },
    #[error("line {line}: generation of node {node} failed: {error}")]
    Generation { line: usize, node: NodeId, error: String },
    #[error("line {line}: no node labeled `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: {path}: {reason}")]
    Input { line: usize, path: PathBuf, reason: String },
}

impl RunError {
    /// Process exit status: 2 for a malformed script, 1 for a failed step.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Parse { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub project: ProjectId,
    pub steps: usize,
    /// Completed nodes in creation order; each has `images/<id>.png`.
    pub completed: Vec<NodeId>,
}

/// Tutor exchange as written to `tutor.json`, without timestamps.
#[derive(Debug, Serialize)]
struct TutorRecord<'a> {
    node_id: &'a NodeId,
    stage: StageKind,
    question: &'a str,
    recent_actions: &'a [String],
    answer: &'a str,
    source: TutorSource,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run_script(path: &Path, options: &RunOptions) -> Result<RunReport, RunError> {
    let source = fs::read_to_string(path).map_err(io_err(path))?;
    let steps = parse(&source).map_err(|source| RunError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_steps(&steps, base, options)
}

struct Session<'a> {
    engine: Engine,
    project: ProjectId,
    base: &'a Path,
    timeout: Duration,
    /// Line of the step that created the current draft.
    draft_line: usize,
}

impl Session<'_> {
    fn active(&self) -> Result<NodeId, EngineError> {
        Ok(self.engine.project(&self.project)?.active_node)
    }

    fn generate(&self, node: &NodeId, line: usize) -> Result<(), RunError> {
        let step = |source| RunError::Step {
            line,
            command: "generate",
            source,
        };
        let job = self.engine.generate(node).map_err(step)?;
        let job = self.engine.wait_for_job(&job.id, self.timeout).map_err(step)?;
        let node = self.engine.node(node).map_err(step)?;
        if node.status != NodeStatus::Completed {
            return Err(RunError::Generation {
                line,
                node: node.id,
                error: job.error.unwrap_or_else(|| "unknown error".into()),
            });
        }
        Ok(())
    }

    /// Generates the active node if it is still a draft.
    fn flush(&self) -> Result<(), RunError> {
        let line = self.draft_line;
        let step = |source| RunError::Step {
            line,
            command: "generate",
            source,
        };
        let active = self.active().map_err(step)?;
        if self.engine.node(&active).map_err(step)?.status == NodeStatus::Draft {
            self.generate(&active, line)?;
        }
        Ok(())
    }

    fn read_input(&self, line: usize, file: &Path) -> Result<Vec<u8>, RunError> {
        let path = self.base.join(file);
        fs::read(&path).map_err(|e| RunError::Input {
            line,
            path,
            reason: e.to_string(),
        })
    }

    fn exec(&mut self, step: &Step) -> Result<(), RunError> {
        let line = step.line;
        let wrap = |source| RunError::Step {
            line,
            command: step.command.name(),
            source,
        };
        let needs_finished = !matches!(
            step.command,
            Command::Control { .. } | Command::Label { .. } | Command::Generate | Command::Project { .. }
        );
        if needs_finished {
            self.flush()?;
        }
        let e = &self.engine;
        match &step.command {
            Command::Project { .. } => unreachable!("handled when the session opens"),
            Command::Generate => {
                let active = self.active().map_err(wrap)?;
                self.generate(&active, line)?;
            }
            Command::Advance { delta } => {
                e.advance_stage(&self.active().map_err(wrap)?, delta, None)
                    .map_err(wrap)?;
                self.draft_line = line;
            }
            Command::Regenerate { seed } => {
                let options = RegenerateOptions {
                    seed: *seed,
                    ..Default::default()
                };
                e.regenerate(&self.active().map_err(wrap)?, options).map_err(wrap)?;
                self.draft_line = line;
            }
            Command::Inpaint { mask, prompt } => {
                let bytes = self.read_input(line, mask)?;
                let region = MaskRegion::from_png(&bytes).map_err(|err| RunError::Input {
                    line,
                    path: self.base.join(mask),
                    reason: err.to_string(),
                })?;
                e.inpaint(&self.active().map_err(wrap)?, &region, prompt)
                    .map_err(wrap)?;
                self.draft_line = line;
            }
            Command::Control { image } => {
                let bytes = self.read_input(line, image)?;
                e.attach_control_image(&self.active().map_err(wrap)?, &bytes)
                    .map_err(wrap)?;
            }
            Command::Activate { label } => {
                let state = e.state(&self.project).map_err(wrap)?;
                let target = state
                    .tree
                    .iter()
                    .filter(|n| n.label.as_deref() == Some(label.as_str()))
                    .last()
                    .or_else(|| state.tree.get(&NodeId::new(label.as_str())))
                    .map(|n| n.id.clone())
                    .ok_or_else(|| RunError::UnknownLabel {
                        line,
                        label: label.clone(),
                    })?;
                e.activate(&self.project, &target).map_err(wrap)?;
            }
            Command::Ask { question } => {
                e.ask(&self.active().map_err(wrap)?, question).map_err(wrap)?;
            }
            Command::Label { text } => {
                e.label(&self.active().map_err(wrap)?, text).map_err(wrap)?;
            }
        }
        Ok(())
    }

    fn write_artifacts(&self, out: &Path) -> Result<Vec<NodeId>, RunError> {
        let state = self.engine.state(&self.project).map_err(|source| RunError::Step {
            line: 0,
            command: "export",
            source,
        })?;
        let images = out.join("images");
        fs::create_dir_all(&images).map_err(io_err(&images))?;
        let mut completed = Vec::new();
        for node in state.tree.iter() {
            let (NodeStatus::Completed, Some(digest)) = (node.status, node.image) else {
                continue;
            };
            let bytes = self.engine.blob(&digest).map_err(|source| RunError::Step {
                line: 0,
                command: "export",
                source,
            })?;
            let path = images.join(format!("{}.png", node.id));
            fs::write(&path, bytes).map_err(io_err(&path))?;
            completed.push(node.id.clone());
        }
        let tree = self.engine.export_tree(&self.project).map_err(|source| RunError::Step {
            line: 0,
            command: "export",
            source,
        })?;
        let path = out.join("tree.json");
        fs::write(&path, tree.to_json()).map_err(io_err(&path))?;

        let tutor: Vec<TutorRecord> = state
            .exchanges
            .iter()
            .map(|x| TutorRecord {
                node_id: &x.node_id,
                stage: x.context.stage,
                question: &x.context.question,
                recent_actions: &x.context.recent_actions,
                answer: &x.answer,
                source: x.source,
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&tutor).expect("tutor records serialize");
        text.push('\n');
        let path = out.join("tutor.json");
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(completed)
    }
}

/// Runs parsed steps; file arguments resolve against `base`. Artifacts are
/// written even when a step fails, then the failure is returned.
pub fn run_steps(steps: &[Step], base: &Path, options: &RunOptions) -> Result<RunReport, RunError> {
    let Some(Step {
        line: first_line,
        command: Command::Project { theme },
    }) = steps.first()
    else {
        return Err(RunError::Parse {
            path: base.display().to_string(),
            source: ParseError {
                line: 1,
                column: 1,
                message: "script must start with `project <theme>`".into(),
            },
        });
    };

    let temp;
    let data_dir = match &options.data_dir {
        Some(d) => d.clone(),
        None => {
            temp = tempfile::tempdir().map_err(io_err(Path::new("<tempdir>")))?;
            temp.path().to_path_buf()
        }
    };
    let mut config = EngineConfig::new(&data_dir);
    config.parallel_jobs = 1;
    config.id_seed = Some(options.seed);
    config.cache_entries = if options.cache { sakugaflow_core::backend::DEFAULT_CACHE_ENTRIES } else { 0 };
    config.tutor = options.tutor.clone();
    let step_err = |line, command, source| RunError::Step { line, command, source };
    let engine = Engine::open(config, options.backend.clone()).map_err(|e| step_err(0, "open", e))?;
    let project = engine
        .create_project(theme, Some(options.canvas), None)
        .map_err(|e| step_err(*first_line, "project", e))?;

    let mut session = Session {
        engine,
        project: project.id.clone(),
        base,
        timeout: options.job_timeout,
        draft_line: *first_line,
    };
    let outcome = steps[1..]
        .iter()
        .try_for_each(|step| {
            tracing::info!(line = step.line, command = step.command.name(), "step");
            session.exec(step)
        })
        .and_then(|()| session.flush());
    let completed = session.write_artifacts(&options.out)?;
    outcome?;
    Ok(RunReport {
        project: project.id,
        steps: steps.len(),
        completed,
    })
}
