//! Staged illustration pipeline: a branching version tree of rough, line,
//! color and finish states, generation jobs against pluggable image backends,
//! an event-sourced on-disk store and a stage-aware tutor.

pub mod backend;
pub mod compare;
pub mod digest;
pub mod engine;
pub mod event;
pub mod export;
pub mod ids;
pub mod job;
pub mod node;
pub mod params;
pub mod prompt;
pub mod raster;
pub mod request;
pub mod stage;
pub mod state;
pub mod store;
pub mod tree;
pub mod tutor;

pub use digest::Digest;
pub use ids::{ExchangeId, IdGen, JobId, NodeId, ProjectId};
pub use node::{validate_child, NodeOrigin, NodeStatus, Project, StageViolation, VersionNode};
pub use params::{Canvas, GenerationParams, Rgb};
pub use raster::{ImageBlob, MaskRegion, Rgba};
pub use request::GenerationRequest;
pub use stage::{next_stage, StageKind};
pub use tree::VersionTree;
pub use engine::{
    Engine, EngineConfig, EngineError, ErrorClass, ProjectEvent, RegenerateOptions, ERROR_CODES,
};
pub use event::{Event, EventRecord};
pub use export::TreeDocument;
pub use job::{Job, JobState};
pub use state::ProjectState;
pub use store::Store;
pub use tutor::{TutorConfig, TutorExchange, TutorSource};
