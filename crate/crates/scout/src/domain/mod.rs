//! Shared domain vocabulary: tasks, actions, steps, memory, and traces.
//!
//! Everything here is an immutable value; "mutation" returns a new value.
//! That keeps episodes replayable and makes the types trivially safe to share
//! across threads.

mod action;
mod geometry;
mod image_store;
mod memory;
mod step;
mod task;
mod trace;

pub use action::{Action, ElementQuery, ScrollDirection};
pub use geometry::{BBox, Point};
pub use image_store::{ImageData, ImageId, ImageStore};
pub use memory::{AgentMemory, NoteOrigin, NotepadEntry, SCREENSHOT_WINDOW};
pub use step::Step;
pub use task::Task;
pub use trace::{
    parse_trace, parse_traces, serialize_trace, AttemptRecord, EpisodeTrace, VerdictRecord,
};

/// Errors raised by domain-type contracts.
#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A value failed its type invariant.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    /// Trace bytes could not be parsed.
    #[error("trace parse error at byte {offset}: {message}")]
    TraceParse { offset: usize, message: String },
}
