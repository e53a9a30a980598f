//! Filtered behavior-cloning export: successful episode traces become
//! chat-format training samples, one per step, each carrying the exact prompt
//! the policy saw (task, history, notepad, and the screenshot window) with the
//! step's own output as the target. Unsuccessful traces are dropped entirely.
//!
//! Also home to [`TraceStore`], the on-disk layout pairing trace JSONL with a
//! content-addressed screenshot directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use crate::domain::{
    parse_traces, serialize_trace, AgentMemory, DomainError, EpisodeTrace, ImageData, ImageId,
    ImageStore, Step,
};
use crate::policy::{build_policy_prompt, render_policy_output, PolicyOutput, PolicyPrompt};

#[derive(Debug, thiserror::Error)]
pub enum FbcError {
    #[error("trace store I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("image {id} corrupt in store: {why}")]
    CorruptImage { id: ImageId, why: String },
    #[error("cannot replay trace {task}: {message}")]
    Replay { task: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FbcError + '_ {
    move |source| FbcError::Io { path: path.to_path_buf(), source }
}

/// Resolves screenshot ids to image bytes during export.
pub trait ImageSource {
    fn fetch(&self, id: &ImageId) -> Option<Arc<ImageData>>;
}

impl ImageSource for ImageStore {
    fn fetch(&self, id: &ImageId) -> Option<Arc<ImageData>> {
        self.get(id)
    }
}

/// On-disk episode storage: `traces.jsonl` plus `images/{hash}.png`, with
/// screenshots deduplicated by content hash across episodes.
pub struct TraceStore {
    root: PathBuf,
    cache: Mutex<BTreeMap<ImageId, Arc<ImageData>>>,
}

impl TraceStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, FbcError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("images")).map_err(io_err(&root))?;
        Ok(Self { root, cache: Mutex::new(BTreeMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn traces_path(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }

    fn image_path(&self, id: &ImageId) -> PathBuf {
        self.root.join("images").join(format!("{}.png", id.hex()))
    }

    /// Appends one episode and writes every screenshot its steps reference.
    /// Screenshots must all be present in `images`.
    pub fn save_episode(
        &self,
        trace: &EpisodeTrace,
        images: &ImageStore,
    ) -> Result<(), FbcError> {
        trace.validate()?;
        for step in trace.attempts.iter().flat_map(|a| &a.steps) {
            let id = &step.screenshot_ref;
            let data = images.get(id).ok_or_else(|| DomainError::Contract(format!(
                "screenshot {id} referenced by trace {} is not in the provided store",
                trace.task.id
            )))?;
            let path = self.image_path(id);
            if !path.exists() {
                std::fs::write(&path, &data.png).map_err(io_err(&path))?;
            }
        }
        let line = serialize_trace(trace)?;
        let path = self.traces_path();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(file, "{line}").map_err(io_err(&path))?;
        Ok(())
    }

    /// Reads every stored episode in insertion order.
    pub fn load_traces(&self) -> Result<Vec<EpisodeTrace>, FbcError> {
        let path = self.traces_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(parse_traces(&text)?)
    }
}

impl ImageSource for TraceStore {
    /// Loads (and caches) a screenshot, verifying its content hash so a
    /// corrupted file never silently feeds the exporter.
    fn fetch(&self, id: &ImageId) -> Option<Arc<ImageData>> {
        if let Some(hit) = self.cache.lock().unwrap().get(id) {
            return Some(hit.clone());
        }
        let bytes = std::fs::read(self.image_path(id)).ok()?;
        if ImageId::of_bytes(&bytes) != *id {
            return None;
        }
        let data = Arc::new(ImageData::from_png(bytes).ok()?);
        self.cache.lock().unwrap().insert(id.clone(), data.clone());
        Some(data)
    }
}

/// Which successful traces qualify for export.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    /// Additionally require a confirming judge outcome for the trace's task;
    /// tasks without one are dropped.
    pub require_judge_confirmation: bool,
}

/// What an export run did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ExportStats {
    pub traces_seen: usize,
    pub traces_exported: usize,
    pub samples: usize,
    /// Traces skipped because screenshots were missing from the store.
    pub skipped: usize,
}

/// One step's prompt (as the policy saw it) paired with the step that answers
/// it.
struct ReplayedStep<'a> {
    prompt: PolicyPrompt,
    step: &'a Step,
}

/// Walks a trace forward, rebuilding the agent memory exactly as the episode
/// built it, and captures the policy prompt before each step.
fn replay_trace<'a>(
    trace: &'a EpisodeTrace,
    images: &dyn ImageSource,
) -> Result<Vec<ReplayedStep<'a>>, FbcError> {
    let replay_err = |message: String| FbcError::Replay {
        task: trace.task.id.clone(),
        message,
    };
    let fetch = |id: &ImageId| {
        images.fetch(id).ok_or_else(|| FbcError::Replay {
            task: trace.task.id.clone(),
            message: format!("screenshot {id} missing from the store"),
        })
    };

    let Some(first_step) = trace.attempts.first().and_then(|a| a.steps.first()) else {
        return Ok(Vec::new());
    };
    let first_image = fetch(&first_step.screenshot_ref)?;
    let mut memory = AgentMemory::new(trace.task.clone(), (*first_image).clone())?;

    let mut replayed = Vec::new();
    for (attempt_index, attempt) in trace.attempts.iter().enumerate() {
        if attempt_index > 0 {
            memory = memory.begin_attempt();
            // The live loop appends feedback only after rejected answers;
            // aborted attempts (no answer) add nothing.
            let prior = &trace.attempts[attempt_index - 1];
            if let (Some(_), Some(verdict)) = (&prior.answer, &prior.verdict) {
                if !verdict.success {
                    memory = memory.with_feedback(format!(
                        "validator rejected attempt {attempt_index}: {}",
                        verdict.explanation
                    ));
                }
            }
            if let Some(first) = attempt.steps.first() {
                memory = memory.with_observation((*fetch(&first.screenshot_ref)?).clone());
            }
        }
        for (step_pos, step) in attempt.steps.iter().enumerate() {
            if memory.current_screenshot_id() != &step.screenshot_ref {
                return Err(replay_err(format!(
                    "step {} of attempt {} was decided on screenshot {}, but replay reached {}",
                    step.index,
                    attempt_index + 1,
                    step.screenshot_ref,
                    memory.current_screenshot_id()
                )));
            }
            let prompt = build_policy_prompt(&memory, false)?;
            replayed.push(ReplayedStep { prompt, step });
            memory = memory.append_step(step.clone())?;
            if let Some(next) = attempt.steps.get(step_pos + 1) {
                memory = memory.with_observation((*fetch(&next.screenshot_ref)?).clone());
            }
        }
    }
    Ok(replayed)
}

/// A sample in the chat export format: system prompt, the user turn with its
/// screenshot references, and the step's serialized decision as the target.
fn sample_json(prompt: &PolicyPrompt, step: &Step) -> Value {
    let mut content = vec![json!({"text": prompt.user_text})];
    for id in &prompt.window {
        content.push(json!({"image": id.to_string()}));
    }
    let target = PolicyOutput {
        thought: step.thought.clone(),
        notes: step.notes.clone(),
        action: step.action.clone(),
    };
    json!({
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": content},
            {"role": "assistant", "content": render_policy_output(&target)},
        ]
    })
}

fn trace_is_successful(
    trace: &EpisodeTrace,
    judge_outcomes: &BTreeMap<String, bool>,
    options: &ExportOptions,
) -> bool {
    if trace.success != Some(true) {
        return false;
    }
    if options.require_judge_confirmation {
        return judge_outcomes.get(&trace.task.id).copied().unwrap_or(false);
    }
    true
}

/// Exports training samples for every successful trace, one JSONL line per
/// step. The first output line is always a header record; traces with missing
/// screenshots are skipped behind a warning record.
pub fn export_fbc(
    traces: &[EpisodeTrace],
    judge_outcomes: &BTreeMap<String, bool>,
    options: &ExportOptions,
    images: &dyn ImageSource,
    out: &mut dyn Write,
) -> Result<ExportStats, FbcError> {
    let mut lines: Vec<String> = Vec::new();
    let mut stats = ExportStats {
        traces_seen: traces.len(),
        traces_exported: 0,
        samples: 0,
        skipped: 0,
    };

    for trace in traces {
        if !trace_is_successful(trace, judge_outcomes, options) {
            continue;
        }
        let missing: Vec<String> = trace
            .attempts
            .iter()
            .flat_map(|a| &a.steps)
            .filter(|s| images.fetch(&s.screenshot_ref).is_none())
            .map(|s| s.screenshot_ref.to_string())
            .collect();
        if !missing.is_empty() {
            stats.skipped += 1;
            lines.push(
                json!({
                    "kind": "warning",
                    "task": trace.task.id,
                    "message": format!("skipped: missing screenshots {}", missing.join(", ")),
                })
                .to_string(),
            );
            continue;
        }
        let replayed = replay_trace(trace, images)?;
        stats.traces_exported += 1;
        stats.samples += replayed.len();
        for item in &replayed {
            lines.push(sample_json(&item.prompt, item.step).to_string());
        }
    }

    let header = json!({
        "kind": "header",
        "format": "fbc-chat-v1",
        "traces": stats.traces_seen,
        "exported": stats.traces_exported,
        "samples": stats.samples,
        "skipped": stats.skipped,
    });
    writeln!(out, "{header}").map_err(|source| FbcError::Io { path: PathBuf::from("<out>"), source })?;
    for line in lines {
        writeln!(out, "{line}").map_err(|source| FbcError::Io { path: PathBuf::from("<out>"), source })?;
    }
    Ok(stats)
}
