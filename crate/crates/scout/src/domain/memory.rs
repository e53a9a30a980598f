use std::sync::Arc;

use super::{DomainError, ImageData, ImageId, ImageStore, Step, Task};

/// How many screenshots the policy may see at once. Thoughts, notes and
/// actions are never windowed; only images are.
pub const SCREENSHOT_WINDOW: usize = 3;

/// Where a notepad entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteOrigin {
    /// Written by the agent itself alongside a step.
    Agent,
    /// Injected by the validator after a rejected answer.
    ValidatorFeedback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotepadEntry {
    pub text: String,
    pub origin: NoteOrigin,
}

/// The agent's episode state: the task, every step taken so far (across all
/// attempts), the cumulative notepad, and the current browser view.
///
/// The memory is a value: `append_step` and `with_observation` return new
/// memories and never touch prior steps. Step indices restart at 0 on each
/// attempt; the window arithmetic below works on the current attempt's tail.
#[derive(Debug, Clone)]
pub struct AgentMemory {
    task: Task,
    steps: Vec<Step>,
    notepad: Vec<NotepadEntry>,
    current: ImageId,
    images: ImageStore,
    /// Offset into `steps` where the current attempt begins.
    attempt_start: usize,
}

impl AgentMemory {
    /// Starts a fresh memory from the task and its first observation.
    pub fn new(task: Task, first_screenshot: ImageData) -> Result<Self, DomainError> {
        task.validate()?;
        let mut images = ImageStore::new();
        let current = images.insert(first_screenshot);
        Ok(Self { task, steps: Vec::new(), notepad: Vec::new(), current, images, attempt_start: 0 })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn notepad(&self) -> &[NotepadEntry] {
        &self.notepad
    }

    pub fn images(&self) -> &ImageStore {
        &self.images
    }

    pub fn current_screenshot_id(&self) -> &ImageId {
        &self.current
    }

    pub fn current_screenshot(&self) -> Arc<ImageData> {
        self.images.get(&self.current).expect("current screenshot is always stored")
    }

    /// Steps of the current attempt only.
    pub fn attempt_steps(&self) -> &[Step] {
        &self.steps[self.attempt_start..]
    }

    /// The index the next step will carry.
    pub fn next_index(&self) -> u32 {
        self.attempt_steps().len() as u32
    }

    /// Replaces the current browser view after an action executed.
    pub fn with_observation(&self, screenshot: ImageData) -> Self {
        let mut next = self.clone();
        next.current = next.images.insert(screenshot);
        next
    }

    /// Appends a validator feedback note to the notepad.
    pub fn with_feedback(&self, note: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.notepad.push(NotepadEntry { text: note.into(), origin: NoteOrigin::ValidatorFeedback });
        next
    }

    /// Marks the start of a new attempt: step indices restart at 0 and the
    /// screenshot window no longer reaches into the previous attempt. Steps
    /// and notepad entries persist.
    pub fn begin_attempt(&self) -> Self {
        let mut next = self.clone();
        next.attempt_start = next.steps.len();
        next
    }

    /// Appends a step. The step must continue the current attempt
    /// (`index == previous + 1`) or open a new one (`index == 0`); anything
    /// else is a contract violation. The step's notes, when present, are also
    /// pushed onto the notepad.
    pub fn append_step(&self, step: Step) -> Result<Self, DomainError> {
        step.validate()?;
        let expected_next = self.next_index();
        if step.index != expected_next && step.index != 0 {
            return Err(DomainError::Contract(format!(
                "step index {} does not continue the attempt (expected {} or 0)",
                step.index, expected_next
            )));
        }
        if !self.images.contains(&step.screenshot_ref) {
            return Err(DomainError::Contract(format!(
                "step screenshot {} is not in the episode store",
                step.screenshot_ref
            )));
        }
        if let Some(target) = step.action.target() {
            if let Some(p) = target.resolved {
                let img = self.images.get(&step.screenshot_ref).unwrap();
                if !p.within(img.width, img.height) {
                    return Err(DomainError::Contract(format!(
                        "resolved point ({}, {}) is outside the {}x{} screenshot",
                        p.x, p.y, img.width, img.height
                    )));
                }
            }
        }

        let mut next = self.clone();
        if step.index == 0 && !next.steps.is_empty() {
            next.attempt_start = next.steps.len();
        }
        if let Some(notes) = &step.notes {
            next.notepad.push(NotepadEntry { text: notes.clone(), origin: NoteOrigin::Agent });
        }
        next.steps.push(step);
        Ok(next)
    }

    /// Screenshot ids visible to the policy at step index `t` of the current
    /// attempt: the ids with index `k` satisfying `t-3 < k <= t`, oldest
    /// first. `t` must be the latest step's index or the one about to be
    /// taken; the window never crosses an attempt boundary.
    pub fn memory_window(&self, t: u32) -> Result<Vec<ImageId>, DomainError> {
        let taken = self.attempt_steps().len() as u32;
        let mut sequence: Vec<ImageId> = if t + 1 == taken {
            // t names the latest appended step; its screenshot is the last entry.
            self.attempt_steps().iter().map(|s| s.screenshot_ref.clone()).collect()
        } else if t == taken {
            // t names the step about to be taken; the current view stands in
            // for its screenshot.
            let mut ids: Vec<ImageId> =
                self.attempt_steps().iter().map(|s| s.screenshot_ref.clone()).collect();
            ids.push(self.current.clone());
            ids
        } else {
            return Err(DomainError::Contract(format!(
                "window index {t} is neither the latest step ({}) nor the next ({taken})",
                taken.saturating_sub(1)
            )));
        };
        let keep = SCREENSHOT_WINDOW.min(t as usize + 1);
        sequence.drain(..sequence.len() - keep);
        Ok(sequence)
    }

    /// Window for the step about to be taken.
    pub fn window_for_next(&self) -> Vec<ImageId> {
        self.memory_window(self.next_index()).expect("next index always satisfies the contract")
    }

    /// Window as seen by the latest appended step (what the validator gets
    /// after an answer).
    pub fn window_at_latest(&self) -> Result<Vec<ImageId>, DomainError> {
        let taken = self.attempt_steps().len() as u32;
        if taken == 0 {
            return Err(DomainError::Contract("no step appended in this attempt yet".into()));
        }
        self.memory_window(taken - 1)
    }

    /// Looks up window ids in the episode store.
    pub fn resolve_images(&self, ids: &[ImageId]) -> Result<Vec<Arc<ImageData>>, DomainError> {
        ids.iter()
            .map(|id| {
                self.images.get(id).ok_or_else(|| {
                    DomainError::Contract(format!("screenshot {id} missing from the store"))
                })
            })
            .collect()
    }
}
