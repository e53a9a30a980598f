use serde::{Deserialize, Serialize};

use super::{Action, DomainError, ImageId};

/// One decision of the agent: what it saw, what it thought, what it did.
///
/// `index` restarts at 0 whenever a new attempt begins; within an attempt it
/// is strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: u32,
    pub thought: String,
    pub notes: Option<String>,
    pub action: Action,
    #[serde(rename = "screenshot")]
    pub screenshot_ref: ImageId,
}

impl Step {
    pub fn new(
        index: u32,
        thought: impl Into<String>,
        notes: Option<String>,
        action: Action,
        screenshot_ref: ImageId,
    ) -> Result<Self, DomainError> {
        let step = Self { index, thought: thought.into(), notes, action, screenshot_ref };
        step.validate()?;
        Ok(step)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.thought.trim().is_empty() {
            return Err(DomainError::Invalid {
                what: "step",
                why: format!("step {} has an empty thought", self.index),
            });
        }
        self.action.validate()
    }
}
