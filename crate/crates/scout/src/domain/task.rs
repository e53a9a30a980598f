use serde::{Deserialize, Serialize};

use super::DomainError;

/// One user task: where to start and what to accomplish.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub website: String,
    pub instruction: String,
    #[serde(default)]
    pub date_sensitive: bool,
}

impl Task {
    pub fn new(
        id: impl Into<String>,
        website: impl Into<String>,
        instruction: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let task = Self {
            id: id.into(),
            website: website.into(),
            instruction: instruction.into(),
            date_sensitive: false,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.instruction.trim().is_empty() {
            return Err(DomainError::Invalid {
                what: "task",
                why: format!("task {:?} has an empty instruction", self.id),
            });
        }
        Ok(())
    }
}
