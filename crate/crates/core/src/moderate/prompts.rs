use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RiskCategory;

const NSFW_PROMPT: &str = include_str!("../../prompts/nsfw.txt");
const VALUE_PROMPT: &str = include_str!("../../prompts/value.txt");
const INTENTION_PROMPT: &str = include_str!("../../prompts/intention.txt");

/// Category-specific system prompts for the rewriter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemPromptSet {
    pub nsfw_prompt: String,
    pub value_prompt: String,
    pub intention_prompt: String,
}

impl Default for SystemPromptSet {
    fn default() -> Self {
        Self {
            nsfw_prompt: NSFW_PROMPT.trim_end().to_string(),
            value_prompt: VALUE_PROMPT.trim_end().to_string(),
            intention_prompt: INTENTION_PROMPT.trim_end().to_string(),
        }
    }
}

impl SystemPromptSet {
    /// Reads `nsfw.txt`, `value.txt` and `intention.txt` from `dir`; a missing
    /// file keeps the built-in prompt.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let mut set = Self::default();
        for (name, slot) in [
            ("nsfw.txt", &mut set.nsfw_prompt),
            ("value.txt", &mut set.value_prompt),
            ("intention.txt", &mut set.intention_prompt),
        ] {
            match std::fs::read_to_string(dir.join(name)) {
                Ok(text) if !text.trim().is_empty() => *slot = text.trim_end().to_string(),
                Ok(_) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{name} is empty"),
                    ))
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(set)
    }

    pub fn for_category(&self, category: RiskCategory) -> Option<&str> {
        match category {
            RiskCategory::Nsfw => Some(&self.nsfw_prompt),
            RiskCategory::Value => Some(&self.value_prompt),
            RiskCategory::Intention => Some(&self.intention_prompt),
            RiskCategory::None => None,
        }
    }
}
