//! Post-generation safety check with a single suffix-guided regeneration.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{
    check_image, generate_image, ImageGenerator, ImageRef, ProviderError, SafetyChecker,
    SafetyVerdict,
};

/// Which provider call failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Generate,
    Check,
    Regenerate,
    Recheck,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Generate => "generate",
            Phase::Check => "check",
            Phase::Regenerate => "regenerate",
            Phase::Recheck => "recheck",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegenError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("{phase} failed: {source}")]
    Provider {
        phase: Phase,
        #[source]
        source: ProviderError,
    },
}

impl RegenError {
    pub fn phase(&self) -> Option<Phase> {
        match self {
            RegenError::EmptyPrompt => None,
            RegenError::Provider { phase, .. } => Some(*phase),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub final_image: ImageRef,
    pub final_verdict: SafetyVerdict,
    pub regenerated: bool,
    pub prompt_used: String,
}

/// `prompt` and `suffix` joined by a single space.
pub fn guided_prompt(prompt: &str, suffix: &str) -> String {
    format!("{prompt} {suffix}")
}

/// Generates, checks, and if the image is unsafe regenerates once with the
/// guidance suffix. The second image is returned with its own verdict even
/// when it is still unsafe.
pub async fn generate_verified(
    prompt: &str,
    guidance_suffix: &str,
    generator: &dyn ImageGenerator,
    checker: &dyn SafetyChecker,
) -> Result<GenerationResult, RegenError> {
    if prompt.trim().is_empty() {
        return Err(RegenError::EmptyPrompt);
    }
    let at = |phase| move |source| RegenError::Provider { phase, source };

    let image = generate_image(generator, prompt)
        .await
        .map_err(at(Phase::Generate))?;
    let verdict = check_image(checker, &image)
        .await
        .map_err(at(Phase::Check))?;
    if verdict.is_safe() {
        return Ok(GenerationResult {
            final_image: image,
            final_verdict: verdict,
            regenerated: false,
            prompt_used: prompt.to_string(),
        });
    }

    let guided = guided_prompt(prompt, guidance_suffix);
    let image = generate_image(generator, &guided)
        .await
        .map_err(at(Phase::Regenerate))?;
    let verdict = check_image(checker, &image)
        .await
        .map_err(at(Phase::Recheck))?;
    Ok(GenerationResult {
        final_image: image,
        final_verdict: verdict,
        regenerated: true,
        prompt_used: guided,
    })
}
