//! Risk routing, category-conditioned rewriting and rewrite verification.
//!
//! Routing precedence is INTENTION > VALUE > NSFW > NONE. A flagged prompt is
//! sent to the chat rewriter as `[SYS] <category prompt> / [USR] Rewrite: <p>`;
//! the candidate replaces the prompt only if it passes both the safety gate
//! and the intention check. Up to `max_retries` further attempts are made
//! with the same template.

mod prompts;

pub use prompts::SystemPromptSet;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::detect::{DetectError, DetectionOutcome, Detector};
use crate::intent::{intention_flag, IntentEvidence};
use crate::providers::{chat_rewrite, ChatModel, ChatRequest, ProviderError};

pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RiskCategory {
    #[serde(rename = "NSFW")]
    Nsfw,
    #[serde(rename = "VALUE")]
    Value,
    #[serde(rename = "INTENTION")]
    Intention,
    #[serde(rename = "NONE")]
    None,
}

impl RiskCategory {
    pub const ALL: [RiskCategory; 4] = [
        RiskCategory::Nsfw,
        RiskCategory::Value,
        RiskCategory::Intention,
        RiskCategory::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskCategory::Nsfw => "NSFW",
            RiskCategory::Value => "VALUE",
            RiskCategory::Intention => "INTENTION",
            RiskCategory::None => "NONE",
        }
    }

    pub fn is_flagged(self) -> bool {
        self != RiskCategory::None
    }
}

impl fmt::Display for RiskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ModerateError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("no rewrite template for category NONE")]
    NoTemplate,
    #[error("detection failed: {0}")]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Routing over the four boolean signals.
pub fn classify_flags(word: bool, semantic: bool, value: bool, intent: bool) -> RiskCategory {
    if intent {
        RiskCategory::Intention
    } else if value {
        RiskCategory::Value
    } else if word || semantic {
        RiskCategory::Nsfw
    } else {
        RiskCategory::None
    }
}

pub fn classify(outcome: &DetectionOutcome, intent: bool) -> RiskCategory {
    classify_flags(
        outcome.word_flag(),
        outcome.semantic_flag(),
        outcome.value_flag(),
        intent,
    )
}

/// `[SYS] system prompt for the category / [USR] Rewrite: <prompt>`.
pub fn build_template(
    category: RiskCategory,
    prompt: &str,
    prompts: &SystemPromptSet,
    temperature: f64,
) -> Result<ChatRequest, ModerateError> {
    let system = prompts
        .for_category(category)
        .ok_or(ModerateError::NoTemplate)?;
    Ok(ChatRequest::new(
        system,
        format!("Rewrite: {prompt}"),
        temperature,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verification {
    NotNeeded,
    Passed,
    FailedAfterRetries,
    /// Every attempt failed at the chat provider.
    ProviderError,
}

/// Moderation strategy. Anything but `Full` is an ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[default]
    Full,
    /// Rewrite every prompt; unflagged prompts use the NSFW template.
    RewriteAll,
    /// Pass every prompt through untouched, without running detection.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationDecision {
    pub original_prompt: String,
    pub category: RiskCategory,
    /// Absent only when the policy skipped detection.
    pub outcome: Option<DetectionOutcome>,
    pub intent_evidence: Option<IntentEvidence>,
    pub rewritten_prompt: Option<String>,
    pub verification: Verification,
    pub attempts: u32,
    pub error: Option<String>,
}

impl ModerationDecision {
    /// Prompt safe to hand to the generator, or `None` when blocked.
    pub fn effective_prompt(&self) -> Option<&str> {
        match self.verification {
            Verification::NotNeeded => Some(&self.original_prompt),
            Verification::Passed => self.rewritten_prompt.as_deref(),
            Verification::FailedAfterRetries | Verification::ProviderError => None,
        }
    }

    pub fn is_blocked(&self) -> bool {
        self.effective_prompt().is_none()
    }

    /// Short evidence tag for the routed category, e.g. `word:nude`.
    pub fn evidence(&self) -> String {
        evidence_digest(
            self.category,
            self.outcome.as_ref(),
            self.intent_evidence.as_ref(),
        )
    }
}

/// Signals for one prompt before any rewriting.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub safe: bool,
    pub outcome: DetectionOutcome,
    pub intent: bool,
    pub intent_evidence: Option<IntentEvidence>,
    pub category: RiskCategory,
}

impl Assessment {
    pub fn evidence(&self) -> String {
        evidence_digest(
            self.category,
            Some(&self.outcome),
            self.intent_evidence.as_ref(),
        )
    }
}

/// `word:<phrase>`, `semantic:<phrase>`, `value:<location>+<act>`,
/// `intent:<cue>/<concept>`, or `-` for an unflagged prompt.
pub fn evidence_digest(
    category: RiskCategory,
    outcome: Option<&DetectionOutcome>,
    intent: Option<&IntentEvidence>,
) -> String {
    let found = match category {
        RiskCategory::None => return "-".into(),
        RiskCategory::Intention => intent.map(|e| format!("intent:{}/{}", e.cue, e.unsafe_concept)),
        RiskCategory::Value => outcome
            .and_then(|o| o.value.as_ref())
            .map(|v| format!("value:{}+{}", v.best_location.phrase, v.best_act.phrase)),
        RiskCategory::Nsfw => outcome.and_then(|o| match &o.word {
            Some(w) => Some(format!("word:{}", w.matched_phrase)),
            None => o
                .semantic_flag()
                .then(|| format!("semantic:{}", o.semantic.best_phrase)),
        }),
    };
    found.unwrap_or_else(|| "-".into())
}

#[derive(Clone)]
pub struct Moderator {
    detector: Arc<Detector>,
    chat: Arc<dyn ChatModel>,
    prompts: Arc<SystemPromptSet>,
    max_retries: u32,
    policy: Policy,
}

impl fmt::Debug for Moderator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Moderator")
            .field("max_retries", &self.max_retries)
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

impl Moderator {
    pub fn new(
        detector: Arc<Detector>,
        chat: Arc<dyn ChatModel>,
        prompts: Arc<SystemPromptSet>,
    ) -> Self {
        Self {
            detector,
            chat,
            prompts,
            max_retries: DEFAULT_MAX_RETRIES,
            policy: Policy::Full,
        }
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn detector(&self) -> &Arc<Detector> {
        &self.detector
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub async fn assess(&self, prompt: &str) -> Result<Assessment, ModerateError> {
        let (safe, outcome) = self.detector.is_safe(prompt).await?;
        let (intent, intent_evidence) = intention_flag(prompt, self.detector.rules());
        let category = classify(&outcome, intent);
        Ok(Assessment {
            safe,
            outcome,
            intent,
            intent_evidence,
            category,
        })
    }

    async fn acceptable(&self, candidate: &str) -> Result<bool, ModerateError> {
        let (safe, _) = self.detector.is_safe(candidate).await?;
        let (intent, _) = intention_flag(candidate, self.detector.rules());
        Ok(safe && !intent)
    }

    pub async fn moderate(&self, prompt: &str) -> Result<ModerationDecision, ModerateError> {
        if prompt.trim().is_empty() {
            return Err(ModerateError::EmptyPrompt);
        }
        if self.policy == Policy::None {
            return Ok(ModerationDecision {
                original_prompt: prompt.to_string(),
                category: RiskCategory::None,
                outcome: None,
                intent_evidence: None,
                rewritten_prompt: None,
                verification: Verification::NotNeeded,
                attempts: 0,
                error: None,
            });
        }

        let assessment = self.assess(prompt).await?;
        let mut decision = ModerationDecision {
            original_prompt: prompt.to_string(),
            category: assessment.category,
            outcome: Some(assessment.outcome),
            intent_evidence: assessment.intent_evidence,
            rewritten_prompt: None,
            verification: Verification::NotNeeded,
            attempts: 0,
            error: None,
        };
        if decision.category == RiskCategory::None {
            if self.policy != Policy::RewriteAll {
                return Ok(decision);
            }
            decision.category = RiskCategory::Nsfw;
        }

        let request = build_template(
            decision.category,
            prompt,
            &self.prompts,
            self.detector.rules().chat_temperature(),
        )?;
        let mut any_candidate = false;
        for attempt in 1..=self.max_retries + 1 {
            decision.attempts = attempt;
            match chat_rewrite(self.chat.as_ref(), &request).await {
                Ok(candidate) => {
                    any_candidate = true;
                    if self.acceptable(&candidate).await? {
                        decision.rewritten_prompt = Some(candidate);
                        decision.verification = Verification::Passed;
                        decision.error = None;
                        return Ok(decision);
                    }
                    debug!(attempt, "rewrite rejected by verification");
                }
                Err(err) => {
                    debug!(attempt, %err, "rewrite attempt failed");
                    decision.error = Some(err.to_string());
                }
            }
        }
        decision.verification = if any_candidate {
            Verification::FailedAfterRetries
        } else {
            Verification::ProviderError
        };
        Ok(decision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_examples() {
        assert_eq!(
            classify_flags(true, false, false, false),
            RiskCategory::Nsfw
        );
        assert_eq!(
            classify_flags(true, false, true, false),
            RiskCategory::Value
        );
        assert_eq!(
            classify_flags(false, false, false, false),
            RiskCategory::None
        );
        assert_eq!(
            classify_flags(false, false, false, true),
            RiskCategory::Intention
        );
        assert_eq!(
            classify_flags(true, true, true, true),
            RiskCategory::Intention
        );
    }

    #[test]
    fn templates_pick_category_prompt() {
        let prompts = SystemPromptSet::default();
        let req = build_template(RiskCategory::Nsfw, "a nude portrait", &prompts, 0.1).unwrap();
        assert!(req
            .system_text
            .starts_with("You are an AI assistant that rewrites prompts"));
        assert_eq!(req.user_text, "Rewrite: a nude portrait");
        assert_eq!(req.temperature, 0.1);
        let req = build_template(RiskCategory::Value, "p", &prompts, 0.1).unwrap();
        assert!(req
            .system_text
            .contains("cultural appropriateness assessment"));
        let req = build_template(RiskCategory::Intention, "p", &prompts, 0.1).unwrap();
        assert!(req.system_text.contains("standardized prohibition signage"));
        assert!(matches!(
            build_template(RiskCategory::None, "p", &prompts, 0.1),
            Err(ModerateError::NoTemplate)
        ));
    }

    #[test]
    fn template_is_pure() {
        let prompts = SystemPromptSet::default();
        let a = build_template(RiskCategory::Value, "x", &prompts, 0.1).unwrap();
        let b = build_template(RiskCategory::Value, "x", &prompts, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompts_from_dir_override_and_fallback() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("value.txt"), "custom value prompt\n").unwrap();
        let set = SystemPromptSet::from_dir(dir.path()).unwrap();
        assert_eq!(set.value_prompt, "custom value prompt");
        assert_eq!(set.nsfw_prompt, SystemPromptSet::default().nsfw_prompt);
    }

    #[test]
    fn category_wire_names() {
        assert_eq!(
            serde_json::to_string(&RiskCategory::Nsfw).unwrap(),
            "\"NSFW\""
        );
        assert_eq!(
            serde_json::to_string(&Verification::FailedAfterRetries).unwrap(),
            "\"failed-after-retries\""
        );
    }
}
