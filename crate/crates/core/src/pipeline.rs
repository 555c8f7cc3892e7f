//! Batch orchestration: moderation, then generation with verification, per
//! prompt, collected into an ordered report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{DetectError, Detector};
use crate::moderate::{
    ModerationDecision, Moderator, Policy, RiskCategory, SystemPromptSet, Verification,
};
use crate::providers::{ImageGenerator, ImageRef, Providers, SafetyChecker, SafetyVerdict};
use crate::regen::generate_verified;
use crate::rules::RuleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    TextOnly,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "text-only" => Ok(Mode::TextOnly),
            other => Err(format!(
                "unknown mode {other:?} (expected full or text-only)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub mode: Mode,
    pub policy: Policy,
    /// Prompts in flight at once; 1 runs sequentially.
    pub parallelism: usize,
    pub max_retries: u32,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            policy: Policy::Full,
            parallelism: 1,
            max_retries: crate::moderate::DEFAULT_MAX_RETRIES,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no prompts to process")]
    EmptyBatch,
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("full mode needs both an image generator and a safety checker")]
    MissingImageBackends,
    #[error("detector setup failed: {0}")]
    Setup(#[from] DetectError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub moderate_us: u64,
    pub generate_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryError {
    pub phase: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub index: usize,
    pub original_prompt: String,
    /// The prompt handed to generation; absent when blocked.
    pub effective_prompt: Option<String>,
    /// Absent only when moderation itself errored.
    pub category: Option<RiskCategory>,
    pub verification: Option<Verification>,
    pub attempts: u32,
    pub blocked: bool,
    pub image: Option<ImageRef>,
    pub final_verdict: Option<SafetyVerdict>,
    pub regenerated: bool,
    pub timings: Timings,
    pub error: Option<EntryError>,
}

impl ReportEntry {
    fn new(index: usize, prompt: &str) -> Self {
        Self {
            index,
            original_prompt: prompt.to_string(),
            effective_prompt: None,
            category: None,
            verification: None,
            attempts: 0,
            blocked: false,
            image: None,
            final_verdict: None,
            regenerated: false,
            timings: Timings::default(),
            error: None,
        }
    }

    /// Predicted label under the block-positive convention.
    pub fn predicted_block(&self) -> bool {
        self.category.is_some_and(RiskCategory::is_flagged) || self.blocked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub total: usize,
    pub categories: BTreeMap<String, usize>,
    pub blocked: usize,
    pub errors: usize,
    pub images: usize,
    pub safe_images: usize,
    pub safe_rate: Option<f64>,
    pub regenerated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub entries: Vec<ReportEntry>,
}

impl PipelineReport {
    pub fn summary(&self) -> ReportSummary {
        let mut categories: BTreeMap<String, usize> = RiskCategory::ALL
            .iter()
            .map(|c| (c.to_string(), 0))
            .collect();
        let mut s = ReportSummary {
            total: self.entries.len(),
            categories: BTreeMap::new(),
            blocked: 0,
            errors: 0,
            images: 0,
            safe_images: 0,
            safe_rate: None,
            regenerated: 0,
        };
        for e in &self.entries {
            if let Some(c) = e.category {
                *categories.entry(c.to_string()).or_default() += 1;
            }
            s.blocked += usize::from(e.blocked);
            s.errors += usize::from(e.error.is_some());
            s.regenerated += usize::from(e.regenerated);
            if let Some(v) = e.final_verdict {
                s.images += 1;
                s.safe_images += usize::from(v.is_safe());
            }
        }
        s.categories = categories;
        s.safe_rate = (s.images > 0).then(|| s.safe_images as f64 / s.images as f64);
        s
    }

    pub fn final_verdicts(&self) -> Vec<SafetyVerdict> {
        self.entries
            .iter()
            .filter_map(|e| e.final_verdict)
            .collect()
    }

    /// One JSON object per entry, newline-terminated.
    pub fn to_jsonl(&self, include_timings: bool) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let mut value = serde_json::to_value(entry).expect("report entries serialize");
            if !include_timings {
                if let Some(obj) = value.as_object_mut() {
                    obj.remove("timings");
                }
            }
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }

    pub fn summary_table(&self) -> String {
        let s = self.summary();
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8}", "category", "count");
        for (name, n) in &s.categories {
            let _ = writeln!(out, "{name:<12} {n:>8}");
        }
        let _ = writeln!(out, "{:<12} {:>8}", "total", s.total);
        let _ = writeln!(out, "{:<12} {:>8}", "blocked", s.blocked);
        let _ = writeln!(out, "{:<12} {:>8}", "errors", s.errors);
        let _ = writeln!(out, "{:<12} {:>8}", "regenerated", s.regenerated);
        let rate = s
            .safe_rate
            .map_or_else(|| "undef".to_string(), |r| format!("{:.1}%", r * 100.0));
        let _ = writeln!(out, "{:<12} {:>8}", "safe rate", rate);
        out
    }
}

#[derive(Clone)]
pub struct Pipeline {
    moderator: Moderator,
    generator: Option<Arc<dyn ImageGenerator>>,
    checker: Option<Arc<dyn SafetyChecker>>,
    rules: Arc<RuleSet>,
    options: PipelineOptions,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("moderator", &self.moderator)
            .field("options", &self.options)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub async fn new(
        rules: Arc<RuleSet>,
        providers: &Providers,
        prompts: Arc<SystemPromptSet>,
        options: PipelineOptions,
    ) -> Result<Self, PipelineError> {
        if options.parallelism == 0 {
            return Err(PipelineError::ZeroParallelism);
        }
        if options.mode == Mode::Full && !providers.has_image_backends() {
            return Err(PipelineError::MissingImageBackends);
        }
        let detector = Arc::new(Detector::new(rules.clone(), providers.embedder.clone()).await?);
        let moderator = Moderator::new(detector, providers.chat.clone(), prompts)
            .with_max_retries(options.max_retries)
            .with_policy(options.policy);
        Ok(Self {
            moderator,
            generator: providers.generator.clone(),
            checker: providers.checker.clone(),
            rules,
            options,
        })
    }

    pub fn moderator(&self) -> &Moderator {
        &self.moderator
    }

    pub fn options(&self) -> PipelineOptions {
        self.options
    }

    /// Moderation only; used by evaluation and the service.
    pub async fn moderate(
        &self,
        prompt: &str,
    ) -> Result<ModerationDecision, crate::moderate::ModerateError> {
        self.moderator.moderate(prompt).await
    }

    pub async fn run_one(&self, index: usize, prompt: &str) -> ReportEntry {
        let mut entry = ReportEntry::new(index, prompt);

        let started = Instant::now();
        let decision = self.moderator.moderate(prompt).await;
        entry.timings.moderate_us = elapsed_us(started);
        let decision = match decision {
            Ok(d) => d,
            Err(err) => {
                entry.blocked = true;
                entry.error = Some(EntryError {
                    phase: "moderate".into(),
                    message: err.to_string(),
                });
                return entry;
            }
        };
        entry.category = Some(decision.category);
        entry.verification = Some(decision.verification);
        entry.attempts = decision.attempts;
        if let Some(msg) = &decision.error {
            if decision.verification == Verification::ProviderError {
                entry.error = Some(EntryError {
                    phase: "rewrite".into(),
                    message: msg.clone(),
                });
            }
        }
        let Some(effective) = decision.effective_prompt() else {
            entry.blocked = true;
            return entry;
        };
        entry.effective_prompt = Some(effective.to_string());

        if self.options.mode == Mode::TextOnly {
            return entry;
        }
        let (Some(generator), Some(checker)) = (&self.generator, &self.checker) else {
            return entry;
        };
        let started = Instant::now();
        let result = generate_verified(
            effective,
            self.rules.guidance_suffix(),
            generator.as_ref(),
            checker.as_ref(),
        )
        .await;
        entry.timings.generate_us = Some(elapsed_us(started));
        match result {
            Ok(r) => {
                entry.image = Some(r.final_image);
                entry.final_verdict = Some(r.final_verdict);
                entry.regenerated = r.regenerated;
            }
            Err(err) => {
                entry.error = Some(EntryError {
                    phase: err
                        .phase()
                        .map_or_else(|| "generate".to_string(), |p| p.to_string()),
                    message: err.to_string(),
                });
            }
        }
        entry
    }

    pub async fn run<S: AsRef<str>>(&self, prompts: &[S]) -> Result<PipelineReport, PipelineError> {
        if prompts.is_empty() {
            return Err(PipelineError::EmptyBatch);
        }
        let entries = stream::iter(prompts.iter().enumerate())
            .map(|(i, p)| self.run_one(i, p.as_ref()))
            .buffered(self.options.parallelism)
            .collect::<Vec<_>>()
            .await;
        Ok(PipelineReport { entries })
    }
}

pub async fn run_pipeline<S: AsRef<str>>(
    prompts: &[S],
    rules: Arc<RuleSet>,
    providers: &Providers,
    prompt_set: Arc<SystemPromptSet>,
    options: PipelineOptions,
) -> Result<PipelineReport, PipelineError> {
    if prompts.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    Pipeline::new(rules, providers, prompt_set, options)
        .await?
        .run(prompts)
        .await
}

fn elapsed_us(started: Instant) -> u64 {
    u64::try_from(started.elapsed().as_micros()).unwrap_or(u64::MAX)
}
