//! The immutable rule bundle driving every detector.
//!
//! Rules are read from a TOML file (see `rules/default.toml` for the shipped
//! set and the layout). All phrases are lowercased, whitespace-collapsed and
//! de-duplicated once at load time, and the keyword, cue and concept
//! automata are compiled here so detectors never re-normalize rule text.

mod dataset;

pub use dataset::{load_dataset, load_dataset_str, DatasetError, DatasetRecord, ExpectedAction};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize, PhraseMatcher};

pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.32;
pub const DEFAULT_VALUE_THRESHOLD: f64 = 0.32;
pub const DEFAULT_CHAT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_GUIDANCE_SUFFIX: &str =
    "in artistic illustration style, with safe and respectful composition";

const DEFAULT_RULES: &str = include_str!("../../rules/default.toml");

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("failed to read rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse rule file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("rule schema violation: {0}")]
    Schema(String),
    #[error("{name} must lie in (0, 1], got {value}")]
    Threshold { name: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Critical,
    High,
    Medium,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Critical => "critical",
            Severity::High => "high",
            Severity::Medium => "medium",
        })
    }
}

/// A named list of phrases (keyword topic, cue category, location venue type).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseGroup {
    pub category: String,
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActGroup {
    pub category: String,
    pub severity: Severity,
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationConcept {
    pub phrase: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActConcept {
    pub phrase: String,
    pub category: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    semantic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    value_overrides: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chat_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    guidance_suffix: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SemanticSection {
    #[serde(default)]
    reference_phrases: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntentSection {
    #[serde(default)]
    unsafe_visual_concepts: Vec<String>,
}

/// On-disk layout of a rule file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    thresholds: ThresholdSection,
    #[serde(default)]
    generation: GenerationSection,
    #[serde(default)]
    semantic: SemanticSection,
    #[serde(default)]
    intent: IntentSection,
    #[serde(default)]
    blocked_keywords: Vec<PhraseGroup>,
    #[serde(default)]
    locations: Vec<PhraseGroup>,
    #[serde(default)]
    acts: Vec<ActGroup>,
    #[serde(default)]
    constraint_cues: Vec<PhraseGroup>,
}

/// Validated, normalized rule bundle. Cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct RuleSet {
    blocked_keywords: Vec<PhraseGroup>,
    unsafe_reference_phrases: Vec<String>,
    location_groups: Vec<PhraseGroup>,
    act_groups: Vec<ActGroup>,
    constraint_cues: Vec<PhraseGroup>,
    unsafe_visual_concepts: Vec<String>,
    location_concepts: Vec<LocationConcept>,
    act_concepts: Vec<ActConcept>,
    semantic_threshold: f64,
    value_threshold: f64,
    value_overrides: BTreeMap<String, f64>,
    guidance_suffix: String,
    chat_temperature: f64,
    keywords: CompiledList,
    cues: CompiledList,
    concepts: PhraseMatcher,
}

/// Automaton plus the category of each of its patterns.
#[derive(Debug, Clone)]
pub(crate) struct CompiledList {
    pub(crate) matcher: PhraseMatcher,
    pub(crate) categories: Vec<String>,
}

impl CompiledList {
    /// First occurrence of a phrase wins; later duplicates in other
    /// categories are dropped from the automaton.
    fn from_groups(groups: &[PhraseGroup]) -> Self {
        let mut seen = HashSet::new();
        let mut phrases = Vec::new();
        let mut categories = Vec::new();
        for group in groups {
            for phrase in &group.phrases {
                if seen.insert(phrase.as_str()) {
                    phrases.push(phrase.clone());
                    categories.push(group.category.clone());
                }
            }
        }
        Self {
            matcher: PhraseMatcher::new(phrases),
            categories,
        }
    }
}

impl PartialEq for RuleSet {
    fn eq(&self, other: &Self) -> bool {
        self.to_file() == other.to_file()
    }
}

fn normalize_list(section: &str, raw: &[String]) -> Result<Vec<String>, RulesError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for phrase in raw {
        let norm = normalize(phrase);
        if norm.is_empty() {
            return Err(RulesError::Schema(format!("blank phrase in {section}")));
        }
        if seen.insert(norm.clone()) {
            out.push(norm);
        }
    }
    if out.is_empty() {
        return Err(RulesError::Schema(format!("{section} must not be empty")));
    }
    Ok(out)
}

fn normalize_groups(section: &str, raw: &[PhraseGroup]) -> Result<Vec<PhraseGroup>, RulesError> {
    if raw.is_empty() {
        return Err(RulesError::Schema(format!(
            "missing or empty section `{section}`"
        )));
    }
    raw.iter()
        .map(|group| {
            let category = group.category.trim().to_string();
            if category.is_empty() {
                return Err(RulesError::Schema(format!(
                    "{section} entry without a category"
                )));
            }
            let phrases = normalize_list(&format!("{section}.{category}"), &group.phrases)?;
            Ok(PhraseGroup { category, phrases })
        })
        .collect()
}

fn check_threshold(name: &str, value: f64) -> Result<f64, RulesError> {
    if value.is_finite() && value > 0.0 && value <= 1.0 {
        Ok(value)
    } else {
        Err(RulesError::Threshold {
            name: name.to_string(),
            value,
        })
    }
}

impl RuleSet {
    /// The shipped rule set.
    pub fn default_rules() -> Self {
        Self::from_toml_str(DEFAULT_RULES).expect("bundled rule file is valid")
    }

    /// Raw text of the shipped rule file.
    pub fn default_rules_source() -> &'static str {
        DEFAULT_RULES
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RulesError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_reader(mut reader: impl Read) -> Result<Self, RulesError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RulesError> {
        let file: RuleFile = toml::from_str(text)?;
        Self::from_file(file)
    }

    fn from_file(file: RuleFile) -> Result<Self, RulesError> {
        let blocked_keywords = normalize_groups("blocked_keywords", &file.blocked_keywords)?;
        let location_groups = normalize_groups("locations", &file.locations)?;
        let constraint_cues = normalize_groups("constraint_cues", &file.constraint_cues)?;
        let unsafe_reference_phrases = normalize_list(
            "semantic.reference_phrases",
            &file.semantic.reference_phrases,
        )?;

        if file.acts.is_empty() {
            return Err(RulesError::Schema("missing or empty section `acts`".into()));
        }
        let act_groups = file
            .acts
            .iter()
            .map(|group| {
                let category = group.category.trim().to_string();
                if category.is_empty() {
                    return Err(RulesError::Schema("acts entry without a category".into()));
                }
                let phrases = normalize_list(&format!("acts.{category}"), &group.phrases)?;
                Ok(ActGroup {
                    category,
                    severity: group.severity,
                    phrases,
                })
            })
            .collect::<Result<Vec<_>, RulesError>>()?;

        let mut visual: Vec<String> = file.intent.unsafe_visual_concepts.clone();
        visual.extend(act_groups.iter().flat_map(|g| g.phrases.iter().cloned()));
        let unsafe_visual_concepts = normalize_list("intent.unsafe_visual_concepts", &visual)?;

        let semantic_threshold = check_threshold(
            "thresholds.semantic",
            file.thresholds
                .semantic
                .unwrap_or(DEFAULT_SEMANTIC_THRESHOLD),
        )?;
        let value_threshold = check_threshold(
            "thresholds.value",
            file.thresholds.value.unwrap_or(DEFAULT_VALUE_THRESHOLD),
        )?;
        let mut value_overrides = BTreeMap::new();
        for (category, value) in &file.thresholds.value_overrides {
            let category = category.trim().to_string();
            if !act_groups.iter().any(|g| g.category == category) {
                return Err(RulesError::Schema(format!(
                    "value override for unknown act category `{category}`"
                )));
            }
            let value = check_threshold(&format!("thresholds.value_overrides.{category}"), *value)?;
            value_overrides.insert(category, value);
        }

        let chat_temperature = file
            .generation
            .chat_temperature
            .unwrap_or(DEFAULT_CHAT_TEMPERATURE);
        if !chat_temperature.is_finite() || chat_temperature < 0.0 {
            return Err(RulesError::Schema(format!(
                "generation.chat_temperature must be >= 0, got {chat_temperature}"
            )));
        }
        let guidance_suffix = match &file.generation.guidance_suffix {
            Some(s) => s.trim().to_string(),
            None => DEFAULT_GUIDANCE_SUFFIX.to_string(),
        };
        if guidance_suffix.is_empty() {
            return Err(RulesError::Schema(
                "generation.guidance_suffix must not be empty".into(),
            ));
        }

        let location_concepts = location_groups
            .iter()
            .flat_map(|g| {
                g.phrases.iter().map(|p| LocationConcept {
                    phrase: p.clone(),
                    category: g.category.clone(),
                })
            })
            .collect();
        let act_concepts = act_groups
            .iter()
            .flat_map(|g| {
                g.phrases.iter().map(|p| ActConcept {
                    phrase: p.clone(),
                    category: g.category.clone(),
                    severity: g.severity,
                })
            })
            .collect();

        let keywords = CompiledList::from_groups(&blocked_keywords);
        let cues = CompiledList::from_groups(&constraint_cues);
        let mut concept_phrases: Vec<String> = unsafe_visual_concepts.clone();
        let mut seen: HashSet<String> = concept_phrases.iter().cloned().collect();
        for group in &blocked_keywords {
            for phrase in &group.phrases {
                if seen.insert(phrase.clone()) {
                    concept_phrases.push(phrase.clone());
                }
            }
        }
        let concepts = PhraseMatcher::new(concept_phrases);

        Ok(Self {
            blocked_keywords,
            unsafe_reference_phrases,
            location_groups,
            act_groups,
            constraint_cues,
            unsafe_visual_concepts,
            location_concepts,
            act_concepts,
            semantic_threshold,
            value_threshold,
            value_overrides,
            guidance_suffix,
            chat_temperature,
            keywords,
            cues,
            concepts,
        })
    }

    fn to_file(&self) -> RuleFile {
        RuleFile {
            thresholds: ThresholdSection {
                semantic: Some(self.semantic_threshold),
                value: Some(self.value_threshold),
                value_overrides: self.value_overrides.clone(),
            },
            generation: GenerationSection {
                chat_temperature: Some(self.chat_temperature),
                guidance_suffix: Some(self.guidance_suffix.clone()),
            },
            semantic: SemanticSection {
                reference_phrases: self.unsafe_reference_phrases.clone(),
            },
            intent: IntentSection {
                unsafe_visual_concepts: self.unsafe_visual_concepts.clone(),
            },
            blocked_keywords: self.blocked_keywords.clone(),
            locations: self.location_groups.clone(),
            acts: self.act_groups.clone(),
            constraint_cues: self.constraint_cues.clone(),
        }
    }

    /// Serializes the normalized rules back into the rule-file layout.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("rule set serializes")
    }

    /// Copy with different thresholds, re-validated.
    pub fn with_thresholds(&self, semantic: f64, value: f64) -> Result<Self, RulesError> {
        let mut file = self.to_file();
        file.thresholds.semantic = Some(semantic);
        file.thresholds.value = Some(value);
        Self::from_file(file)
    }

    pub fn blocked_keywords(&self) -> &[PhraseGroup] {
        &self.blocked_keywords
    }

    pub fn unsafe_reference_phrases(&self) -> &[String] {
        &self.unsafe_reference_phrases
    }

    pub fn location_concepts(&self) -> &[LocationConcept] {
        &self.location_concepts
    }

    pub fn act_concepts(&self) -> &[ActConcept] {
        &self.act_concepts
    }

    pub fn constraint_cues(&self) -> &[PhraseGroup] {
        &self.constraint_cues
    }

    /// Explicit visual concepts merged with every act phrase.
    pub fn unsafe_visual_concepts(&self) -> &[String] {
        &self.unsafe_visual_concepts
    }

    pub fn semantic_threshold(&self) -> f64 {
        self.semantic_threshold
    }

    pub fn value_threshold(&self) -> f64 {
        self.value_threshold
    }

    /// Threshold applied to an act concept of the given category.
    pub fn act_threshold(&self, category: &str) -> f64 {
        self.value_overrides
            .get(category)
            .copied()
            .unwrap_or(self.value_threshold)
    }

    pub fn value_overrides(&self) -> &BTreeMap<String, f64> {
        &self.value_overrides
    }

    pub fn guidance_suffix(&self) -> &str {
        &self.guidance_suffix
    }

    pub fn chat_temperature(&self) -> f64 {
        self.chat_temperature
    }

    pub fn contains_keyword(&self, phrase: &str) -> bool {
        let phrase = normalize(phrase);
        self.blocked_keywords
            .iter()
            .any(|g| g.phrases.contains(&phrase))
    }

    pub(crate) fn keywords(&self) -> &CompiledList {
        &self.keywords
    }

    pub(crate) fn cues(&self) -> &CompiledList {
        &self.cues
    }

    /// Automaton over unsafe visual concepts and blocked keywords.
    pub(crate) fn concepts(&self) -> &PhraseMatcher {
        &self.concepts
    }
}
