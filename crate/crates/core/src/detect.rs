//! Word-, semantic- and value-level detection and the combined safety gate.
//!
//! A prompt is unsafe when any layer fires:
//!
//! * word: a blocked keyword occurs, delimited by word boundaries;
//! * semantic: the best cosine similarity between the prompt embedding and a
//!   reference unsafe phrase is strictly above the semantic threshold;
//! * value: the best location similarity AND the best act similarity are both
//!   strictly above the value threshold.
//!
//! Every layer is always evaluated so the outcome carries complete evidence.

use std::sync::Arc;

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{embed, Embedder, EmbeddingVector, ProviderError};
use crate::rules::{RuleSet, Severity};
use crate::text::{normalize, Span};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordHit {
    pub matched_phrase: String,
    pub category: String,
    pub span: Span,
}

/// Best-matching reference phrase. Recorded whether or not it fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticHit {
    pub best_phrase: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationScore {
    pub phrase: String,
    pub category: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActScore {
    pub phrase: String,
    pub category: String,
    pub severity: Severity,
    pub score: f64,
}

/// Location and act evidence. Only emitted as a hit when both legs fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHit {
    pub best_location: LocationScore,
    pub best_act: ActScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub prompt_normalized: String,
    pub word: Option<WordHit>,
    pub semantic: SemanticHit,
    pub semantic_flagged: bool,
    /// Present iff the value layer fired.
    pub value: Option<ValueHit>,
    /// Best location/act scores, recorded even when the layer did not fire.
    pub value_scores: ValueHit,
}

impl DetectionOutcome {
    pub fn word_flag(&self) -> bool {
        self.word.is_some()
    }

    pub fn semantic_flag(&self) -> bool {
        self.semantic_flagged
    }

    pub fn value_flag(&self) -> bool {
        self.value.is_some()
    }

    pub fn is_safe(&self) -> bool {
        !(self.word_flag() || self.semantic_flag() || self.value_flag())
    }
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DetectError> {
    if a.dim() != b.dim() {
        return Err(DetectError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(DetectError::ZeroVector);
    }
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Leftmost blocked keyword in the normalized prompt, if any.
pub fn word_level(prompt: &str, rules: &RuleSet) -> Option<WordHit> {
    let norm = normalize(prompt);
    let keywords = rules.keywords();
    keywords.matcher.find_first(&norm).map(|m| WordHit {
        matched_phrase: keywords.matcher.phrase(m.phrase).to_string(),
        category: keywords.categories[m.phrase].clone(),
        span: m.char_span(&norm),
    })
}

/// Index of the first maximal score. Panics on empty input; rule lists are
/// non-empty by construction.
fn argmax(
    query: &EmbeddingVector,
    vectors: &[EmbeddingVector],
) -> Result<(usize, f64), DetectError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in vectors.iter().enumerate() {
        let score = cosine(query, v)?;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    Ok(best.expect("rule lists are non-empty"))
}

/// Detector bound to one rule set and embedder. Rule phrase embeddings are
/// computed once at construction.
pub struct Detector {
    rules: Arc<RuleSet>,
    embedder: Arc<dyn Embedder>,
    references: Vec<EmbeddingVector>,
    locations: Vec<EmbeddingVector>,
    acts: Vec<EmbeddingVector>,
}

impl std::fmt::Debug for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detector")
            .field("references", &self.references.len())
            .field("locations", &self.locations.len())
            .field("acts", &self.acts.len())
            .finish_non_exhaustive()
    }
}

async fn embed_all<'a>(
    embedder: &dyn Embedder,
    phrases: impl Iterator<Item = &'a str>,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    try_join_all(phrases.map(|p| embed(embedder, p))).await
}

impl Detector {
    pub async fn new(
        rules: Arc<RuleSet>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, DetectError> {
        let references = embed_all(
            embedder.as_ref(),
            rules.unsafe_reference_phrases().iter().map(String::as_str),
        )
        .await?;
        let locations = embed_all(
            embedder.as_ref(),
            rules.location_concepts().iter().map(|c| c.phrase.as_str()),
        )
        .await?;
        let acts = embed_all(
            embedder.as_ref(),
            rules.act_concepts().iter().map(|c| c.phrase.as_str()),
        )
        .await?;
        Ok(Self {
            rules,
            embedder,
            references,
            locations,
            acts,
        })
    }

    pub fn rules(&self) -> &Arc<RuleSet> {
        &self.rules
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn word_level(&self, prompt: &str) -> Option<WordHit> {
        word_level(prompt, &self.rules)
    }

    async fn embed_prompt(&self, prompt: &str) -> Result<(String, EmbeddingVector), DetectError> {
        let norm = normalize(prompt);
        if norm.is_empty() {
            return Err(DetectError::EmptyPrompt);
        }
        let vector = embed(self.embedder.as_ref(), &norm).await?;
        Ok((norm, vector))
    }

    fn semantic_from(&self, query: &EmbeddingVector) -> Result<(bool, SemanticHit), DetectError> {
        let (idx, score) = argmax(query, &self.references)?;
        let hit = SemanticHit {
            best_phrase: self.rules.unsafe_reference_phrases()[idx].clone(),
            score,
        };
        Ok((score > self.rules.semantic_threshold(), hit))
    }

    /// The act leg fires when some act beats the threshold of its own
    /// category; the reported act is the best firing one, or the overall best
    /// when none fires. Without overrides this is a plain max-vs-threshold test.
    fn value_from(&self, query: &EmbeddingVector) -> Result<(bool, ValueHit), DetectError> {
        let (loc_idx, loc_score) = argmax(query, &self.locations)?;
        let location = &self.rules.location_concepts()[loc_idx];
        let best_location = LocationScore {
            phrase: location.phrase.clone(),
            category: location.category.clone(),
            score: loc_score,
        };

        let mut best_any: Option<(usize, f64)> = None;
        let mut best_firing: Option<(usize, f64)> = None;
        for (i, (v, concept)) in self.acts.iter().zip(self.rules.act_concepts()).enumerate() {
            let score = cosine(query, v)?;
            if best_any.is_none_or(|(_, s)| score > s) {
                best_any = Some((i, score));
            }
            if score > self.rules.act_threshold(&concept.category)
                && best_firing.is_none_or(|(_, s)| score > s)
            {
                best_firing = Some((i, score));
            }
        }
        let (act_idx, act_score) = best_firing.or(best_any).expect("act list is non-empty");
        let act = &self.rules.act_concepts()[act_idx];
        let best_act = ActScore {
            phrase: act.phrase.clone(),
            category: act.category.clone(),
            severity: act.severity,
            score: act_score,
        };
        let flag = loc_score > self.rules.value_threshold() && best_firing.is_some();
        Ok((
            flag,
            ValueHit {
                best_location,
                best_act,
            },
        ))
    }

    /// Semantic flag plus the argmax phrase and its score.
    pub async fn semantic_level(&self, prompt: &str) -> Result<(bool, SemanticHit), DetectError> {
        let (_, query) = self.embed_prompt(prompt).await?;
        self.semantic_from(&query)
    }

    /// Value flag; evidence only when the layer fires.
    pub async fn value_level(&self, prompt: &str) -> Result<(bool, Option<ValueHit>), DetectError> {
        let (_, query) = self.embed_prompt(prompt).await?;
        let (flag, hit) = self.value_from(&query)?;
        Ok((flag, flag.then_some(hit)))
    }

    /// Runs all three layers on one prompt embedding.
    pub async fn is_safe(&self, prompt: &str) -> Result<(bool, DetectionOutcome), DetectError> {
        let (norm, query) = self.embed_prompt(prompt).await?;
        let word = word_level(&norm, &self.rules);
        let (semantic_flagged, semantic) = self.semantic_from(&query)?;
        let (value_flag, value_scores) = self.value_from(&query)?;
        let outcome = DetectionOutcome {
            prompt_normalized: norm,
            word,
            semantic,
            semantic_flagged,
            value: value_flag.then(|| value_scores.clone()),
            value_scores,
        };
        Ok((outcome.is_safe(), outcome))
    }
}
