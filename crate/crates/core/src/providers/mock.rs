//! Deterministic in-process backends for offline runs and tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    ChatModel, ChatRequest, Embedder, EmbeddingVector, ImageGenerator, ImageRef, ProviderError,
    SafetyChecker, SafetyVerdict,
};
use crate::rules::{CompiledList, RuleSet};
use crate::text::{normalize, PhraseMatcher};

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// Bag-of-tokens embedder.
///
/// Each lowercase alphanumeric token maps to a pseudo-random unit vector
/// seeded by SHA-256 of `(seed, token bytes)`; a text embeds to the
/// L2-normalized mean of its token vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
}

/// Seed under which the everyday prompts used in tests and docs embed far
/// enough from every shipped rule phrase to stay unflagged.
pub const DEFAULT_MOCK_SEED: u64 = 113;

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::with_seed(DEFAULT_MOCK_SEED)
    }
}

impl MockEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_seed(seed: u64) -> Self {
        Self { seed }
    }

    pub fn tokens(text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..MOCK_EMBEDDING_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }

    pub fn embed_sync(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let tokens = Self::tokens(text);
        if tokens.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let mut sum = vec![0.0; MOCK_EMBEDDING_DIM];
        for token in &tokens {
            for (acc, x) in sum.iter_mut().zip(self.token_vector(token)) {
                *acc += x;
            }
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::InvalidRequest(
                "token vectors cancel out".into(),
            ));
        }
        EmbeddingVector::new(sum.into_iter().map(|x| x / norm).collect())
    }
}

#[async_trait]
impl Embedder for MockEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.embed_sync(text)
    }
}

/// Fixed lookup from normalized text to vector; unknown text is an error.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    table: HashMap<String, EmbeddingVector>,
}

impl TableEmbedder {
    pub fn new<I, S>(entries: I) -> Result<Self, ProviderError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = HashMap::new();
        for (text, values) in entries {
            table.insert(normalize(text.as_ref()), EmbeddingVector::new(values)?);
        }
        Ok(Self { table })
    }
}

#[async_trait]
impl Embedder for TableEmbedder {
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.table
            .get(&normalize(text))
            .cloned()
            .ok_or_else(|| ProviderError::BadResponse {
                provider: "embedder",
                message: format!("no table entry for `{text}`"),
            })
    }
}

/// What [`ScriptedChat`] answers when a prompt has no scripted rewrite.
#[derive(Debug, Clone, PartialEq)]
pub enum ChatFallback {
    /// Remove every blocked keyword from the prompt.
    StripKeywords,
    /// Return the prompt unchanged.
    Echo,
    /// Always return this text.
    Fixed(String),
}

/// Chat rewriter answering from a script `{prompt -> rewrite}`.
///
/// The prompt is read back from the `Rewrite: <p>` user turn.
#[derive(Debug)]
pub struct ScriptedChat {
    script: HashMap<String, String>,
    fallback: ChatFallback,
    keywords: PhraseMatcher,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(rules: &RuleSet) -> Self {
        let CompiledList { matcher, .. } = rules.keywords().clone();
        Self {
            script: HashMap::new(),
            fallback: ChatFallback::StripKeywords,
            keywords: matcher,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_script<I, K, V>(mut self, entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        self.script.extend(
            entries
                .into_iter()
                .map(|(k, v)| (normalize(k.as_ref()), v.into())),
        );
        self
    }

    pub fn with_fallback(mut self, fallback: ChatFallback) -> Self {
        self.fallback = fallback;
        self
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn strip_keywords(&self, text: &str) -> String {
        let norm = normalize(text);
        let mut out = String::with_capacity(norm.len());
        let mut cursor = 0;
        for m in self.keywords.find_non_overlapping(&norm) {
            out.push_str(&norm[cursor..m.start]);
            out.push(' ');
            cursor = m.end;
        }
        out.push_str(&norm[cursor..]);
        normalize(&out)
    }
}

#[async_trait]
impl ChatModel for ScriptedChat {
    async fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request
            .user_text
            .strip_prefix("Rewrite:")
            .unwrap_or(&request.user_text)
            .trim();
        if let Some(rewrite) = self.script.get(&normalize(prompt)) {
            return Ok(rewrite.clone());
        }
        Ok(match &self.fallback {
            ChatFallback::StripKeywords => self.strip_keywords(prompt),
            ChatFallback::Echo => prompt.to_string(),
            ChatFallback::Fixed(text) => text.clone(),
        })
    }
}

/// Image generator that records provenance and issues locators only.
///
/// Identifiers derive from the prompt digest plus the number of earlier
/// calls with that same prompt, so they are fresh per call yet reproducible
/// across runs.
#[derive(Debug, Default)]
pub struct MockGenerator {
    per_prompt: Mutex<HashMap<String, usize>>,
    calls: AtomicUsize,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ImageGenerator for MockGenerator {
    async fn generate(&self, prompt: &str) -> Result<ImageRef, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let n = {
            let mut seen = self.per_prompt.lock().expect("generator counter poisoned");
            let n = seen.entry(prompt.to_string()).or_insert(0);
            *n += 1;
            *n
        };
        let digest = Sha256::digest(prompt.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        let id = format!("mock-{hex}-{n}");
        Ok(ImageRef {
            locator: format!("mock://images/{id}.png"),
            id,
            provenance_prompt: prompt.to_string(),
        })
    }
}

/// Checker that judges an image by its provenance prompt: unsafe iff the
/// prompt contains one of its terms (blocked keywords by default).
#[derive(Debug)]
pub struct MockChecker {
    terms: Option<PhraseMatcher>,
    style_exemption: Option<String>,
    calls: AtomicUsize,
}

impl MockChecker {
    pub fn new(rules: &RuleSet) -> Self {
        Self {
            terms: Some(rules.keywords().matcher.clone()),
            style_exemption: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// A checker that rejects every image.
    pub fn always_unsafe() -> Self {
        Self {
            terms: None,
            style_exemption: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Adds terms the checker treats as unsafe beyond the blocked keywords,
    /// standing in for content that slips past text moderation.
    pub fn with_extra_terms<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if let Some(terms) = &self.terms {
            let mut phrases: Vec<String> = terms.phrases().to_vec();
            for term in extra {
                let term = normalize(term.as_ref());
                if !term.is_empty() && !phrases.contains(&term) {
                    phrases.push(term);
                }
            }
            self.terms = Some(PhraseMatcher::new(phrases));
        }
        self
    }

    /// Images whose prompt ends with `suffix` are judged safe, modelling a
    /// style suffix that steers generation away from unsafe renderings.
    pub fn with_style_exemption(mut self, suffix: impl Into<String>) -> Self {
        self.style_exemption = Some(normalize(&suffix.into()));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn judge(&self, prompt: &str) -> SafetyVerdict {
        let prompt = normalize(prompt);
        let Some(terms) = &self.terms else {
            return SafetyVerdict::Unsafe;
        };
        if let Some(suffix) = &self.style_exemption {
            if prompt.ends_with(suffix.as_str()) {
                return SafetyVerdict::Safe;
            }
        }
        if terms.find_first(&prompt).is_some() {
            SafetyVerdict::Unsafe
        } else {
            SafetyVerdict::Safe
        }
    }
}

#[async_trait]
impl SafetyChecker for MockChecker {
    async fn check(&self, image: &ImageRef) -> Result<SafetyVerdict, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.judge(&image.provenance_prompt))
    }
}
