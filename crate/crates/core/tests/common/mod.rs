//! Brute-force reference implementations used to cross-check the engine.
//! Nothing here calls into the detector; only the embedder is shared.
#![allow(dead_code)]

use promptgate::providers::MockEmbedder;
use promptgate::rules::RuleSet;

pub struct MiniRules {
    pub keywords: Vec<&'static str>,
    pub references: Vec<&'static str>,
    pub locations: Vec<&'static str>,
    pub acts: Vec<&'static str>,
    pub tau_s: f64,
    pub tau_v: f64,
}

impl MiniRules {
    pub fn new(tau_s: f64, tau_v: f64) -> Self {
        Self {
            keywords: vec!["nude", "gore", "bomb making", "sex", "blood"],
            references: vec![
                "explicit nude photo",
                "graphic violent scene",
                "illegal weapon trade",
            ],
            locations: vec!["congress", "church"],
            acts: vec!["pole dancing", "drinking"],
            tau_s,
            tau_v,
        }
    }

    pub fn toml(&self) -> String {
        let list = |xs: &[&str]| {
            xs.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            r#"
[thresholds]
semantic = {}
value = {}

[generation]
chat_temperature = 0.1
guidance_suffix = "in artistic illustration style, with safe and respectful composition"

[semantic]
reference_phrases = [{}]

[[blocked_keywords]]
category = "Mini"
phrases = [{}]

[[locations]]
category = "Venues"
phrases = [{}]

[[acts]]
category = "Acts"
severity = "high"
phrases = [{}]

[[constraint_cues]]
category = "Prohibition"
phrases = ["forbidden", "no"]

[intent]
unsafe_visual_concepts = ["nudity"]
"#,
            self.tau_s,
            self.tau_v,
            list(&self.references),
            list(&self.keywords),
            list(&self.locations),
            list(&self.acts),
        )
    }

    pub fn rule_set(&self) -> RuleSet {
        RuleSet::from_toml_str(&self.toml()).expect("mini rules load")
    }
}

pub const VOCAB: &[&str] = &[
    "nude",
    "Nude",
    "NUDE",
    "denuded",
    "nudes",
    "gore",
    "gorey",
    "bomb",
    "making",
    "bomb making",
    "sex",
    "sexy",
    "blood",
    "bloody",
    "blood_",
    "explicit",
    "photo",
    "graphic",
    "violent",
    "scene",
    "illegal",
    "weapon",
    "trade",
    "congress",
    "church",
    "pole",
    "dancing",
    "drinking",
    "a",
    "the",
    "in",
    "of",
    "cat",
    "apple",
    "red",
    "forest",
    "portrait",
    "river",
    "sun",
    "quiet",
];

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn squash(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keyword present as a whole word (or phrase) anywhere in the prompt.
pub fn word_flag(prompt: &str, keywords: &[&str]) -> bool {
    let text = squash(prompt);
    keywords.iter().any(|k| {
        let k = squash(k);
        text.match_indices(&k).any(|(start, _)| {
            let end = start + k.len();
            let before = text[..start].chars().next_back();
            let after = text[end..].chars().next();
            let first = k.chars().next().expect("non-empty keyword");
            let last = k.chars().next_back().expect("non-empty keyword");
            let left_ok = !is_word(first) || before.is_none_or(|c| !is_word(c));
            let right_ok = !is_word(last) || after.is_none_or(|c| !is_word(c));
            left_ok && right_ok
        })
    })
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn max_cos(e: &MockEmbedder, prompt: &[f64], phrases: &[&str]) -> f64 {
    phrases
        .iter()
        .map(|p| cos(prompt, e.embed_sync(p).unwrap().as_slice()))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flags {
    pub word: bool,
    pub semantic: bool,
    pub value: bool,
}

impl Flags {
    pub fn safe(&self) -> bool {
        !(self.word || self.semantic || self.value)
    }
}

pub fn flags(prompt: &str, rules: &MiniRules, e: &MockEmbedder) -> Flags {
    let v = e.embed_sync(&squash(prompt)).unwrap();
    let v = v.as_slice();
    Flags {
        word: word_flag(prompt, &rules.keywords),
        semantic: max_cos(e, v, &rules.references) > rules.tau_s,
        value: max_cos(e, v, &rules.locations) > rules.tau_v
            && max_cos(e, v, &rules.acts) > rules.tau_v,
    }
}

/// A prompt of 1..=8 vocabulary items drawn from `picks`, which must hold
/// indices into [`VOCAB`]; separators vary between spaces and commas.
pub fn prompt_from(picks: &[usize], separators: &[bool]) -> String {
    let mut out = String::new();
    for (i, &p) in picks.iter().enumerate() {
        if i > 0 {
            out.push_str(if separators.get(i).copied().unwrap_or(false) {
                ", "
            } else {
                " "
            });
        }
        out.push_str(VOCAB[p % VOCAB.len()]);
    }
    out
}
