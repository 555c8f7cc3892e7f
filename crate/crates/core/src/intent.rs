//! Intention disambiguation: does a negation / prohibition / notice cue
//! govern an unsafe visual concept? Such prompts ("naked running is
//! forbidden") describe a rule, yet an image model would draw the forbidden
//! act itself.
//!
//! Linkage uses shallow patterns instead of a dependency parse. A cue and a
//! concept are linked when they sit in the same sentence and either
//!
//! * one of the clause templates holds (these mirror the dependency shapes
//!   `nsubjpass <- ROOT=cue`, `cue -> xcomp/dobj`, `neg -> obj`, and a notice
//!   noun governing an `about` prepositional object), or
//! * they are at most `window` tokens apart.

use serde::{Deserialize, Serialize};

use crate::rules::RuleSet;
use crate::text::{normalize, Span};

pub const DEFAULT_TOKEN_WINDOW: usize = 8;

const SENTENCE_TERMINATORS: [char; 4] = ['.', '!', '?', ';'];
const COPULAS: [&str; 7] = ["is", "are", "was", "were", "be", "been", "being"];
const ABOUT_WORDS: [&str; 5] = ["about", "against", "regarding", "on", "concerning"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueMatch {
    pub phrase: String,
    pub category: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMatch {
    pub phrase: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    /// A clause template ties the cue to the concept.
    SameClause,
    /// Only the token-distance window ties them.
    Window,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentEvidence {
    pub cue: String,
    pub cue_category: String,
    pub unsafe_concept: String,
    pub cue_span: Span,
    pub concept_span: Span,
    pub linkage: Linkage,
}

/// Strategy deciding whether some cue governs some concept.
///
/// [`PatternLinker`] is the shipped implementation; a parser-backed linker
/// can slot in here.
pub trait CueLinker {
    fn link(
        &self,
        text: &str,
        cues: &[CueMatch],
        concepts: &[ConceptMatch],
    ) -> Option<IntentEvidence>;
}

/// All non-overlapping cue occurrences, leftmost-longest.
pub fn find_constraint_cues(prompt: &str, rules: &RuleSet) -> Vec<CueMatch> {
    let norm = normalize(prompt);
    let cues = rules.cues();
    cues.matcher
        .find_non_overlapping(&norm)
        .into_iter()
        .map(|m| CueMatch {
            phrase: cues.matcher.phrase(m.phrase).to_string(),
            category: cues.categories[m.phrase].clone(),
            span: m.char_span(&norm),
        })
        .collect()
}

/// All non-overlapping unsafe visual concepts (blocked keywords included).
pub fn find_unsafe_concepts(prompt: &str, rules: &RuleSet) -> Vec<ConceptMatch> {
    let norm = normalize(prompt);
    let concepts = rules.concepts();
    concepts
        .find_non_overlapping(&norm)
        .into_iter()
        .map(|m| ConceptMatch {
            phrase: concepts.phrase(m.phrase).to_string(),
            span: m.char_span(&norm),
        })
        .collect()
}

/// Intention flag with the default pattern linker.
pub fn intention_flag(prompt: &str, rules: &RuleSet) -> (bool, Option<IntentEvidence>) {
    intention_flag_with(prompt, rules, &PatternLinker::default())
}

pub fn intention_flag_with(
    prompt: &str,
    rules: &RuleSet,
    linker: &dyn CueLinker,
) -> (bool, Option<IntentEvidence>) {
    let norm = normalize(prompt);
    let cues = find_constraint_cues(&norm, rules);
    if cues.is_empty() {
        return (false, None);
    }
    let concepts = find_unsafe_concepts(&norm, rules);
    if concepts.is_empty() {
        return (false, None);
    }
    let evidence = linker.link(&norm, &cues, &concepts);
    (evidence.is_some(), evidence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternLinker {
    pub window: usize,
}

impl Default for PatternLinker {
    fn default() -> Self {
        Self {
            window: DEFAULT_TOKEN_WINDOW,
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    span: Span,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphanumeric() || c == '\'' {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(&mut current),
                span: Span { start, end: i },
            });
        }
    }
    if !current.is_empty() {
        let end = start + current.chars().count();
        tokens.push(Token {
            text: current,
            span: Span { start, end },
        });
    }
    tokens
}

/// Sentence index of every character position.
fn sentence_ids(text: &str) -> Vec<usize> {
    let mut id = 0;
    text.chars()
        .map(|c| {
            let here = id;
            if SENTENCE_TERMINATORS.contains(&c) {
                id += 1;
            }
            here
        })
        .collect()
}

/// Inclusive token index range covered by a span.
fn token_range(tokens: &[Token], span: Span) -> Option<(usize, usize)> {
    let mut hit = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.span.overlaps(&span));
    let first = hit.next()?.0;
    let last = hit.next_back().map_or(first, |(i, _)| i);
    Some((first, last))
}

struct Located<'a, T> {
    item: &'a T,
    first: usize,
    last: usize,
}

impl PatternLinker {
    pub fn new(window: usize) -> Self {
        Self { window }
    }

    fn templated(
        &self,
        text: &[char],
        tokens: &[Token],
        cue: &Located<'_, CueMatch>,
        concept: &Located<'_, ConceptMatch>,
    ) -> bool {
        let clause_gap = |from: Span, to: Span| text[from.end..to.start].contains(&',');
        if concept.last < cue.first {
            if clause_gap(concept.item.span, cue.item.span) {
                return false;
            }
            // <concept> ... is/are [adverb] <cue>
            let before = cue.first.checked_sub(1).map(|i| tokens[i].text.as_str());
            let before2 = cue.first.checked_sub(2).map(|i| tokens[i].text.as_str());
            let copula = |t: Option<&str>| t.is_some_and(|t| COPULAS.contains(&t));
            let adverb = |t: Option<&str>| t.is_some_and(|t| t.ends_with("ly"));
            return cue.first > concept.last + 1
                && (copula(before)
                    || (copula(before2) && adverb(before) && cue.first > concept.last + 2));
        }
        if cue.last < concept.first {
            if clause_gap(cue.item.span, concept.item.span) {
                return false;
            }
            let between: Vec<&str> = tokens[cue.last + 1..concept.first]
                .iter()
                .map(|t| t.text.as_str())
                .collect();
            // no <concept>
            if cue.item.phrase == "no" && between.len() <= 1 {
                return true;
            }
            // <cue> to <concept>
            if between.first() == Some(&"to") && between.len() <= 3 {
                return true;
            }
            // <cue> [sign] about <concept>
            if let Some(pos) = between.iter().position(|t| ABOUT_WORDS.contains(t)) {
                return pos <= 1 && between.len() - pos <= 3;
            }
        }
        false
    }
}

impl CueLinker for PatternLinker {
    fn link(
        &self,
        text: &str,
        cues: &[CueMatch],
        concepts: &[ConceptMatch],
    ) -> Option<IntentEvidence> {
        let chars: Vec<char> = text.chars().collect();
        let tokens = tokenize(text);
        let sentences = sentence_ids(text);
        let cues: Vec<Located<'_, CueMatch>> = cues
            .iter()
            .filter_map(|c| {
                token_range(&tokens, c.span).map(|(first, last)| Located {
                    item: c,
                    first,
                    last,
                })
            })
            .collect();
        let concepts: Vec<Located<'_, ConceptMatch>> = concepts
            .iter()
            .filter_map(|c| {
                token_range(&tokens, c.span).map(|(first, last)| Located {
                    item: c,
                    first,
                    last,
                })
            })
            .collect();

        let mut window_hit: Option<IntentEvidence> = None;
        for concept in &concepts {
            for cue in &cues {
                if cue.item.span.overlaps(&concept.item.span) {
                    continue;
                }
                if sentences[cue.item.span.start] != sentences[concept.item.span.start] {
                    continue;
                }
                let evidence = |linkage| IntentEvidence {
                    cue: cue.item.phrase.clone(),
                    cue_category: cue.item.category.clone(),
                    unsafe_concept: concept.item.phrase.clone(),
                    cue_span: cue.item.span,
                    concept_span: concept.item.span,
                    linkage,
                };
                if self.templated(&chars, &tokens, cue, concept) {
                    return Some(evidence(Linkage::SameClause));
                }
                let distance = if cue.last < concept.first {
                    concept.first - cue.last
                } else {
                    cue.first.saturating_sub(concept.last)
                };
                if window_hit.is_none() && distance <= self.window {
                    window_hit = Some(evidence(Linkage::Window));
                }
            }
        }
        window_hit
    }
}
