//! Text normalization and boundary-delimited multi-phrase matching.

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};

/// Lowercases, trims, and collapses every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Half-open character range `[start, end)` into a normalized prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A phrase occurrence, in byte offsets of the haystack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawMatch {
    pub phrase: usize,
    pub start: usize,
    pub end: usize,
}

impl RawMatch {
    /// Converts the byte range into a character span of `haystack`.
    pub fn char_span(&self, haystack: &str) -> Span {
        let start = haystack[..self.start].chars().count();
        let len = haystack[self.start..self.end].chars().count();
        Span {
            start,
            end: start + len,
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Single-pass automaton over a fixed phrase list.
///
/// A match only counts when it is delimited by word boundaries, so `nude`
/// never fires inside `denuded`. Phrases must already be normalized.
#[derive(Debug, Clone)]
pub struct PhraseMatcher {
    automaton: AhoCorasick,
    phrases: Vec<String>,
}

impl PhraseMatcher {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let phrases: Vec<String> = phrases.into_iter().map(Into::into).collect();
        let automaton = AhoCorasick::builder()
            .match_kind(MatchKind::Standard)
            .build(&phrases)
            .expect("phrase automaton fits default limits");
        Self { automaton, phrases }
    }

    pub fn phrase(&self, id: usize) -> &str {
        &self.phrases[id]
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    fn bounded(&self, haystack: &str, start: usize, end: usize) -> bool {
        let phrase = &haystack[start..end];
        let starts_word = phrase.chars().next().is_some_and(is_word_char);
        let ends_word = phrase.chars().next_back().is_some_and(is_word_char);
        let left_ok = !starts_word
            || !haystack[..start]
                .chars()
                .next_back()
                .is_some_and(is_word_char);
        let right_ok = !ends_word || !haystack[end..].chars().next().is_some_and(is_word_char);
        left_ok && right_ok
    }

    /// Every boundary-delimited occurrence, overlaps included, sorted by start
    /// position and then by decreasing length.
    pub fn find_all(&self, haystack: &str) -> Vec<RawMatch> {
        let mut found: Vec<RawMatch> = self
            .automaton
            .find_overlapping_iter(haystack)
            .filter(|m| !m.is_empty() && self.bounded(haystack, m.start(), m.end()))
            .map(|m| RawMatch {
                phrase: m.pattern().as_usize(),
                start: m.start(),
                end: m.end(),
            })
            .collect();
        found.sort_by(|a, b| {
            a.start
                .cmp(&b.start)
                .then(b.end.cmp(&a.end))
                .then(a.phrase.cmp(&b.phrase))
        });
        found
    }

    /// Leftmost occurrence; the longest phrase wins among those starting there.
    pub fn find_first(&self, haystack: &str) -> Option<RawMatch> {
        self.find_all(haystack).into_iter().next()
    }

    /// Greedy leftmost-longest selection of non-overlapping occurrences.
    pub fn find_non_overlapping(&self, haystack: &str) -> Vec<RawMatch> {
        let mut picked: Vec<RawMatch> = Vec::new();
        for m in self.find_all(haystack) {
            if picked.last().is_none_or(|last| m.start >= last.end) {
                picked.push(m);
            }
        }
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_and_lowercases() {
        assert_eq!(normalize("  A  Nude\tportrait\n"), "a nude portrait");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize(&normalize(" X  y ")), normalize(" X  y "));
    }

    #[test]
    fn boundary_blocks_substrings() {
        let m = PhraseMatcher::new(["nude", "strip"]);
        assert!(m.find_first("denuded hillside after logging").is_none());
        assert!(m.find_first("a comic strip").is_some());
        assert!(m.find_first("stripes everywhere").is_none());
        assert!(m.find_first("nude.").is_some());
    }

    #[test]
    fn longest_wins_at_same_start() {
        let m = PhraseMatcher::new(["forbidden", "strictly forbidden"]);
        let all = m.find_non_overlapping("smoking is strictly forbidden here");
        assert_eq!(all.len(), 1);
        assert_eq!(m.phrase(all[0].phrase), "strictly forbidden");
    }

    #[test]
    fn failed_long_match_does_not_hide_shorter_one() {
        let m = PhraseMatcher::new(["bomb", "bomb making"]);
        let hit = m.find_first("bomb makings").unwrap();
        assert_eq!(m.phrase(hit.phrase), "bomb");
    }

    #[test]
    fn punctuated_phrases_match() {
        let m = PhraseMatcher::new(["9/11 memorial", "doctor's office"]);
        assert!(m.find_first("visit the 9/11 memorial today").is_some());
        assert!(m.find_first("a doctor's office waiting room").is_some());
    }

    #[test]
    fn char_spans_count_characters() {
        let m = PhraseMatcher::new(["nude"]);
        let text = "café nude";
        let hit = m.find_first(text).unwrap();
        assert_eq!(hit.char_span(text), Span { start: 5, end: 9 });
    }
}
