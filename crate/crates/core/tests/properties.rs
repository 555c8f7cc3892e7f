mod common;

use std::sync::Arc;

use promptgate::detect::{cosine, Detector};
use promptgate::intent::{
    find_constraint_cues, find_unsafe_concepts, intention_flag, intention_flag_with, PatternLinker,
};
use promptgate::metrics::{accuracy, fnr, fpr, ConfusionCounts};
use promptgate::moderate::{classify_flags, RiskCategory};
use promptgate::providers::{EmbeddingVector, MockEmbedder};
use promptgate::rules::RuleSet;
use promptgate::text::normalize;
use proptest::prelude::*;

use common::{flags, prompt_from, MiniRules, VOCAB};

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .build()
        .unwrap()
}

fn detector(rt: &tokio::runtime::Runtime, rules: RuleSet) -> Detector {
    rt.block_on(Detector::new(
        Arc::new(rules),
        Arc::new(MockEmbedder::new()),
    ))
    .unwrap()
}

fn prompt_strategy() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(0..VOCAB.len(), 1..=8),
        prop::collection::vec(any::<bool>(), 8),
    )
        .prop_map(|(picks, seps)| prompt_from(&picks, &seps))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn engine_matches_oracle(prompt in prompt_strategy()) {
        let rt = runtime();
        let mini = MiniRules::new(0.32, 0.32);
        let d = detector(&rt, mini.rule_set());
        let (safe, outcome) = rt.block_on(d.is_safe(&prompt)).unwrap();
        let expected = flags(&prompt, &mini, &MockEmbedder::new());
        prop_assert_eq!(outcome.word_flag(), expected.word);
        prop_assert_eq!(outcome.semantic_flag(), expected.semantic);
        prop_assert_eq!(outcome.value_flag(), expected.value);
        prop_assert_eq!(safe, expected.safe());
    }

    #[test]
    fn raising_thresholds_never_adds_flags(
        prompt in prompt_strategy(),
        lo in 0.05f64..0.9,
        bump in 0.0f64..0.1,
    ) {
        let rt = runtime();
        let low = detector(&rt, MiniRules::new(lo, lo).rule_set());
        let high = detector(&rt, MiniRules::new(lo + bump, lo + bump).rule_set());
        let (_, a) = rt.block_on(low.is_safe(&prompt)).unwrap();
        let (_, b) = rt.block_on(high.is_safe(&prompt)).unwrap();
        prop_assert!(a.semantic_flag() || !b.semantic_flag());
        prop_assert!(a.value_flag() || !b.value_flag());
    }

    #[test]
    fn detection_is_pure(prompt in prompt_strategy()) {
        let rt = runtime();
        let d = detector(&rt, MiniRules::new(0.32, 0.32).rule_set());
        let a = rt.block_on(d.is_safe(&prompt)).unwrap();
        let b = rt.block_on(d.is_safe(&prompt)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cosine_symmetric_and_bounded(
        a in prop::collection::vec(-10.0f64..10.0, 6),
        b in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-6) && b.iter().any(|x| x.abs() > 1e-6));
        let (va, vb) = (EmbeddingVector::new(a).unwrap(), EmbeddingVector::new(b).unwrap());
        let ab = cosine(&va, &vb).unwrap();
        let ba = cosine(&vb, &va).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn normalize_idempotent(s in "[ \\tA-Za-z\\n.,]{0,40}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn mock_embedding_unit_norm(s in "[a-z]{1,8}( [a-z]{1,8}){0,5}") {
        let v = MockEmbedder::new().embed_sync(&s).unwrap();
        prop_assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn accuracy_algebra(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let c = ConfusionCounts { tp, tn, fp, fn_ };
        let total = c.total();
        match accuracy(&c) {
            None => prop_assert_eq!(total, 0),
            Some(acc) => {
                prop_assert!((acc - (1.0 - (fp + fn_) as f64 / total as f64)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&acc));
            }
        }
        for rate in [fpr(&c), fnr(&c)].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
        prop_assert_eq!(fpr(&c).is_none(), fp + tn == 0);
        prop_assert_eq!(fnr(&c).is_none(), fn_ + tp == 0);
    }

    #[test]
    fn none_iff_no_signal(w: bool, s: bool, v: bool, i: bool) {
        prop_assert_eq!(classify_flags(w, s, v, i) == RiskCategory::None, !(w || s || v || i));
    }
}

const INTENT_WORDS: &[&str] = &[
    "naked",
    "running",
    "is",
    "are",
    "forbidden",
    "prohibited",
    "no",
    "not",
    "drugs",
    "drug",
    "allowed",
    "in",
    "schools",
    "sign",
    "about",
    "warning",
    "a",
    "the",
    "cat",
    "forest",
    "strictly",
    "here",
    ".",
    "smoking",
    "nude",
    "beach",
    "to",
    "strictly forbidden",
];

fn intent_prompt() -> impl Strategy<Value = String> {
    prop::collection::vec(0..INTENT_WORDS.len(), 1..=14).prop_map(|picks| {
        picks
            .iter()
            .map(|&i| INTENT_WORDS[i])
            .collect::<Vec<_>>()
            .join(" ")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn intent_needs_cue_and_concept(prompt in intent_prompt()) {
        let rules = RuleSet::default_rules();
        let (flag, evidence) = intention_flag(&prompt, &rules);
        if find_constraint_cues(&prompt, &rules).is_empty() || find_unsafe_concepts(&prompt, &rules).is_empty() {
            prop_assert!(!flag);
        }
        prop_assert_eq!(flag, evidence.is_some());
        if let Some(ev) = evidence {
            prop_assert!(ev.cue_span.end <= ev.concept_span.start || ev.concept_span.end <= ev.cue_span.start);
        }
    }

    #[test]
    fn intent_ignores_surrounding_whitespace(prompt in intent_prompt(), pad in "[ \\t]{0,4}") {
        let rules = RuleSet::default_rules();
        let padded = format!("{pad}{prompt}{pad}  ");
        prop_assert_eq!(intention_flag(&prompt, &rules).0, intention_flag(&padded, &rules).0);
    }

    #[test]
    fn wider_window_never_unflags(prompt in intent_prompt(), w in 0usize..10, extra in 0usize..10) {
        let rules = RuleSet::default_rules();
        let narrow = intention_flag_with(&prompt, &rules, &PatternLinker::new(w)).0;
        let wide = intention_flag_with(&prompt, &rules, &PatternLinker::new(w + extra)).0;
        prop_assert!(!narrow || wide);
    }
}
