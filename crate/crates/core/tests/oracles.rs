//! Library output checked against hand-built fixtures and independent recounts.

mod common;

use hallu_pref::metrics::{extract_from_text, ObjectLexicon};
use hallu_pref::pipeline::{reference_detect, DetectorRequest, SyntheticWorld};
use hallu_pref::preference::{check_preference_gradients, LossKind};
use hallu_pref::segment::segment_sentences;
use hallu_pref::types::{validate_annotated, AggregatedSeverity, ResponseRecord};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct SegCase {
    text: String,
    sentences: Vec<String>,
}

#[derive(Deserialize)]
struct MentionCase {
    sentence: String,
    objects: Vec<String>,
}

fn fixture<T: for<'de> Deserialize<'de>>(name: &str) -> T {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn segmentation_matches_hand_labels() {
    let cases: Vec<SegCase> = fixture("segmentation.json");
    let total: usize = cases.iter().map(|c| c.sentences.len()).sum();
    assert_eq!(total, 30);
    for c in &cases {
        assert_eq!(segment_sentences(&c.text).unwrap(), c.sentences, "{:?}", c.text);
    }
}

#[test]
fn object_mentions_match_hand_labels() {
    let cases: Vec<MentionCase> = fixture("object_mentions.json");
    assert_eq!(cases.len(), 30);
    let lex = ObjectLexicon::from_world(&SyntheticWorld::standard());
    for c in &cases {
        assert_eq!(extract_from_text(&lex, &c.sentence), c.objects, "{:?}", c.sentence);
        assert_eq!(
            common::brute_force_mentions(lex.objects(), lex.synonyms(), &c.sentence),
            c.objects,
            "oracle disagrees on {:?}",
            c.sentence
        );
    }
}

#[test]
fn detector_recovers_planted_labels() {
    let (world, c) = common::corpus(400, 0.4, 11);
    for r in c.dataset.records() {
        let req = DetectorRequest {
            prompt: r.prompt.clone(),
            response: r.annotated.response.clone(),
        };
        let got = reference_detect(&world, &req).unwrap();
        assert_eq!(got.feedback, r.annotated.feedback, "{}", r.prompt.prompt_id);
        assert!(validate_annotated(&r.annotated).is_empty());
    }
}

#[test]
fn rewritten_responses_detect_clean() {
    let (world, c) = common::corpus(300, 0.5, 12);
    let prefs = common::reference_prefs(&world, &c);
    assert!(!prefs.is_empty());
    for p in prefs.pairs() {
        let response = ResponseRecord::from_text(p.prompt.prompt_id.clone(), p.chosen.raw_text()).unwrap();
        let req = DetectorRequest {
            prompt: p.prompt.clone(),
            response,
        };
        let got = reference_detect(&world, &req).unwrap();
        assert!(got.feedback.iter().all(|f| !f.is_hallucinated()), "{}", p.prompt.prompt_id);
    }
}

#[test]
fn stored_severity_is_the_rational_mean() {
    let (world, c) = common::corpus(200, 0.6, 13);
    for p in common::reference_prefs(&world, &c).pairs() {
        let sum: u64 = p.rejected.feedback.iter().map(|f| u64::from(f.severity.value())).sum();
        assert_eq!(p.aggregated_severity.ratio(), common::ratio(sum, p.rejected.feedback.len() as u64));
    }
}

#[test]
fn preference_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..120 {
        let n = rng.random_range(1..=10);
        let beta = rng.random_range(0.05..0.5);
        let batch = common::random_scores(&mut rng, n, |r| r.random_range(0.0..3.0));
        for kind in [LossKind::Dpo, LossKind::HsaDpo] {
            let err = check_preference_gradients(kind, &batch, beta, 1e-5);
            assert!(err <= 1e-6, "{kind:?}: {err:e}");
        }
    }
}

proptest! {
    #[test]
    fn aggregated_severity_roundtrips_through_json(n in 0u64..=300, d in 1u64..=100) {
        prop_assume!(n <= 3 * d);
        let s = AggregatedSeverity::new(Ratio::new(n, d)).unwrap();
        let back: AggregatedSeverity = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn extractor_agrees_with_scan_on_random_text(words in proptest::collection::vec(
        prop_oneof![
            Just("dog"), Just("puppy"), Just("traffic-light"), Just("cars"), Just("the"),
            Just("mug."), Just("Lady,"), Just("(cat)"), Just("kitten's"), Just("a"),
        ],
        0..25,
    )) {
        let lex = ObjectLexicon::from_world(&SyntheticWorld::standard());
        let text = words.join(" ");
        prop_assert_eq!(
            extract_from_text(&lex, &text),
            common::brute_force_mentions(lex.objects(), lex.synonyms(), &text)
        );
    }
}
