//! Helpers shared by the integration tests. Oracles here are written
//! independently of the library code they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hallu_pref::pipeline::{
    build_preference_dataset, generate_synthetic_corpus, BuildInput, BuildOptions, ReferenceDetector,
    ReferenceRewriter, SyntheticCorpus, SyntheticWorld,
};
use hallu_pref::preference::PairScores;
use hallu_pref::types::{DatasetMeta, PreferenceDataset};
use num_rational::Ratio;
use rand::Rng;

pub fn corpus(n: usize, rate: f64, seed: u64) -> (SyntheticWorld, SyntheticCorpus) {
    let world = SyntheticWorld::standard();
    let c = generate_synthetic_corpus(&world, n, rate, seed).expect("corpus");
    (world, c)
}

/// Preference pairs from a synthetic corpus via the reference detector and
/// rewriter, detection re-run from scratch.
pub fn reference_prefs(world: &SyntheticWorld, c: &SyntheticCorpus) -> PreferenceDataset {
    let inputs: Vec<BuildInput> = c
        .dataset
        .records()
        .iter()
        .map(|r| BuildInput::Raw {
            prompt: r.prompt.clone(),
            response: r.annotated.response.clone(),
        })
        .collect();
    let det = ReferenceDetector { world: world.clone() };
    let out = build_preference_dataset(&inputs, &det, &ReferenceRewriter, DatasetMeta::new("test", 0), BuildOptions::default());
    assert!(out.quarantine.is_empty(), "{:?}", out.quarantine);
    out.dataset
}

/// Exactly `n` pairs, generating more responses until there are enough.
pub fn n_prefs(n: usize, seed: u64) -> PreferenceDataset {
    let (world, c) = corpus(n * 2, 0.35, seed);
    let all = reference_prefs(&world, &c);
    assert!(all.len() >= n, "only {} pairs", all.len());
    let mut ds = PreferenceDataset::new(all.meta.clone());
    for p in all.pairs().iter().take(n) {
        ds.push(p.clone()).unwrap();
    }
    ds
}

pub fn random_scores(rng: &mut impl Rng, n: usize, severity: impl Fn(&mut dyn rand::RngCore) -> f64) -> Vec<PairScores> {
    (0..n)
        .map(|_| PairScores {
            chosen_logp_policy: rng.random_range(-40.0..-1.0),
            chosen_logp_ref: rng.random_range(-40.0..-1.0),
            rejected_logp_policy: rng.random_range(-40.0..-1.0),
            rejected_logp_ref: rng.random_range(-40.0..-1.0),
            severity: severity(rng),
        })
        .collect()
}

/// Character-level scan for lexicon surfaces with word boundaries, taking
/// the longest surface at each start position.
pub fn brute_force_mentions(objects: &BTreeSet<String>, synonyms: &BTreeMap<String, String>, text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let is_word = |c: char| c.is_alphanumeric() || c == '-';
    let mut surfaces: Vec<(Vec<char>, String)> = objects.iter().map(|o| (o.chars().collect(), o.clone())).collect();
    surfaces.extend(synonyms.iter().map(|(s, t)| (s.chars().collect(), t.clone())));
    surfaces.sort_by_key(|(s, _)| std::cmp::Reverse(s.len()));
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word(chars[i]) || (i > 0 && is_word(chars[i - 1])) {
            i += 1;
            continue;
        }
        let hit = surfaces.iter().find(|(s, _)| {
            let end = i + s.len();
            end <= chars.len()
                && chars[i..end] == s[..]
                && (end == chars.len() || !is_word(chars[end]))
        });
        match hit {
            Some((s, canon)) => {
                out.push(canon.clone());
                i += s.len();
            }
            None => i += 1,
        }
    }
    out
}

/// Whole-phrase occurrence on word boundaries.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let words: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let p: Vec<&str> = phrase.split(' ').collect();
    words.windows(p.len()).any(|w| w.iter().zip(&p).all(|(a, b)| a == b))
}

pub fn ratio(n: u64, d: u64) -> Ratio<u64> {
    Ratio::new(n, d)
}

pub fn bin_path() -> &'static str {
    env!("CARGO_BIN_EXE_hallu-pref")
}
