//! Rule-based sentence splitter.
//!
//! Whitespace is normalized to single spaces, then the text is cut after
//! every word ending in `.`, `!` or `?` (optionally followed by closing
//! quotes or brackets), unless that word is a known abbreviation. Joining the
//! output with single spaces gives back the normalized input exactly.

use crate::types::TypesError;

/// Lower-cased abbreviations that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "a.m.", "approx.", "cf.", "co.", "dept.", "dr.", "e.g.", "est.", "fig.", "i.e.", "inc.",
    "jr.", "ltd.", "mr.", "mrs.", "ms.", "mt.", "no.", "p.m.", "prof.", "sr.", "st.", "u.k.",
    "u.s.", "vs.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}', '\u{bb}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{201c}', '\u{2018}', '\u{ab}'];

fn ends_sentence(word: &str) -> bool {
    let core = word.trim_end_matches(CLOSERS);
    let Some(last) = core.chars().last() else {
        return false;
    };
    if !matches!(last, '.' | '!' | '?') {
        return false;
    }
    if last == '.' {
        let bare = core.trim_start_matches(OPENERS).to_lowercase();
        if ABBREVIATIONS.contains(&bare.as_str()) {
            return false;
        }
    }
    true
}

/// Splits `text` into sentences.
pub fn segment_sentences(text: &str) -> Result<Vec<String>, TypesError> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for word in text.split_whitespace() {
        current.push(word);
        if ends_sentence(word) {
            out.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    if out.is_empty() {
        return Err(TypesError::EmptyInput);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_periods() {
        assert_eq!(
            segment_sentences("A dog runs. A cat sits.").unwrap(),
            vec!["A dog runs.", "A cat sits."]
        );
    }

    #[test]
    fn no_terminator() {
        assert_eq!(segment_sentences("Hello world").unwrap(), vec!["Hello world"]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(
            segment_sentences("It is 5 p.m. now. Done.").unwrap(),
            vec!["It is 5 p.m. now.", "Done."]
        );
    }

    #[test]
    fn closing_quote_after_terminator() {
        assert_eq!(
            segment_sentences("He said \"stop.\" Then he left!").unwrap(),
            vec!["He said \"stop.\"", "Then he left!"]
        );
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(segment_sentences(""), Err(TypesError::EmptyInput));
        assert_eq!(segment_sentences(" \n\t "), Err(TypesError::EmptyInput));
    }

    proptest! {
        #[test]
        fn join_reconstructs_normalized_input(text in "[a-zA-Z.!? \n]{1,80}") {
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            match segment_sentences(&text) {
                Ok(parts) => prop_assert_eq!(parts.join(" "), normalized),
                Err(_) => prop_assert!(normalized.is_empty()),
            }
        }

        #[test]
        fn idempotent_on_single_sentences(text in "[a-zA-Z ]{1,40}[.!?]?") {
            if let Ok(parts) = segment_sentences(&text) {
                for p in parts {
                    prop_assert_eq!(segment_sentences(&p).unwrap(), vec![p.clone()]);
                }
            }
        }
    }
}
