//! Sentence-level class balancing for detection training data.
//!
//! Only one class is ever subsampled: the other is kept whole, and the
//! subsampled count is the one bringing `hallucinated / clean` closest to the
//! target. Ties go to the larger total. Nothing is duplicated.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::Signed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FeedbackDataset, PromptRecord, SentenceFeedback};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BalanceError {
    #[error("balancing needs both classes (hallucinated={hallucinated}, clean={clean})")]
    ClassMissing { hallucinated: usize, clean: usize },
    #[error("invalid ratio `{0}`, expected `h:c` with positive parts")]
    InvalidRatio(String),
}

/// Target `hallucinated : clean` ratio, kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceRatio(Ratio<u64>);

impl BalanceRatio {
    pub fn new(hallucinated: Ratio<u64>, clean: Ratio<u64>) -> Result<Self, BalanceError> {
        if hallucinated == Ratio::from_integer(0) || clean == Ratio::from_integer(0) {
            return Err(BalanceError::InvalidRatio(format!("{hallucinated}:{clean}")));
        }
        Ok(Self(hallucinated / clean))
    }

    /// `hallucinated / clean`.
    pub fn value(self) -> Ratio<u64> {
        self.0
    }
}

impl Default for BalanceRatio {
    /// 1 : 1.2
    fn default() -> Self {
        Self(Ratio::new(5, 6))
    }
}

impl fmt::Display for BalanceRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.0.numer(), self.0.denom())
    }
}

fn parse_decimal(s: &str) -> Option<Ratio<u64>> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = |t: &str| t.chars().all(|c| c.is_ascii_digit());
    if !digits(int) || !digits(frac) || frac.len() > 12 {
        return None;
    }
    let scale = 10u64.checked_pow(frac.len() as u32)?;
    let whole: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let part: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    Some(Ratio::new(whole.checked_mul(scale)?.checked_add(part)?, scale))
}

impl FromStr for BalanceRatio {
    type Err = BalanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BalanceError::InvalidRatio(s.to_string());
        let (h, c) = s.trim().split_once(':').ok_or_else(bad)?;
        let h = parse_decimal(h.trim()).ok_or_else(bad)?;
        let c = parse_decimal(c.trim()).ok_or_else(bad)?;
        Self::new(h, c).map_err(|_| bad())
    }
}

fn distance(h: u64, c: u64, target: Ratio<u64>) -> Ratio<i128> {
    let got = Ratio::new(h as i128, c as i128);
    let want = Ratio::new(*target.numer() as i128, *target.denom() as i128);
    (got - want).abs()
}

/// True when `(h1, c1)` is a better balanced pair than `(h2, c2)`.
fn better(a: (u64, u64), b: (u64, u64), target: Ratio<u64>) -> bool {
    match distance(a.0, a.1, target).cmp(&distance(b.0, b.1, target)) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (a.0 + a.1, a.0) > (b.0 + b.1, b.0),
    }
}

/// Output counts for `hallucinated` and `clean` available sentences.
/// Both inputs must be at least 1.
pub fn balanced_counts(hallucinated: u64, clean: u64, ratio: BalanceRatio) -> (u64, u64) {
    assert!(hallucinated >= 1 && clean >= 1, "both classes must be non-empty");
    let r = ratio.value();
    let mut candidates = Vec::with_capacity(4);
    // Keep hallucinated whole: clean* = h / r.
    let ideal_c = Ratio::from_integer(hallucinated) / r;
    for c in [ideal_c.floor().to_integer(), ideal_c.ceil().to_integer()] {
        candidates.push((hallucinated, c.clamp(1, clean)));
    }
    // Keep clean whole: hallucinated* = c · r.
    let ideal_h = Ratio::from_integer(clean) * r;
    for h in [ideal_h.floor().to_integer(), ideal_h.ceil().to_integer()] {
        candidates.push((h.clamp(1, hallucinated), clean));
    }
    candidates
        .into_iter()
        .reduce(|best, c| if better(c, best, r) { c } else { best })
        .expect("four candidates")
}

/// One sentence-level detection training record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionExample {
    pub prompt: PromptRecord,
    pub feedback: SentenceFeedback,
}

/// Flattens `d` to sentences and subsamples one class toward `ratio`.
/// Survivors keep their original relative order.
pub fn balance_detection_training_set(
    d: &FeedbackDataset,
    ratio: BalanceRatio,
    seed: u64,
) -> Result<Vec<DetectionExample>, BalanceError> {
    let examples: Vec<DetectionExample> = d
        .records()
        .iter()
        .flat_map(|r| {
            r.annotated.feedback.iter().map(|f| DetectionExample {
                prompt: r.prompt.clone(),
                feedback: f.clone(),
            })
        })
        .collect();
    let (hal_idx, clean_idx): (Vec<usize>, Vec<usize>) =
        (0..examples.len()).partition(|&i| examples[i].feedback.is_hallucinated());
    if hal_idx.is_empty() || clean_idx.is_empty() {
        return Err(BalanceError::ClassMissing {
            hallucinated: hal_idx.len(),
            clean: clean_idx.len(),
        });
    }
    let (h, c) = balanced_counts(hal_idx.len() as u64, clean_idx.len() as u64, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; examples.len()];
    for (class, k) in [(&hal_idx, h as usize), (&clean_idx, c as usize)] {
        for j in rand::seq::index::sample(&mut rng, class.len(), k) {
            keep[class[j]] = true;
        }
    }
    Ok(examples
        .into_iter()
        .zip(keep)
        .filter_map(|(e, k)| k.then_some(e))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_counts() {
        let r = BalanceRatio::default();
        assert_eq!(balanced_counts(100, 120, r), (100, 120));
        assert_eq!(balanced_counts(100, 500, r), (100, 120));
        assert_eq!(balanced_counts(50, 40, r), (33, 40));
    }

    #[test]
    fn parses_ratios() {
        assert_eq!("1:1.2".parse::<BalanceRatio>().unwrap(), BalanceRatio::default());
        assert_eq!("5:6".parse::<BalanceRatio>().unwrap(), BalanceRatio::default());
        assert_eq!(" 2 : 1 ".parse::<BalanceRatio>().unwrap().value(), Ratio::from_integer(2));
        for bad in ["", "1", "0:1", "1:0", "a:b", "1:-2", "1:."] {
            assert!(bad.parse::<BalanceRatio>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn never_upsamples_and_keeps_a_class_whole(h in 1u64..400, c in 1u64..400) {
            let (oh, oc) = balanced_counts(h, c, BalanceRatio::default());
            prop_assert!(oh >= 1 && oh <= h && oc >= 1 && oc <= c);
            prop_assert!(oh == h || oc == c);
        }
    }
}
