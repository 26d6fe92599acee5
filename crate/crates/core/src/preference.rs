//! Severity aggregation and the DPO / severity-weighted DPO objectives.
//!
//! Both losses are averaged over the batch. For pair `i` with policy and
//! reference log-probabilities of the chosen (`cw`, `cr`) and rejected
//! (`rw`, `rr`) responses:
//!
//! ```text
//! DPO:      u_i = β · [(cw − cr) − (rw − rr)]
//! HSA-DPO:  u_i = β · [(cw − cr) − S_i · (rw − rr)]
//! loss      = −(1/n) Σ log σ(u_i)
//! ```
//!
//! where `S_i` is the rejected response's mean sentence severity. With every
//! `S_i = 1` the two objectives coincide bit for bit.

use num_rational::Ratio;
use thiserror::Error;

use crate::types::{AggregatedSeverity, SentenceFeedback};

#[derive(Debug, Error, PartialEq)]
pub enum PreferenceError {
    #[error("empty feedback list")]
    EmptyFeedback,
    #[error("empty batch")]
    EmptyBatch,
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("pair {index}: severity {value} outside [0, 3]")]
    SeverityRange { index: usize, value: f64 },
    #[error("pair {index}: non-finite log-probability")]
    NonFinite { index: usize },
}

/// Mean sentence severity over all `T` sentences, clean ones included.
pub fn aggregate_severity(feedback: &[SentenceFeedback]) -> Result<AggregatedSeverity, PreferenceError> {
    if feedback.is_empty() {
        return Err(PreferenceError::EmptyFeedback);
    }
    let total: u64 = feedback.iter().map(|f| u64::from(f.severity.value())).sum();
    let mean = Ratio::new(total, feedback.len() as u64);
    // Each term is <= 3, so the mean is too.
    Ok(AggregatedSeverity::new(mean).expect("mean of 0..=3 values is within range"))
}

/// Log-probabilities entering one preference term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub chosen_logp_policy: f64,
    pub chosen_logp_ref: f64,
    pub rejected_logp_policy: f64,
    pub rejected_logp_ref: f64,
    pub severity: f64,
}

impl PairScores {
    pub fn new(
        chosen_logp_policy: f64,
        chosen_logp_ref: f64,
        rejected_logp_policy: f64,
        rejected_logp_ref: f64,
        severity: AggregatedSeverity,
    ) -> Self {
        Self {
            chosen_logp_policy,
            chosen_logp_ref,
            rejected_logp_policy,
            rejected_logp_ref,
            severity: severity.to_f64(),
        }
    }

    pub fn chosen_logratio(&self) -> f64 {
        self.chosen_logp_policy - self.chosen_logp_ref
    }

    pub fn rejected_logratio(&self) -> f64 {
        self.rejected_logp_policy - self.rejected_logp_ref
    }

    fn is_finite(&self) -> bool {
        [
            self.chosen_logp_policy,
            self.chosen_logp_ref,
            self.rejected_logp_policy,
            self.rejected_logp_ref,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Partial derivatives of the batch loss with respect to one pair's scores.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairGrad {
    pub chosen_policy: f64,
    pub chosen_ref: f64,
    pub rejected_policy: f64,
    pub rejected_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Vec<PairGrad>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    #[serde(rename = "dpo")]
    Dpo,
    #[default]
    #[serde(rename = "hsa-dpo")]
    HsaDpo,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dpo" => Ok(LossKind::Dpo),
            "hsa-dpo" => Ok(LossKind::HsaDpo),
            other => Err(format!("unknown loss kind `{other}` (expected dpo or hsa-dpo)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Dpo => "dpo",
            LossKind::HsaDpo => "hsa-dpo",
        })
    }
}

/// `log σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn weighted_loss(
    batch: &[PairScores],
    beta: f64,
    weight: impl Fn(&PairScores) -> f64,
) -> Result<LossOutput, PreferenceError> {
    if batch.is_empty() {
        return Err(PreferenceError::EmptyBatch);
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PreferenceError::InvalidBeta(beta));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (index, p) in batch.iter().enumerate() {
        if !p.is_finite() {
            return Err(PreferenceError::NonFinite { index });
        }
        let s = weight(p);
        let u = beta * (p.chosen_logratio() - s * p.rejected_logratio());
        total += log_sigmoid(u);
        let k = beta * sigmoid(-u) / n;
        grads.push(PairGrad {
            chosen_policy: -k,
            chosen_ref: k,
            rejected_policy: k * s,
            rejected_ref: -k * s,
        });
    }
    Ok(LossOutput {
        loss: -total / n,
        grads,
    })
}

/// Standard DPO loss, averaged over the batch.
pub fn dpo_loss(batch: &[PairScores], beta: f64) -> Result<LossOutput, PreferenceError> {
    weighted_loss(batch, beta, |_| 1.0)
}

/// Severity-aware DPO: the rejected log-ratio is scaled by the pair's
/// aggregated severity.
pub fn hsa_dpo_loss(batch: &[PairScores], beta: f64) -> Result<LossOutput, PreferenceError> {
    for (index, p) in batch.iter().enumerate() {
        if !(0.0..=3.0).contains(&p.severity) {
            return Err(PreferenceError::SeverityRange {
                index,
                value: p.severity,
            });
        }
    }
    weighted_loss(batch, beta, |p| p.severity)
}

pub fn preference_loss(kind: LossKind, batch: &[PairScores], beta: f64) -> Result<LossOutput, PreferenceError> {
    match kind {
        LossKind::Dpo => dpo_loss(batch, beta),
        LossKind::HsaDpo => hsa_dpo_loss(batch, beta),
    }
}

/// Absolute floor on the denominator of [`finite_difference_check`]'s
/// relative error, so coordinates whose true derivative is ~0 are compared
/// absolutely.
pub const FD_SCALE_FLOOR: f64 = 1e-3;

/// Compares the analytic gradient returned by `f` at `x` against central
/// differences with step `h`, returning the maximum over coordinates of
/// `|analytic − numeric| / max(|analytic|, |numeric|, FD_SCALE_FLOOR)`.
///
/// Panics unless `0 < h <= 1e-3`.
pub fn finite_difference_check<F>(f: F, x: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0 && h <= 1e-3, "finite-difference step must lie in (0, 1e-3]");
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match the input");
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe).0;
        probe[i] = x[i] - h;
        let down = f(&probe).0;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(FD_SCALE_FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Flattens a batch into `[cw, cr, rw, rr]*` coordinates for
/// [`finite_difference_check`]; severities stay fixed.
pub fn flatten_scores(batch: &[PairScores]) -> Vec<f64> {
    batch
        .iter()
        .flat_map(|p| {
            [
                p.chosen_logp_policy,
                p.chosen_logp_ref,
                p.rejected_logp_policy,
                p.rejected_logp_ref,
            ]
        })
        .collect()
}

/// Inverse of [`flatten_scores`], taking severities from `template`.
pub fn unflatten_scores(x: &[f64], template: &[PairScores]) -> Vec<PairScores> {
    template
        .iter()
        .zip(x.chunks_exact(4))
        .map(|(t, c)| PairScores {
            chosen_logp_policy: c[0],
            chosen_logp_ref: c[1],
            rejected_logp_policy: c[2],
            rejected_logp_ref: c[3],
            severity: t.severity,
        })
        .collect()
}

pub fn flatten_grads(grads: &[PairGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| [g.chosen_policy, g.chosen_ref, g.rejected_policy, g.rejected_ref])
        .collect()
}

/// Runs [`finite_difference_check`] on a preference loss at `batch`.
pub fn check_preference_gradients(kind: LossKind, batch: &[PairScores], beta: f64, h: f64) -> f64 {
    let f = |x: &[f64]| {
        let scores = unflatten_scores(x, batch);
        let out = preference_loss(kind, &scores, beta).expect("valid batch");
        (out.loss, flatten_grads(&out.grads))
    };
    finite_difference_check(f, &flatten_scores(batch), h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{HallucinationType, SeverityScore};
    use proptest::prelude::*;

    fn fb(sev: &[u8]) -> Vec<SentenceFeedback> {
        sev.iter()
            .enumerate()
            .map(|(i, &s)| {
                if s == 0 {
                    SentenceFeedback::clean(i, "x")
                } else {
                    SentenceFeedback::hallucinated(
                        i,
                        "x",
                        HallucinationType::Object,
                        "r",
                        SeverityScore::new(s).unwrap(),
                        None,
                    )
                }
            })
            .collect()
    }

    #[test]
    fn aggregate_examples() {
        assert!(aggregate_severity(&fb(&[0, 0, 0])).unwrap().is_zero());
        assert_eq!(aggregate_severity(&fb(&[3, 0, 2])).unwrap().ratio(), Ratio::new(5, 3));
        assert_eq!(aggregate_severity(&fb(&[3, 3, 3, 3])).unwrap().ratio(), Ratio::from_integer(3));
        assert_eq!(aggregate_severity(&[]), Err(PreferenceError::EmptyFeedback));
    }

    fn at_reference(severity: f64) -> PairScores {
        PairScores {
            chosen_logp_policy: -3.0,
            chosen_logp_ref: -3.0,
            rejected_logp_policy: -5.0,
            rejected_logp_ref: -5.0,
            severity,
        }
    }

    #[test]
    fn policy_equals_reference_gives_ln2() {
        let out = dpo_loss(&[at_reference(1.0)], 0.1).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let batch = [at_reference(0.0), at_reference(5.0 / 3.0), at_reference(3.0)];
        let out = hsa_dpo_loss(&batch, 0.1).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
        for (p, g) in batch.iter().zip(&out.grads) {
            assert!((g.rejected_policy - 0.1 * p.severity / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_margin_drives_loss_to_zero() {
        let p = PairScores {
            chosen_logp_policy: 0.0,
            chosen_logp_ref: -1e4,
            rejected_logp_policy: -1e4,
            rejected_logp_ref: 0.0,
            severity: 1.0,
        };
        let out = dpo_loss(&[p], 1.0).unwrap();
        assert!(out.loss >= 0.0 && out.loss < 1e-300);
    }

    #[test]
    fn errors() {
        assert_eq!(dpo_loss(&[], 0.1), Err(PreferenceError::EmptyBatch));
        assert!(matches!(dpo_loss(&[at_reference(1.0)], 0.0), Err(PreferenceError::InvalidBeta(_))));
        assert!(matches!(
            hsa_dpo_loss(&[at_reference(3.5)], 0.1),
            Err(PreferenceError::SeverityRange { index: 0, .. })
        ));
        let mut p = at_reference(1.0);
        p.rejected_logp_ref = f64::NEG_INFINITY;
        assert_eq!(dpo_loss(&[p], 0.1), Err(PreferenceError::NonFinite { index: 0 }));
    }

    #[test]
    fn fd_calibration_on_quadratic() {
        // f(x) = Σ a_i x_i^2 + b_i x_i
        let a = [0.5, -2.0, 3.0];
        let b = [1.0, 0.25, -4.0];
        let f = |x: &[f64]| {
            let v = x.iter().zip(a.iter().zip(&b)).map(|(x, (a, b))| a * x * x + b * x).sum();
            let g = x.iter().zip(a.iter().zip(&b)).map(|(x, (a, b))| 2.0 * a * x + b).collect();
            (v, g)
        };
        assert!(finite_difference_check(f, &[0.3, -1.2, 2.0], 1e-5) < 1e-9);
    }

    #[test]
    #[should_panic]
    fn fd_rejects_large_step() {
        finite_difference_check(|x: &[f64]| (x[0], vec![1.0]), &[0.0], 0.1);
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("hsa-dpo".parse::<LossKind>().unwrap(), LossKind::HsaDpo);
        assert_eq!("HSA_DPO".parse::<LossKind>().unwrap(), LossKind::HsaDpo);
        assert_eq!("dpo".parse::<LossKind>().unwrap(), LossKind::Dpo);
        assert!("ppo".parse::<LossKind>().is_err());
    }

    fn scores() -> impl Strategy<Value = PairScores> {
        (-30.0..0.0f64, -30.0..0.0f64, -30.0..0.0f64, -30.0..0.0f64, 0u8..=12)
            .prop_map(|(a, b, c, d, s)| PairScores {
                chosen_logp_policy: a,
                chosen_logp_ref: b,
                rejected_logp_policy: c,
                rejected_logp_ref: d,
                severity: f64::from(s) / 4.0,
            })
    }

    proptest! {
        #[test]
        fn translation_invariance(batch in prop::collection::vec(scores(), 1..6), shift in -5.0..5.0f64) {
            // Shifts by small dyadic amounts keep log-ratios exactly representable.
            let shift = (shift * 8.0).round() / 8.0;
            let moved: Vec<_> = batch.iter().map(|p| PairScores {
                chosen_logp_policy: p.chosen_logp_policy + shift,
                chosen_logp_ref: p.chosen_logp_ref + shift,
                rejected_logp_policy: p.rejected_logp_policy - shift,
                rejected_logp_ref: p.rejected_logp_ref - shift,
                ..*p
            }).collect();
            for kind in [LossKind::Dpo, LossKind::HsaDpo] {
                let a = preference_loss(kind, &batch, 0.1).unwrap();
                let b = preference_loss(kind, &moved, 0.1).unwrap();
                prop_assert!((a.loss - b.loss).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregate_is_permutation_invariant(mut sev in prop::collection::vec(0u8..=3, 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = aggregate_severity(&fb(&sev)).unwrap();
            sev.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = aggregate_severity(&fb(&sev)).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.ratio() <= Ratio::from_integer(3));
        }

        #[test]
        fn loss_is_nonnegative(batch in prop::collection::vec(scores(), 1..6)) {
            let out = hsa_dpo_loss(&batch, 0.1).unwrap();
            prop_assert!(out.loss >= 0.0);
        }
    }
}
