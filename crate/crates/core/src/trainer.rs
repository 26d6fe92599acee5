//! Fixed-step gradient descent on the preference objectives.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{log_sum_exp, FrozenPolicy, LogitTensor, PolicyError, TokenizedResponse, ToyPolicy};
use crate::preference::{preference_loss, LossKind, PairScores, PreferenceError};
use crate::types::PreferenceDataset;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("preference dataset is empty")]
    EmptyDataset,
    #[error("policy and reference disagree on vocabulary or bucket count")]
    ReferenceMismatch,
    #[error("prompt `{prompt_id}`: {source}")]
    Tokenize {
        prompt_id: String,
        #[source]
        source: PolicyError,
    },
    #[error(transparent)]
    Loss(#[from] PreferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 0.05,
            steps: 1000,
            batch_size: 64,
            loss_kind: LossKind::HsaDpo,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(TrainError::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Keys match the field names; `lr` and
    /// `loss` are accepted as aliases.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = |e: &dyn std::fmt::Display| TrainError::Config(format!("{key}={value}: {e}"));
        match key {
            "beta" => self.beta = value.parse().map_err(|e| bad(&e))?,
            "learning_rate" | "lr" => self.learning_rate = value.parse().map_err(|e| bad(&e))?,
            "steps" => self.steps = value.parse().map_err(|e| bad(&e))?,
            "batch_size" => self.batch_size = value.parse().map_err(|e| bad(&e))?,
            "loss_kind" | "loss" => self.loss_kind = value.parse().map_err(|e: String| bad(&e))?,
            "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
            _ => return Err(TrainError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub mean_chosen_logratio: f64,
    pub mean_rejected_logratio: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: ToyPolicy,
    pub trace: Vec<StepStats>,
}

/// A preference pair tokenized for a given policy, with its fixed reference
/// log-probabilities.
#[derive(Debug, Clone)]
pub struct TokenizedPair {
    pub prompt_id: String,
    pub chosen: TokenizedResponse,
    pub rejected: TokenizedResponse,
    pub chosen_logp_ref: f64,
    pub rejected_logp_ref: f64,
    pub severity: f64,
}

impl TokenizedPair {
    pub fn scores(&self, policy: &ToyPolicy) -> PairScores {
        PairScores {
            chosen_logp_policy: policy.log_prob(&self.chosen),
            chosen_logp_ref: self.chosen_logp_ref,
            rejected_logp_policy: policy.log_prob(&self.rejected),
            rejected_logp_ref: self.rejected_logp_ref,
            severity: self.severity,
        }
    }
}

pub fn tokenize_pairs(
    reference: &FrozenPolicy,
    data: &PreferenceDataset,
) -> Result<Vec<TokenizedPair>, TrainError> {
    data.pairs()
        .iter()
        .map(|p| {
            let id = &p.prompt.prompt_id;
            let wrap = |source| TrainError::Tokenize {
                prompt_id: id.clone(),
                source,
            };
            let chosen = reference.tokenize(p.chosen.raw_text(), id).map_err(wrap)?;
            let rejected = reference
                .tokenize(p.rejected.response.raw_text(), id)
                .map_err(wrap)?;
            Ok(TokenizedPair {
                prompt_id: id.clone(),
                chosen_logp_ref: reference.log_prob(&chosen),
                rejected_logp_ref: reference.log_prob(&rejected),
                chosen,
                rejected,
                severity: p.aggregated_severity.to_f64(),
            })
        })
        .collect()
}

/// Dense gradient buffer that remembers which rows were written so that
/// applying and clearing it only touches those rows.
///
/// Each visited row gets its log-normaliser computed once per step. The
/// softmax part of the gradient is folded in per row rather than per token:
/// a row visited with total weight `w` contributes `-w * softmax(row)`.
struct SparseGrad {
    grad: LogitTensor,
    weight: Vec<f64>,
    lse: Vec<f64>,
    touched: Vec<bool>,
    rows: Vec<(usize, usize)>,
    size: usize,
}

impl SparseGrad {
    fn new(buckets: usize, size: usize) -> Self {
        Self {
            grad: LogitTensor::zeros(buckets, size),
            weight: vec![0.0; buckets * size],
            lse: vec![0.0; buckets * size],
            touched: vec![false; buckets * size],
            rows: Vec::new(),
            size,
        }
    }

    fn visit(&mut self, policy: &ToyPolicy, r: &TokenizedResponse) {
        for (u, _) in r.transitions() {
            let k = r.bucket * self.size + u;
            if !self.touched[k] {
                self.touched[k] = true;
                self.rows.push((r.bucket, u));
                self.lse[k] = log_sum_exp(policy.logits().row(r.bucket, u));
            }
        }
    }

    /// Same value as [`ToyPolicy::log_prob`], reusing cached normalisers.
    fn log_prob(&self, policy: &ToyPolicy, r: &TokenizedResponse) -> f64 {
        r.transitions()
            .map(|(u, v)| policy.logits().get(r.bucket, u, v) - self.lse[r.bucket * self.size + u])
            .sum()
    }

    /// Adds the indicator part of `scale * ∇ log_prob(r)`; rows must be visited.
    fn add(&mut self, r: &TokenizedResponse, scale: f64) {
        for (u, v) in r.transitions() {
            self.weight[r.bucket * self.size + u] += scale;
            self.grad.row_mut(r.bucket, u)[v] += scale;
        }
    }

    fn finalize(&mut self, policy: &ToyPolicy) {
        for &(c, u) in &self.rows {
            let k = c * self.size + u;
            let (w, lse) = (self.weight[k], self.lse[k]);
            for (g, x) in self.grad.row_mut(c, u).iter_mut().zip(policy.logits().row(c, u)) {
                *g -= w * (x - lse).exp();
            }
            self.weight[k] = 0.0;
        }
    }

    /// `logits -= lr * grad`, then clears.
    fn apply(&mut self, logits: &mut LogitTensor, lr: f64) {
        self.rows.sort_unstable();
        for &(c, u) in &self.rows {
            let g = self.grad.row_mut(c, u);
            for (x, gx) in logits.row_mut(c, u).iter_mut().zip(g.iter_mut()) {
                *x -= lr * *gx;
                *gx = 0.0;
            }
            self.touched[c * self.size + u] = false;
        }
        self.rows.clear();
    }
}

/// Gradient of the configured loss over `pairs` with respect to the logit
/// table, plus the pre-update statistics for the step.
pub fn batch_gradient(
    policy: &ToyPolicy,
    pairs: &[&TokenizedPair],
    cfg: &TrainerConfig,
) -> Result<(LogitTensor, StepStats), TrainError> {
    let mut sparse = SparseGrad::new(policy.buckets(), policy.vocab().len());
    let stats = accumulate_batch(policy, pairs, cfg, 0, &mut sparse)?;
    Ok((sparse.grad, stats))
}

fn accumulate_batch(
    policy: &ToyPolicy,
    pairs: &[&TokenizedPair],
    cfg: &TrainerConfig,
    step: usize,
    sparse: &mut SparseGrad,
) -> Result<StepStats, TrainError> {
    for p in pairs {
        sparse.visit(policy, &p.chosen);
        sparse.visit(policy, &p.rejected);
    }
    let scores: Vec<PairScores> = pairs
        .iter()
        .map(|p| PairScores {
            chosen_logp_policy: sparse.log_prob(policy, &p.chosen),
            chosen_logp_ref: p.chosen_logp_ref,
            rejected_logp_policy: sparse.log_prob(policy, &p.rejected),
            rejected_logp_ref: p.rejected_logp_ref,
            severity: p.severity,
        })
        .collect();
    let out = preference_loss(cfg.loss_kind, &scores, cfg.beta)?;
    for (p, g) in pairs.iter().zip(&out.grads) {
        sparse.add(&p.chosen, g.chosen_policy);
        sparse.add(&p.rejected, g.rejected_policy);
    }
    sparse.finalize(policy);
    let n = scores.len() as f64;
    Ok(StepStats {
        step,
        loss: out.loss,
        mean_chosen_logratio: scores.iter().map(PairScores::chosen_logratio).sum::<f64>() / n,
        mean_rejected_logratio: scores.iter().map(PairScores::rejected_logratio).sum::<f64>() / n,
    })
}

/// Runs `cfg.steps` gradient-descent steps starting from `policy`.
///
/// When `batch_size` covers the dataset every step is full-batch; otherwise
/// each epoch visits a seeded shuffle of the pairs in consecutive chunks.
pub fn train(
    policy: ToyPolicy,
    reference: &FrozenPolicy,
    data: &PreferenceDataset,
    cfg: &TrainerConfig,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if policy.vocab() != reference.vocab() || policy.buckets() != reference.buckets() {
        return Err(TrainError::ReferenceMismatch);
    }
    let pairs = tokenize_pairs(reference, data)?;
    train_tokenized(policy, &pairs, cfg)
}

pub fn train_tokenized(
    mut policy: ToyPolicy,
    pairs: &[TokenizedPair],
    cfg: &TrainerConfig,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let full_batch = cfg.batch_size >= pairs.len();
    let mut cursor = pairs.len();
    let mut sparse = SparseGrad::new(policy.buckets(), policy.vocab().len());
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<&TokenizedPair> = if full_batch {
            pairs.iter().collect()
        } else {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.batch_size).min(order.len());
            let b = order[cursor..end].iter().map(|&i| &pairs[i]).collect();
            cursor = end;
            b
        };
        let stats = accumulate_batch(&policy, &batch, cfg, step, &mut sparse)?;
        sparse.apply(policy.logits_mut(), cfg.learning_rate);
        trace.push(stats);
    }
    Ok(TrainOutput { policy, trace })
}

/// Writes `step,loss,mean_chosen_logratio,mean_rejected_logratio` rows.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[StepStats]) -> std::io::Result<()> {
    writeln!(w, "step,loss,mean_chosen_logratio,mean_rejected_logratio")?;
    for s in trace {
        writeln!(
            w,
            "{},{},{},{}",
            s.step, s.loss, s.mean_chosen_logratio, s.mean_rejected_logratio
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_config_parsing() {
        let mut cfg = TrainerConfig::default();
        cfg.apply_kv("# comment\nbeta = 0.2\nlr=0.01\nloss=dpo\nsteps=7 # trailing\n\nseed=9\n")
            .unwrap();
        assert_eq!(cfg.beta, 0.2);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.loss_kind, LossKind::Dpo);
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_kv("nonsense").is_err());
        assert!(cfg.apply_kv("gamma=1").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.beta = 0.0;
        assert!(cfg.validate().is_err());
        cfg.beta = 0.1;
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(
            &mut buf,
            &[StepStats {
                step: 0,
                loss: 0.5,
                mean_chosen_logratio: 0.0,
                mean_rejected_logratio: -0.25,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,loss,mean_chosen_logratio,mean_rejected_logratio\n0,0.5,0,-0.25\n"
        );
    }
}
