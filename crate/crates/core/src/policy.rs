//! Bucket-conditioned bigram softmax policy.
//!
//! The parameters are an explicit logit table of shape `[C, V, V]`: entry
//! `[c, u, v]` is the unnormalized log-probability of token `v` following
//! token `u` for prompts hashed into bucket `c`. Sequence log-probabilities
//! and their gradients are exact and closed form, which is all the DPO-style
//! objectives need from a model.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::SentenceFeedback;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const DEFAULT_BUCKETS: usize = 16;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("duplicate token `{0}` in vocabulary")]
    DuplicateToken(String),
    #[error("vocabulary must start with {BOS} and {EOS}")]
    MissingReserved,
    #[error("policy needs at least one prompt bucket")]
    NoBuckets,
    #[error("bucket {bucket} out of range for {buckets} buckets")]
    BucketOutOfRange { bucket: usize, buckets: usize },
    #[error("token id {0} out of range")]
    TokenOutOfRange(usize),
    #[error("tokenized response must start with BOS, end with EOS and have length >= 2")]
    MalformedSequence,
    #[error("logit table has {found} entries, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Ordered token list with reserved `<bos>` at 0 and `<eos>` at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: Option<usize>,
}

impl Vocabulary {
    /// `tokens` must begin with `<bos>`, `<eos>`; an `<unk>` entry anywhere
    /// enables unknown-word mapping.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, PolicyError> {
        if tokens.len() < 3 || tokens[BOS_ID] != BOS || tokens[EOS_ID] != EOS {
            return Err(PolicyError::MissingReserved);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PolicyError::DuplicateToken(t.clone()));
            }
        }
        let unk = index.get(UNK).copied();
        Ok(Self { tokens, index, unk })
    }

    /// Reserved tokens followed by the sorted distinct whitespace-delimited
    /// words of `texts`.
    pub fn from_texts<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        with_unk: bool,
    ) -> Result<Self, PolicyError> {
        let words: BTreeSet<&str> = texts.into_iter().flat_map(str::split_whitespace).collect();
        let mut tokens = vec![BOS.to_string(), EOS.to_string()];
        if with_unk {
            tokens.push(UNK.to_string());
        }
        tokens.extend(
            words
                .into_iter()
                .filter(|w| ![BOS, EOS, UNK].contains(w))
                .map(String::from),
        );
        if tokens.len() < 3 {
            tokens.push(UNK.to_string());
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn has_unk(&self) -> bool {
        self.unk.is_some()
    }
}

/// Stable FNV-1a hash of a prompt id into `buckets`.
pub fn prompt_bucket(prompt_id: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in prompt_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedResponse {
    pub bucket: usize,
    pub token_ids: Vec<usize>,
}

impl TokenizedResponse {
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.token_ids.windows(2).map(|w| (w[0], w[1]))
    }
}

/// `BOS + word ids + EOS`.
pub fn tokenize(vocab: &Vocabulary, text: &str, bucket: usize) -> Result<TokenizedResponse, PolicyError> {
    let mut ids = vec![BOS_ID];
    for word in text.split_whitespace() {
        match vocab.id(word).or(vocab.unk) {
            Some(id) => ids.push(id),
            None => return Err(PolicyError::UnknownToken(word.to_string())),
        }
    }
    ids.push(EOS_ID);
    Ok(TokenizedResponse {
        bucket,
        token_ids: ids,
    })
}

/// Renders a feedback tuple as the detection target sequence
/// `type=…|reason=…|severity=…|severity_reason=…`, absent fields as `None`.
pub fn render_detection_target(fb: &SentenceFeedback) -> String {
    format!(
        "type={}|reason={}|severity={}|severity_reason={}",
        fb.h_type,
        fb.h_reason.as_deref().unwrap_or("None"),
        fb.severity,
        fb.severity_reason.as_deref().unwrap_or("None"),
    )
}

/// Dense `[C, V, V]` tensor used for both logits and their gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTensor {
    buckets: usize,
    size: usize,
    data: Vec<f64>,
}

impl LogitTensor {
    pub fn zeros(buckets: usize, size: usize) -> Self {
        Self {
            buckets,
            size,
            data: vec![0.0; buckets * size * size],
        }
    }

    pub fn from_vec(buckets: usize, size: usize, data: Vec<f64>) -> Result<Self, PolicyError> {
        let expected = buckets * size * size;
        if data.len() != expected {
            return Err(PolicyError::ShapeMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self { buckets, size, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.buckets, self.size, self.size)
    }

    fn offset(&self, c: usize, u: usize) -> usize {
        (c * self.size + u) * self.size
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> f64 {
        self.data[self.offset(c, u) + v]
    }

    pub fn set(&mut self, c: usize, u: usize, v: usize, x: f64) {
        let o = self.offset(c, u);
        self.data[o + v] = x;
    }

    pub fn row(&self, c: usize, u: usize) -> &[f64] {
        let o = self.offset(c, u);
        &self.data[o..o + self.size]
    }

    pub fn row_mut(&mut self, c: usize, u: usize) -> &mut [f64] {
        let o = self.offset(c, u);
        &mut self.data[o..o + self.size]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &LogitTensor, alpha: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &LogitTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Stabilized `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| (x - lse).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab: Vocabulary,
    logits: LogitTensor,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    vocab: Vec<String>,
    buckets: usize,
    logits: Vec<f64>,
}

impl ToyPolicy {
    /// Uniform policy (all logits zero).
    pub fn uniform(vocab: Vocabulary, buckets: usize) -> Result<Self, PolicyError> {
        if buckets == 0 {
            return Err(PolicyError::NoBuckets);
        }
        let logits = LogitTensor::zeros(buckets, vocab.len());
        Ok(Self { vocab, logits })
    }

    pub fn from_logits(vocab: Vocabulary, logits: LogitTensor) -> Result<Self, PolicyError> {
        let (c, v, _) = logits.shape();
        if c == 0 {
            return Err(PolicyError::NoBuckets);
        }
        if v != vocab.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: vocab.len(),
                found: v,
            });
        }
        Ok(Self { vocab, logits })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn buckets(&self) -> usize {
        self.logits.buckets
    }

    pub fn logits(&self) -> &LogitTensor {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut LogitTensor {
        &mut self.logits
    }

    /// Bucket for `prompt_id` under this policy's bucket count.
    pub fn bucket_of(&self, prompt_id: &str) -> usize {
        prompt_bucket(prompt_id, self.buckets())
    }

    pub fn tokenize(&self, text: &str, prompt_id: &str) -> Result<TokenizedResponse, PolicyError> {
        tokenize(&self.vocab, text, self.bucket_of(prompt_id))
    }

    pub fn check(&self, r: &TokenizedResponse) -> Result<(), PolicyError> {
        if r.bucket >= self.buckets() {
            return Err(PolicyError::BucketOutOfRange {
                bucket: r.bucket,
                buckets: self.buckets(),
            });
        }
        if r.token_ids.len() < 2
            || r.token_ids[0] != BOS_ID
            || *r.token_ids.last().unwrap() != EOS_ID
        {
            return Err(PolicyError::MalformedSequence);
        }
        if let Some(&bad) = r.token_ids.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(PolicyError::TokenOutOfRange(bad));
        }
        Ok(())
    }

    /// Next-token distribution after `prev` in bucket `c`.
    pub fn next_token_probs(&self, c: usize, prev: usize) -> Vec<f64> {
        softmax(self.logits.row(c, prev))
    }

    /// `Σ_t log softmax(logits[c, r_t, ·])[r_{t+1}]`.
    pub fn log_prob(&self, r: &TokenizedResponse) -> f64 {
        r.transitions()
            .map(|(u, v)| {
                let row = self.logits.row(r.bucket, u);
                row[v] - log_sum_exp(row)
            })
            .sum()
    }

    /// `out += scale * ∇ log_prob(r)`, touching only the rows `r` visits.
    pub fn accumulate_grad_log_prob(&self, r: &TokenizedResponse, scale: f64, out: &mut LogitTensor) {
        for (u, v) in r.transitions() {
            let row = self.logits.row(r.bucket, u);
            let lse = log_sum_exp(row);
            let g = out.row_mut(r.bucket, u);
            for (k, (gk, x)) in g.iter_mut().zip(row).enumerate() {
                let p = (x - lse).exp();
                let ind = if k == v { 1.0 } else { 0.0 };
                *gk += scale * (ind - p);
            }
        }
    }

    /// Dense gradient of [`Self::log_prob`] with respect to the logit table.
    pub fn grad_log_prob(&self, r: &TokenizedResponse) -> LogitTensor {
        let mut g = LogitTensor::zeros(self.buckets(), self.vocab.len());
        self.accumulate_grad_log_prob(r, 1.0, &mut g);
        g
    }

    /// Mean negative log-likelihood over `batch` and its gradient.
    pub fn nll_loss(&self, batch: &[TokenizedResponse]) -> Result<(f64, LogitTensor), PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let mut grad = LogitTensor::zeros(self.buckets(), self.vocab.len());
        let mut total = 0.0;
        for r in batch {
            self.check(r)?;
            total += self.log_prob(r);
            self.accumulate_grad_log_prob(r, -1.0 / n, &mut grad);
        }
        Ok((-total / n, grad))
    }

    pub fn to_json(&self) -> Result<String, PolicyError> {
        let ck = Checkpoint {
            vocab: self.vocab.tokens.clone(),
            buckets: self.buckets(),
            logits: self.logits.data.clone(),
        };
        let mut s = serde_json::to_string(&ck)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        let vocab = Vocabulary::from_tokens(ck.vocab)?;
        let logits = LogitTensor::from_vec(ck.buckets, vocab.len(), ck.logits)?;
        Self::from_logits(vocab, logits)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        crate::jsonl::create_parent(path)?;
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Read-only reference copy of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicy(ToyPolicy);

impl std::ops::Deref for FrozenPolicy {
    type Target = ToyPolicy;

    fn deref(&self) -> &ToyPolicy {
        &self.0
    }
}

/// Deep copy that later training of `policy` cannot touch.
pub fn snapshot_reference(policy: &ToyPolicy) -> FrozenPolicy {
    FrozenPolicy(policy.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vocab4() -> Vocabulary {
        Vocabulary::from_tokens(vec![BOS.into(), EOS.into(), "dog".into(), "runs".into()]).unwrap()
    }

    #[test]
    fn tokenize_cases() {
        let v = vocab4();
        assert_eq!(tokenize(&v, "", 0).unwrap().token_ids, vec![BOS_ID, EOS_ID]);
        assert_eq!(tokenize(&v, "dog runs", 0).unwrap().token_ids, vec![0, 2, 3, 1]);
        match tokenize(&v, "zebra", 0) {
            Err(PolicyError::UnknownToken(w)) => assert_eq!(w, "zebra"),
            other => panic!("{other:?}"),
        }
        let with_unk = Vocabulary::from_texts(["dog"], true).unwrap();
        let t = tokenize(&with_unk, "zebra dog", 0).unwrap();
        assert_eq!(t.token_ids[1], with_unk.id(UNK).unwrap());
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_missing_reserved() {
        assert!(matches!(
            Vocabulary::from_tokens(vec![BOS.into(), EOS.into(), "a".into(), "a".into()]),
            Err(PolicyError::DuplicateToken(_))
        ));
        assert!(matches!(
            Vocabulary::from_tokens(vec![EOS.into(), BOS.into(), "a".into()]),
            Err(PolicyError::MissingReserved)
        ));
    }

    #[test]
    fn uniform_log_prob() {
        let p = ToyPolicy::uniform(vocab4(), 1).unwrap();
        let r = tokenize(p.vocab(), "dog", 0).unwrap();
        assert_relative_eq!(p.log_prob(&r), 2.0 * (0.25f64).ln(), epsilon = 1e-15);
        assert_relative_eq!(p.log_prob(&r), -2.772_588_722_239_781, epsilon = 1e-12);
    }

    #[test]
    fn minimal_sequence_is_single_transition() {
        let mut p = ToyPolicy::uniform(vocab4(), 2).unwrap();
        p.logits_mut().set(1, BOS_ID, EOS_ID, 1.5);
        let r = TokenizedResponse {
            bucket: 1,
            token_ids: vec![BOS_ID, EOS_ID],
        };
        let probs = p.next_token_probs(1, BOS_ID);
        assert_relative_eq!(p.log_prob(&r), probs[EOS_ID].ln(), epsilon = 1e-15);
    }

    #[test]
    fn single_transition_uniform_gradient() {
        let p = ToyPolicy::uniform(vocab4(), 2).unwrap();
        let r = TokenizedResponse {
            bucket: 0,
            token_ids: vec![BOS_ID, EOS_ID],
        };
        let g = p.grad_log_prob(&r);
        assert_eq!(g.row(0, BOS_ID), &[-0.25, 0.75, -0.25, -0.25]);
        assert!(g.row(1, BOS_ID).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nll_sign_and_empty_batch() {
        let p = ToyPolicy::uniform(vocab4(), 1).unwrap();
        let r = tokenize(p.vocab(), "dog", 0).unwrap();
        let (loss, _) = p.nll_loss(&[r.clone(), r]).unwrap();
        assert_relative_eq!(loss, 2.772_588_722_239_781, epsilon = 1e-12);
        assert!(matches!(p.nll_loss(&[]), Err(PolicyError::EmptyBatch)));
    }

    #[test]
    fn check_rejects_bad_sequences() {
        let p = ToyPolicy::uniform(vocab4(), 1).unwrap();
        let bad_bucket = TokenizedResponse { bucket: 3, token_ids: vec![0, 1] };
        assert!(matches!(p.check(&bad_bucket), Err(PolicyError::BucketOutOfRange { .. })));
        let no_eos = TokenizedResponse { bucket: 0, token_ids: vec![0, 2] };
        assert!(matches!(p.check(&no_eos), Err(PolicyError::MalformedSequence)));
        let oob = TokenizedResponse { bucket: 0, token_ids: vec![0, 9, 1] };
        assert!(matches!(p.check(&oob), Err(PolicyError::TokenOutOfRange(9))));
    }

    #[test]
    fn detection_target_template() {
        let fb = SentenceFeedback::clean(0, "A dog.");
        assert_eq!(
            render_detection_target(&fb),
            "type=none|reason=None|severity=0|severity_reason=None"
        );
    }

    #[test]
    fn bucket_hash_is_stable() {
        assert_eq!(prompt_bucket("", 16), (0xcbf2_9ce4_8422_2325u64 % 16) as usize);
        assert_eq!(prompt_bucket("p1", 16), prompt_bucket("p1", 16));
        assert!(prompt_bucket("anything", 5) < 5);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let row = [1000.0, 1000.0];
        assert_relative_eq!(log_sum_exp(&row), 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }
}
