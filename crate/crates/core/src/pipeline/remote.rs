//! JSON-over-HTTP clients for externally hosted detection and rewriting
//! models.
//!
//! Detector: `{"prompt": {…}, "sentences": […]}` →
//! `{"feedback": [{"sentence_index", "h_type", "h_reason", "severity", "severity_reason"}]}`.
//!
//! Rewriter: `{"prompt": {…}, "sentences": […], "feedback": […]}` →
//! `{"sentences": […]}` with at least one sentence.
//!
//! A reply is either fully validated or rejected; nothing partial escapes.
//! Timeouts, connection failures and 5xx/429 statuses are retried with
//! exponential backoff; schema failures are not.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DetectorReply, DetectorRequest, Detector, PipelineError, RewriterReply, RewriterRequest, Rewriter};
use crate::types::{
    validate_annotated, AnnotatedResponse, HallucinationType, PromptRecord, ResponseRecord,
    SentenceFeedback, SeverityScore,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("http status {code}")]
    Status { code: u16, body: String },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RemoteError {
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned http {status}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed reply: {reason}")]
    MalformedReply { reason: String, raw: String },
    #[error("reply has {found} feedback entries for {expected} sentences")]
    LengthMismatch { expected: usize, found: usize },
}

/// Sends one JSON body and returns the raw reply body.
pub trait Transport: Send + Sync {
    fn post(&self, body: &str, timeout: Duration) -> Result<String, TransportError>;
}

/// Blocking HTTP POST transport.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    url: String,
}

impl HttpTransport {
    /// Accepts a full URL or a bare `host:port[/path]`, which gets `http://`.
    pub fn new(address: &str) -> Self {
        let url = if address.starts_with("http://") || address.starts_with("https://") {
            address.to_string()
        } else {
            format!("http://{address}")
        };
        Self { url }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str, timeout: Duration) -> Result<String, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
            other => TransportError::Connect(other.to_string()),
        };
        let mut resp = agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(map_err)?;
        let code = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_err)?;
        if code >= 400 {
            return Err(TransportError::Status { code, body: text });
        }
        Ok(text)
    }
}

/// Exponential backoff: `base · factor^attempt`, stretched by up to
/// `jitter` (a fraction) of itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32, unit_random: f64) -> Duration {
        let base = self.base_delay.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(base * (1.0 + self.jitter * unit_random.clamp(0.0, 1.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetryEvent {
    /// 0-based index of the failed attempt.
    pub attempt: u32,
    pub delay_ms: u64,
    pub error: String,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Endpoint plus timeout and retry settings.
pub struct RemoteClient {
    transport: Box<dyn Transport>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    sleeper: Sleeper,
    log: Mutex<Vec<RetryEvent>>,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("timeout", &self.timeout)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl RemoteClient {
    pub fn http(address: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        Self::with_transport(Box::new(HttpTransport::new(address)), timeout, retry)
    }

    pub fn with_transport(transport: Box<dyn Transport>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            transport,
            timeout,
            retry,
            sleeper: Arc::new(std::thread::sleep),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Replaces the backoff sleep, e.g. with a no-op in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    /// Every retry performed by this client so far.
    pub fn retry_log(&self) -> Vec<RetryEvent> {
        self.log.lock().unwrap().clone()
    }

    /// Posts `body`, retrying transient failures. Returns the raw reply and
    /// the retries it took.
    pub fn call(&self, body: &str) -> Result<(String, Vec<RetryEvent>), RemoteError> {
        let mut events = Vec::new();
        let mut attempt = 0u32;
        loop {
            let err = match self.transport.post(body, self.timeout) {
                Ok(reply) => return Ok((reply, events)),
                Err(e) => e,
            };
            let retryable = match &err {
                TransportError::Timeout | TransportError::Connect(_) => true,
                TransportError::Status { code, .. } => *code >= 500 || *code == 429,
            };
            if !retryable || attempt >= self.retry.max_retries {
                let attempts = attempt + 1;
                return Err(match err {
                    TransportError::Timeout => RemoteError::Timeout { attempts },
                    TransportError::Connect(message) => RemoteError::Transport { attempts, message },
                    TransportError::Status { code, body } => RemoteError::HttpStatus { status: code, body },
                });
            }
            let delay = self.retry.delay(attempt, rand::rng().random::<f64>());
            let event = RetryEvent {
                attempt,
                delay_ms: delay.as_millis() as u64,
                error: err.to_string(),
            };
            self.log.lock().unwrap().push(event.clone());
            events.push(event);
            (self.sleeper)(delay);
            attempt += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireFeedback {
    pub sentence_index: usize,
    pub h_type: HallucinationType,
    #[serde(default)]
    pub h_reason: Option<String>,
    pub severity: SeverityScore,
    #[serde(default)]
    pub severity_reason: Option<String>,
}

impl From<&SentenceFeedback> for WireFeedback {
    fn from(f: &SentenceFeedback) -> Self {
        Self {
            sentence_index: f.sentence_index,
            h_type: f.h_type,
            h_reason: f.h_reason.clone(),
            severity: f.severity,
            severity_reason: f.severity_reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorWireRequest {
    pub prompt: PromptRecord,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorWireReply {
    pub feedback: Vec<WireFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriterWireRequest {
    pub prompt: PromptRecord,
    pub sentences: Vec<String>,
    pub feedback: Vec<WireFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriterWireReply {
    pub sentences: Vec<String>,
}

fn malformed(reason: impl Into<String>, raw: &str) -> RemoteError {
    RemoteError::MalformedReply {
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

/// Validates a raw detector reply against the request it answers.
pub fn parse_detector_reply(req: &DetectorRequest, raw: &str) -> Result<DetectorReply, RemoteError> {
    let reply: DetectorWireReply = serde_json::from_str(raw).map_err(|e| malformed(e.to_string(), raw))?;
    let sentences = req.response.sentences();
    if reply.feedback.len() != sentences.len() {
        return Err(RemoteError::LengthMismatch {
            expected: sentences.len(),
            found: reply.feedback.len(),
        });
    }
    let feedback: Vec<SentenceFeedback> = reply
        .feedback
        .into_iter()
        .zip(sentences)
        .map(|(w, s)| SentenceFeedback {
            sentence_index: w.sentence_index,
            sentence_text: s.clone(),
            h_type: w.h_type,
            h_reason: w.h_reason,
            severity: w.severity,
            severity_reason: w.severity_reason,
        })
        .collect();
    let annotated = AnnotatedResponse {
        response: req.response.clone(),
        feedback,
    };
    let violations = validate_annotated(&annotated);
    if !violations.is_empty() {
        return Err(malformed(format!("feedback violates invariants: {violations:?}"), raw));
    }
    Ok(DetectorReply {
        feedback: annotated.feedback,
    })
}

pub fn parse_rewriter_reply(req: &RewriterRequest, raw: &str) -> Result<RewriterReply, RemoteError> {
    let reply: RewriterWireReply = serde_json::from_str(raw).map_err(|e| malformed(e.to_string(), raw))?;
    if reply.sentences.is_empty() {
        return Err(malformed("rewritten response has no sentences", raw));
    }
    let rewritten = ResponseRecord::from_sentences(req.prompt.prompt_id.clone(), reply.sentences)
        .map_err(|e| malformed(e.to_string(), raw))?;
    Ok(RewriterReply { rewritten })
}

pub fn detector_body(req: &DetectorRequest) -> String {
    serde_json::to_string(&DetectorWireRequest {
        prompt: req.prompt.clone(),
        sentences: req.response.sentences().to_vec(),
    })
    .expect("request serializes")
}

pub fn rewriter_body(req: &RewriterRequest) -> String {
    serde_json::to_string(&RewriterWireRequest {
        prompt: req.prompt.clone(),
        sentences: req.annotated.response.sentences().to_vec(),
        feedback: req.annotated.feedback.iter().map(WireFeedback::from).collect(),
    })
    .expect("request serializes")
}

/// Detection through a remote endpoint. Returns the validated reply and the
/// retries it took.
pub fn remote_detect(
    client: &RemoteClient,
    req: &DetectorRequest,
) -> Result<(DetectorReply, Vec<RetryEvent>), RemoteError> {
    let (raw, events) = client.call(&detector_body(req))?;
    Ok((parse_detector_reply(req, &raw)?, events))
}

pub fn remote_rewrite(
    client: &RemoteClient,
    req: &RewriterRequest,
) -> Result<(RewriterReply, Vec<RetryEvent>), RemoteError> {
    let (raw, events) = client.call(&rewriter_body(req))?;
    Ok((parse_rewriter_reply(req, &raw)?, events))
}

impl Detector for RemoteClient {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorReply, PipelineError> {
        Ok(remote_detect(self, req)?.0)
    }
}

impl Rewriter for RemoteClient {
    fn rewrite(&self, req: &RewriterRequest) -> Result<RewriterReply, PipelineError> {
        Ok(remote_rewrite(self, req)?.0)
    }
}
